//! Transformer embedding dialogue policy over dialogue turns, an LSTM
//! baseline with the same head, a synthetic digression corpus, and the
//! training and evaluation harness around them.

pub mod corpus;
pub mod featurizer;
pub mod harness;
pub mod policy;
pub mod tensor;

pub use corpus::{Corpus, Dialogue, Turn};
pub use featurizer::{FeatureMode, FeatureVocab, TurnFeatures};
pub use harness::{EvalReport, HarnessError as Error};
pub use policy::{EncoderKind, Prediction, TedConfig, TedModel};
pub use tensor::{Tape, Tensor};
