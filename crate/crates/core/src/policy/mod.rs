//! Dialogue policy: a causal transformer (or LSTM) over dialogue turns,
//! dual embedding towers, dot-product similarity, negative-sampling loss,
//! training, ranked prediction and attention extraction.

mod batching;
pub mod checkpoint;
mod config;
mod loss;
mod model;
mod train;

use thiserror::Error;

use crate::featurizer::FeatureError;
use crate::tensor::TensorError;

pub use batching::{balanced_batches, label_counts, oversampling_factors};
pub use config::{EncoderKind, Layout, TedConfig, CONFIG_KEYS};
pub use loss::{sample_negatives, similarity, ted_loss, ted_loss_grad};
pub use model::{param_shapes, AttentionMaps, Prediction, Ranked, TedModel};
pub use train::{train, train_with_vocab, History};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("width mismatch: expected {expected}, found {found}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("prediction needs at least one turn")]
    EmptyPrefix,
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("cannot draw {k} negatives from {n_actions} actions")]
    TooManyNegatives { k: usize, n_actions: usize },
    #[error("non-finite value in {op} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        op: &'static str,
    },
    #[error("attention maps need a transformer encoder")]
    NoAttention,
    #[error("vocabulary digest mismatch: checkpoint has {expected}, vocabulary is {found}")]
    DigestMismatch { expected: String, found: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = PolicyError> = std::result::Result<T, E>;
