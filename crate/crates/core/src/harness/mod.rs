//! Evaluation, learning curves, attention export, robustness probes and
//! the interactive session used by the command-line tool.

pub mod analysis;
pub mod curve;
pub mod metrics;
pub mod render;
pub mod repl;

use thiserror::Error;

use crate::corpus::CorpusError;
use crate::featurizer::FeatureError;
use crate::policy::PolicyError;
use crate::tensor::TensorError;

pub use analysis::{digression_attention, digression_robustness, AttentionMass, Robustness};
pub use curve::{learning_curve, run_cell, run_cells, summarize, Cell, CurvePoint};
pub use metrics::{evaluate, prediction_log, EvalReport, TurnRecord};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

impl HarnessError {
    /// 1 usage, 2 data or validation, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => 1,
            HarnessError::Policy(PolicyError::NonFiniteLoss { .. })
            | HarnessError::Policy(PolicyError::Tensor(TensorError::NonFinite { .. })) => 3,
            _ => 2,
        }
    }
}
