//! Task-oriented dialogues with chit-chat digressions: data model,
//! generator, validator, train/test split and the line-delimited file format.
//!
//! Action labels follow a naming convention the validator relies on:
//! `ask_<slot>_<domain>` for task questions, `confirm_<domain>` for the
//! closing action and `answer_<chitchat intent>` for chit-chat responses.

mod generate;
mod io;
mod kv;
mod validate;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use generate::{generate_corpus, ChitchatIntent, DomainSpec, GenerationConfig, GENERATOR_VERSION};
pub use io::{from_jsonl, load, save, to_jsonl, FORMAT_VERSION};
pub use validate::{validate_corpus, ValidationReport, Violation};

pub const QUESTION_PREFIX: &str = "ask_";
pub const CONFIRM_PREFIX: &str = "confirm_";
pub const ANSWER_PREFIX: &str = "answer_";
pub const CHITCHAT_PREFIX: &str = "chitchat_";
pub const DONT_CARE: &str = "dont_care";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
    #[error("domain {0:?} has no required slots")]
    EmptySlots(String),
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("unsupported corpus format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("split needs at least 2 dialogues, corpus has {0}")]
    TooSmall(usize),
    #[error("train fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub user_text: String,
    pub user_intent: String,
    pub user_entities: BTreeMap<String, String>,
    pub system_action: String,
    pub system_text: String,
    pub cooperative: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub domain: String,
    pub turns: Vec<Turn>,
}

impl Dialogue {
    /// True if any turn is non-cooperative.
    pub fn has_digression(&self) -> bool {
        self.turns.iter().any(|t| !t.cooperative)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMetadata {
    pub format_version: u32,
    pub generator_version: String,
    pub config: Option<GenerationConfig>,
    pub seed: Option<u64>,
}

impl Default for CorpusMetadata {
    fn default() -> Self {
        Self {
            format_version: FORMAT_VERSION,
            generator_version: GENERATOR_VERSION.to_string(),
            config: None,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub metadata: CorpusMetadata,
    pub dialogues: Vec<Dialogue>,
}

impl Corpus {
    pub fn from_dialogues(dialogues: Vec<Dialogue>) -> Self {
        Self {
            metadata: CorpusMetadata::default(),
            dialogues,
        }
    }

    pub fn len(&self) -> usize {
        self.dialogues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dialogues.is_empty()
    }

    pub fn n_turns(&self) -> usize {
        self.dialogues.iter().map(|d| d.turns.len()).sum()
    }

    pub fn find(&self, id: &str) -> Option<&Dialogue> {
        self.dialogues.iter().find(|d| d.id == id)
    }

    pub fn action_labels(&self) -> BTreeSet<&str> {
        self.dialogues
            .iter()
            .flat_map(|d| d.turns.iter().map(|t| t.system_action.as_str()))
            .collect()
    }

    /// Copy holding the first `n` dialogues.
    pub fn take(&self, n: usize) -> Corpus {
        Corpus {
            metadata: self.metadata.clone(),
            dialogues: self.dialogues.iter().take(n).cloned().collect(),
        }
    }

    /// Copy with dialogues shuffled by `seed`.
    pub fn shuffled(&self, seed: u64) -> Corpus {
        let mut dialogues = self.dialogues.clone();
        dialogues.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Corpus {
            metadata: self.metadata.clone(),
            dialogues,
        }
    }
}

/// Dialogue-level shuffle followed by a disjoint partition of
/// `ceil(n * train_fraction)` train dialogues and the remainder.
pub fn split(corpus: &Corpus, train_fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CorpusError::InvalidFraction(train_fraction));
    }
    let n = corpus.len();
    if n < 2 {
        return Err(CorpusError::TooSmall(n));
    }
    // keep both sides non-empty
    let n_train = ((n as f64 * train_fraction).ceil() as usize).clamp(1, n - 1);
    let mut shuffled = corpus.shuffled(seed).dialogues;
    let test = shuffled.split_off(n_train);
    let part = |dialogues| Corpus {
        metadata: corpus.metadata.clone(),
        dialogues,
    };
    Ok((part(shuffled), part(test)))
}
