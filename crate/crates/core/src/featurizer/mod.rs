//! Turns dialogues into binary vectors.
//!
//! Modular mode encodes the user's intent and entity names; end-to-end mode
//! encodes bag-of-words of the utterance text. Both add two slot bits per
//! tracked slot (`[filled, dont_care]`) and a vector for the previous system
//! action.

mod vocab;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::corpus::{Dialogue, DONT_CARE};

pub use vocab::{tokenize, FeatureMode, FeatureVocab, SymbolIndex, VOCAB_VERSION};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("unknown {kind} {symbol:?}")]
    UnknownSymbol { kind: &'static str, symbol: String },
    #[error("vocab manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
}

pub type Result<T, E = FeatureError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SlotStatus {
    #[default]
    Absent,
    Filled,
    DontCare,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SlotValue {
    pub status: SlotStatus,
    pub last_value: String,
}

/// Per-slot status; the most recently observed value wins.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SlotState {
    slots: BTreeMap<String, SlotValue>,
}

impl SlotState {
    pub fn observe(&mut self, slot: &str, value: &str) {
        let status = if value == DONT_CARE {
            SlotStatus::DontCare
        } else {
            SlotStatus::Filled
        };
        self.slots.insert(
            slot.to_string(),
            SlotValue {
                status,
                last_value: value.to_string(),
            },
        );
    }

    pub fn status(&self, slot: &str) -> SlotStatus {
        self.slots.get(slot).map_or(SlotStatus::Absent, |v| v.status)
    }

    pub fn get(&self, slot: &str) -> Option<&SlotValue> {
        self.slots.get(slot)
    }

    /// Two bits per vocabulary slot, in slot-index order.
    pub fn encode(&self, vocab: &FeatureVocab) -> Vec<f64> {
        let mut v = vec![0.0; vocab.slot_dim()];
        for (i, slot) in vocab.slots.symbols().iter().enumerate() {
            match self.status(slot) {
                SlotStatus::Absent => {}
                SlotStatus::Filled => v[2 * i] = 1.0,
                SlotStatus::DontCare => v[2 * i + 1] = 1.0,
            }
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurnFeatures {
    pub user_vec: Vec<f64>,
    pub slot_vec: Vec<f64>,
    pub prev_action_vec: Vec<f64>,
    /// Position of the gold action in the action index, if known.
    pub action_target_index: Option<usize>,
    /// End-to-end mode only: tokens missing from the vocabulary.
    pub dropped_tokens: usize,
}

impl TurnFeatures {
    /// `user_vec ‖ slot_vec ‖ prev_action_vec`
    pub fn concatenated(&self) -> Vec<f64> {
        [
            self.user_vec.as_slice(),
            &self.slot_vec,
            &self.prev_action_vec,
        ]
        .concat()
    }
}

/// Incremental featurization of a dialogue in progress.
#[derive(Debug, Clone)]
pub struct DialogueTracker<'v> {
    vocab: &'v FeatureVocab,
    slots: SlotState,
    prev_action: Vec<f64>,
}

impl<'v> DialogueTracker<'v> {
    pub fn new(vocab: &'v FeatureVocab) -> Self {
        Self {
            vocab,
            slots: SlotState::default(),
            prev_action: vec![0.0; vocab.action_feature_dim()],
        }
    }

    pub fn slots(&self) -> &SlotState {
        &self.slots
    }

    /// Features for a user input; slots reflect the entities of this input.
    pub fn observe_user(
        &mut self,
        intent: &str,
        entities: &BTreeMap<String, String>,
        text: &str,
    ) -> Result<TurnFeatures> {
        let vocab = self.vocab;
        let mut dropped = 0;
        let user_vec = match vocab.mode {
            FeatureMode::Modular => {
                let mut v = vec![0.0; vocab.user_dim()];
                v[vocab.intents.require("intent", intent)?] = 1.0;
                for name in entities.keys() {
                    v[vocab.intents.len() + vocab.entities.require("entity", name)?] = 1.0;
                }
                v
            }
            FeatureMode::EndToEnd => {
                let (v, d) = vocab.bag_of_words(text);
                dropped = d;
                v
            }
        };
        for (slot, value) in entities {
            if vocab.slots.get(slot).is_some() {
                self.slots.observe(slot, value);
            } else if vocab.mode == FeatureMode::Modular {
                return Err(FeatureError::UnknownSymbol {
                    kind: "slot",
                    symbol: slot.clone(),
                });
            }
        }
        Ok(TurnFeatures {
            user_vec,
            slot_vec: self.slots.encode(vocab),
            prev_action_vec: self.prev_action.clone(),
            action_target_index: None,
            dropped_tokens: dropped,
        })
    }

    /// Records the system action that answered the last user input.
    pub fn observe_action(&mut self, label: &str) -> Result<()> {
        self.prev_action = self.vocab.action_features(label)?;
        Ok(())
    }

    /// As [`Self::observe_action`], but an unknown label becomes the
    /// bag-of-words of `text` (end-to-end) or an all-zero vector (modular).
    pub fn observe_action_lenient(&mut self, label: &str, text: &str) {
        self.prev_action = match self.vocab.action_features(label) {
            Ok(v) => v,
            Err(_) => match self.vocab.mode {
                FeatureMode::EndToEnd => self.vocab.bag_of_words(text).0,
                FeatureMode::Modular => vec![0.0; self.vocab.action_feature_dim()],
            },
        };
    }
}

/// Per-turn features with gold targets; errors on any unknown symbol.
pub fn featurize_dialogue(dialogue: &Dialogue, vocab: &FeatureVocab) -> Result<Vec<TurnFeatures>> {
    let mut tracker = DialogueTracker::new(vocab);
    dialogue
        .turns
        .iter()
        .map(|t| {
            let mut f = tracker.observe_user(&t.user_intent, &t.user_entities, &t.user_text)?;
            f.action_target_index = Some(vocab.actions.require("action", &t.system_action)?);
            tracker.observe_action(&t.system_action)?;
            Ok(f)
        })
        .collect()
}

/// Like [`featurize_dialogue`], but gold actions outside the vocabulary are
/// tolerated: their target is `None`.
pub fn featurize_dialogue_lenient(
    dialogue: &Dialogue,
    vocab: &FeatureVocab,
) -> Result<Vec<TurnFeatures>> {
    let mut tracker = DialogueTracker::new(vocab);
    dialogue
        .turns
        .iter()
        .map(|t| {
            let mut f = tracker.observe_user(&t.user_intent, &t.user_entities, &t.user_text)?;
            f.action_target_index = vocab.actions.get(&t.system_action);
            tracker.observe_action_lenient(&t.system_action, &t.system_text);
            Ok(f)
        })
        .collect()
}

/// Vector for a candidate system action: one-hot (modular) or bag-of-words
/// of its response text (end-to-end).
pub fn featurize_action(label: &str, vocab: &FeatureVocab) -> Result<Vec<f64>> {
    vocab.action_features(label)
}
