//! Line-oriented conversation with a trained policy.
//!
//! Modular checkpoints read `intent` or `intent[slot=value,...]`; end-to-end
//! checkpoints read free text, optionally followed by `[slot=value,...]`.
//! Commands: `:reset`, `:history`, `:quit`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::featurizer::{DialogueTracker, FeatureError, FeatureMode, TurnFeatures};
use crate::policy::{Prediction, TedModel};

use super::Result;

pub const TOP_K: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedInput {
    pub intent: String,
    pub entities: BTreeMap<String, String>,
    pub text: String,
}

/// Splits `head[k=v,...]` into the head and its entities.
pub fn parse_input(line: &str, mode: FeatureMode) -> std::result::Result<ParsedInput, String> {
    let line = line.trim();
    let (head, entities) = match line.strip_suffix(']').and_then(|l| l.rsplit_once('[')) {
        Some((head, body)) => {
            let mut entities = BTreeMap::new();
            for pair in body.split(',').map(str::trim).filter(|p| !p.is_empty()) {
                let (k, v) = pair
                    .split_once('=')
                    .ok_or_else(|| format!("entity {pair:?} is not slot=value"))?;
                entities.insert(k.trim().to_string(), v.trim().to_string());
            }
            (head.trim(), entities)
        }
        None => (line, BTreeMap::new()),
    };
    if head.is_empty() {
        return Err("empty input".into());
    }
    Ok(match mode {
        FeatureMode::Modular => ParsedInput {
            intent: head.to_string(),
            entities,
            text: head.to_string(),
        },
        FeatureMode::EndToEnd => ParsedInput {
            intent: String::new(),
            entities,
            text: head.to_string(),
        },
    })
}

/// Conversation state over one model.
pub struct Session<'m> {
    model: &'m TedModel,
    tracker: DialogueTracker<'m>,
    features: Vec<TurnFeatures>,
    history: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    Prediction(Prediction),
    Message(String),
    Quit,
}

impl<'m> Session<'m> {
    pub fn new(model: &'m TedModel) -> Self {
        Self {
            model,
            tracker: DialogueTracker::new(&model.vocab),
            features: Vec::new(),
            history: Vec::new(),
        }
    }

    pub fn reset(&mut self) {
        *self = Session::new(self.model);
    }

    pub fn features(&self) -> &[TurnFeatures] {
        &self.features
    }

    /// Consumes one user turn and appends the top-ranked action as the
    /// system turn. On error the session is left unchanged.
    pub fn user_turn(&mut self, input: &ParsedInput) -> Result<Prediction> {
        let mut tracker = self.tracker.clone();
        let f = tracker.observe_user(&input.intent, &input.entities, &input.text)?;
        let mut features = self.features.clone();
        features.push(f);
        let prediction = self.model.predict(&features)?;
        let top = prediction.top().label.clone();
        tracker.observe_action(&top)?;
        self.tracker = tracker;
        self.features = features;
        self.history.push((input.text.clone(), top));
        Ok(prediction)
    }

    pub fn handle_line(&mut self, line: &str) -> Result<Reply> {
        match line.trim() {
            ":quit" | ":q" => return Ok(Reply::Quit),
            ":reset" => {
                self.reset();
                return Ok(Reply::Message("session reset".into()));
            }
            ":history" => {
                let mut out = String::new();
                for (i, (user, action)) in self.history.iter().enumerate() {
                    let _ = writeln!(out, "{i}: {user} -> {action}");
                }
                return Ok(Reply::Message(out.trim_end().to_string()));
            }
            "" => return Ok(Reply::Message(String::new())),
            _ => {}
        }
        let input = match parse_input(line, self.model.vocab.mode) {
            Ok(i) => i,
            Err(e) => return Ok(Reply::Message(e)),
        };
        match self.user_turn(&input) {
            Ok(p) => Ok(Reply::Prediction(p)),
            Err(super::HarnessError::Feature(FeatureError::UnknownSymbol { kind, symbol })) => {
                let known = match kind {
                    "intent" => self.model.vocab.intents.symbols().join(", "),
                    "entity" | "slot" => self.model.vocab.slots.symbols().join(", "),
                    _ => String::new(),
                };
                Ok(Reply::Message(format!(
                    "unknown {kind} {symbol:?}; known: {known}"
                )))
            }
            Err(e) => Err(e),
        }
    }
}

pub fn format_prediction(p: &Prediction) -> String {
    let mut out = String::new();
    for (i, r) in p.ranked.iter().take(TOP_K).enumerate() {
        let _ = writeln!(out, "  {}. {:<28} {:.6}", i + 1, r.label, r.score);
    }
    out
}

/// Reads lines until `:quit` or end of input.
pub fn run<R: BufRead, W: Write>(model: &TedModel, input: R, mut output: W) -> Result<()> {
    let mut session = Session::new(model);
    let io = |e: std::io::Error| super::HarnessError::Io {
        path: "<stdio>".into(),
        source: e,
    };
    for line in input.lines() {
        let line = line.map_err(io)?;
        match session.handle_line(&line)? {
            Reply::Quit => break,
            Reply::Message(m) if m.is_empty() => {}
            Reply::Message(m) => writeln!(output, "{m}").map_err(io)?,
            Reply::Prediction(p) => write!(output, "{}", format_prediction(&p)).map_err(io)?,
        }
    }
    output.flush().map_err(io)
}
