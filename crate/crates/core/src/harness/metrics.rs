use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::featurizer::featurize_dialogue_lenient;
use crate::policy::TedModel;

use super::Result;

/// One scored turn of the prediction log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub dialogue_id: String,
    pub turn: usize,
    pub gold: String,
    pub predicted: String,
    pub score: f64,
    /// Gold label is part of the model's action vocabulary.
    pub known_gold: bool,
}

impl TurnRecord {
    pub fn correct(&self) -> bool {
        self.known_gold && self.gold == self.predicted
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub predicted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub full_dialogue_accuracy: f64,
    pub action_accuracy: f64,
    pub macro_f1: f64,
    pub per_label: BTreeMap<String, LabelStats>,
    pub n_dialogues: usize,
    pub n_turns: usize,
    pub n_unknown_gold: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl EvalReport {
    /// Micro action accuracy, full-dialogue accuracy and macro-F1 over
    /// labels with gold support.
    pub fn from_records(records: &[TurnRecord]) -> Self {
        let mut dialogues: BTreeMap<&str, bool> = BTreeMap::new();
        let mut tp: BTreeMap<&str, usize> = BTreeMap::new();
        let mut support: BTreeMap<&str, usize> = BTreeMap::new();
        let mut predicted: BTreeMap<&str, usize> = BTreeMap::new();
        let mut correct = 0;
        for r in records {
            let ok = r.correct();
            *dialogues.entry(&r.dialogue_id).or_insert(true) &= ok;
            *support.entry(&r.gold).or_default() += 1;
            *predicted.entry(&r.predicted).or_default() += 1;
            if ok {
                correct += 1;
                *tp.entry(&r.gold).or_default() += 1;
            }
        }
        let labels: BTreeSet<&str> = support.keys().chain(predicted.keys()).copied().collect();
        let per_label: BTreeMap<String, LabelStats> = labels
            .into_iter()
            .map(|l| {
                let t = tp.get(l).copied().unwrap_or(0);
                let s = support.get(l).copied().unwrap_or(0);
                let p = predicted.get(l).copied().unwrap_or(0);
                let precision = ratio(t, p);
                let recall = ratio(t, s);
                let f1 = if precision + recall == 0.0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                };
                (
                    l.to_string(),
                    LabelStats {
                        precision,
                        recall,
                        f1,
                        support: s,
                        predicted: p,
                    },
                )
            })
            .collect();
        let supported: Vec<f64> = per_label
            .values()
            .filter(|s| s.support > 0)
            .map(|s| s.f1)
            .collect();
        let n_full = dialogues.values().filter(|&&ok| ok).count();
        Self {
            full_dialogue_accuracy: ratio(n_full, dialogues.len()),
            action_accuracy: ratio(correct, records.len()),
            macro_f1: if supported.is_empty() {
                0.0
            } else {
                supported.iter().sum::<f64>() / supported.len() as f64
            },
            per_label,
            n_dialogues: dialogues.len(),
            n_turns: records.len(),
            n_unknown_gold: records.iter().filter(|r| !r.known_gold).count(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "dialogues               {}", self.n_dialogues);
        let _ = writeln!(out, "turns                   {}", self.n_turns);
        let _ = writeln!(out, "unknown gold labels     {}", self.n_unknown_gold);
        let _ = writeln!(out, "full-dialogue accuracy  {:.4}", self.full_dialogue_accuracy);
        let _ = writeln!(out, "action accuracy         {:.4}", self.action_accuracy);
        let _ = writeln!(out, "macro F1                {:.4}", self.macro_f1);
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<28} {:>9} {:>9} {:>9} {:>8} {:>9}",
            "label", "precision", "recall", "f1", "support", "predicted"
        );
        for (l, s) in &self.per_label {
            let _ = writeln!(
                out,
                "{:<28} {:>9.4} {:>9.4} {:>9.4} {:>8} {:>9}",
                l, s.precision, s.recall, s.f1, s.support, s.predicted
            );
        }
        out
    }
}

pub const LOG_HEADER: &str = "dialogue_id\tturn\tgold\tpredicted\tscore\tcorrect";

/// Tab-separated prediction log, one line per turn.
pub fn prediction_log(records: &[TurnRecord]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{:?}\t{}",
            r.dialogue_id,
            r.turn,
            r.gold,
            r.predicted,
            r.score,
            u8::from(r.correct())
        );
    }
    out
}

/// Teacher-forced predictions for every turn of every dialogue. Gold labels
/// outside the model's vocabulary count as errors.
pub fn predict_corpus(model: &TedModel, corpus: &Corpus) -> Result<Vec<TurnRecord>> {
    let mut records = Vec::with_capacity(corpus.n_turns());
    for d in &corpus.dialogues {
        if d.turns.is_empty() {
            continue;
        }
        let feats = featurize_dialogue_lenient(d, &model.vocab)?;
        let scores = model.turn_scores(&feats)?;
        for (t, (turn, f)) in d.turns.iter().zip(&feats).enumerate() {
            let top = &model.rank(scores.row(t))[0];
            records.push(TurnRecord {
                dialogue_id: d.id.clone(),
                turn: t,
                gold: turn.system_action.clone(),
                predicted: top.label.clone(),
                score: top.score,
                known_gold: f.action_target_index.is_some(),
            });
        }
    }
    Ok(records)
}

pub fn evaluate(model: &TedModel, corpus: &Corpus) -> Result<(EvalReport, Vec<TurnRecord>)> {
    let records = predict_corpus(model, corpus)?;
    Ok((EvalReport::from_records(&records), records))
}
