use std::collections::BTreeSet;

use serde::Serialize;

use super::{Corpus, CONFIRM_PREFIX, QUESTION_PREFIX};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub dialogue_id: String,
    pub turn_index: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub warnings: Vec<String>,
    pub n_dialogues: usize,
    pub n_turns: usize,
    /// Number of maximal runs of non-cooperative turns.
    pub n_digressions: usize,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks structure and the digression rule: once a run of non-cooperative
/// turns ends, its last system action must repeat the pending question, and
/// no non-cooperative turn may ask a different question.
pub fn validate_corpus(corpus: &Corpus) -> ValidationReport {
    let mut report = ValidationReport {
        n_dialogues: corpus.len(),
        n_turns: corpus.n_turns(),
        ..Default::default()
    };
    if corpus.is_empty() {
        report.warnings.push("empty".into());
        return report;
    }
    let mut seen = BTreeSet::new();
    let mut violations = Vec::new();
    let mut n_digressions = 0;
    for d in &corpus.dialogues {
        let mut flag = |turn: Option<usize>, message: String| {
            violations.push(Violation {
                dialogue_id: d.id.clone(),
                turn_index: turn,
                message,
            })
        };
        if !seen.insert(d.id.as_str()) {
            flag(None, format!("duplicate dialogue id {:?}", d.id));
        }
        let Some(last) = d.turns.last() else {
            flag(None, "dialogue has no turns".into());
            continue;
        };
        if !last.system_action.starts_with(CONFIRM_PREFIX) {
            flag(
                Some(d.turns.len() - 1),
                format!("final action {:?} is not a confirmation", last.system_action),
            );
        }

        let mut pending: Option<&str> = None;
        for (i, t) in d.turns.iter().enumerate() {
            if t.user_intent.is_empty() || t.system_action.is_empty() {
                flag(Some(i), "empty user intent or system action".into());
            }
            if t.cooperative {
                if t.system_action.starts_with(QUESTION_PREFIX) {
                    pending = Some(&t.system_action);
                }
                continue;
            }
            if !t.user_entities.is_empty() {
                flag(Some(i), "non-cooperative turn carries entities".into());
            }
            let starts_run = i == 0 || d.turns[i - 1].cooperative;
            if starts_run {
                n_digressions += 1;
            }
            let closes_run = d.turns.get(i + 1).is_none_or(|n| n.cooperative);
            let Some(question) = pending else {
                flag(Some(i), "digression before any question was asked".into());
                continue;
            };
            let asks_other =
                t.system_action.starts_with(QUESTION_PREFIX) && t.system_action != question;
            if asks_other || (closes_run && t.system_action != question) {
                flag(
                    Some(i),
                    format!(
                        "expected the pending question {question:?} after the digression, got {:?}",
                        t.system_action
                    ),
                );
            }
        }
    }
    report.violations = violations;
    report.n_digressions = n_digressions;
    report
}
