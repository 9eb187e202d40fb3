//! Measurements on trained policies over digression dialogues.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Result;
use crate::corpus::{Corpus, Dialogue, Turn, CHITCHAT_PREFIX, QUESTION_PREFIX};
use crate::featurizer::featurize_dialogue_lenient;
use crate::policy::TedModel;

/// Mean attention mass that task-question rows after a digression put on
/// chit-chat turns and on cooperative task turns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionMass {
    pub chitchat: f64,
    pub task: f64,
    pub n_dialogues: usize,
    pub n_rows: usize,
}

impl AttentionMass {
    pub fn ratio(&self) -> f64 {
        self.chitchat / self.task
    }
}

fn is_chitchat(t: &Turn) -> bool {
    t.user_intent.starts_with(CHITCHAT_PREFIX)
}

/// Rows are turns whose gold action is a question and that come after the
/// dialogue's first chit-chat turn; attention is averaged over layers and
/// heads, then over rows per dialogue, then over dialogues.
pub fn digression_attention(model: &TedModel, corpus: &Corpus) -> Result<AttentionMass> {
    let mut chitchat = 0.0;
    let mut task = 0.0;
    let mut n_dialogues = 0;
    let mut n_rows = 0;
    for d in &corpus.dialogues {
        let Some(first) = d.turns.iter().position(is_chitchat) else {
            continue;
        };
        let rows: Vec<usize> = (first + 1..d.turns.len())
            .filter(|&t| d.turns[t].system_action.starts_with(QUESTION_PREFIX))
            .collect();
        if rows.is_empty() {
            continue;
        }
        let feats = featurize_dialogue_lenient(d, &model.vocab)?;
        let maps = model.attention_maps(&feats)?;
        let n_maps = (maps.n_layers() * maps.n_heads()) as f64;
        let (mut cc, mut tk) = (0.0, 0.0);
        for &t in &rows {
            for layer in &maps.maps {
                for head in layer {
                    for (j, w) in head[t][..=t].iter().enumerate() {
                        if is_chitchat(&d.turns[j]) {
                            cc += w / n_maps;
                        } else if d.turns[j].cooperative {
                            tk += w / n_maps;
                        }
                    }
                }
            }
        }
        chitchat += cc / rows.len() as f64;
        task += tk / rows.len() as f64;
        n_dialogues += 1;
        n_rows += rows.len();
    }
    let n = n_dialogues.max(1) as f64;
    Ok(AttentionMass {
        chitchat: chitchat / n,
        task: task / n,
        n_dialogues,
        n_rows,
    })
}

/// How often inserting one chit-chat exchange changes the next task
/// prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Robustness {
    pub sites: usize,
    pub changed: usize,
}

impl Robustness {
    pub fn rate(&self) -> f64 {
        if self.sites == 0 {
            0.0
        } else {
            self.changed as f64 / self.sites as f64
        }
    }
}

/// One example turn per chit-chat intent known to the model, taken from
/// `corpus`, in intent order.
pub fn chitchat_pool(model: &TedModel, corpus: &Corpus) -> Vec<Turn> {
    let mut pool: BTreeMap<&str, &Turn> = BTreeMap::new();
    for t in corpus.dialogues.iter().flat_map(|d| &d.turns) {
        if is_chitchat(t)
            && model.vocab.intents.get(&t.user_intent).is_some()
            && model.vocab.actions.get(&t.system_action).is_some()
        {
            pool.entry(&t.user_intent).or_insert(t);
        }
    }
    pool.into_values().cloned().collect()
}

/// Insertion sites: after every question turn that the user answers
/// cooperatively in the next turn.
pub fn insertion_sites(d: &Dialogue) -> Vec<usize> {
    (0..d.turns.len().saturating_sub(1))
        .filter(|&i| {
            d.turns[i].system_action.starts_with(QUESTION_PREFIX) && d.turns[i + 1].cooperative
        })
        .collect()
}

/// For every insertion site `i`, inserts a seeded chit-chat exchange after
/// turn `i` and compares the top action predicted for the original turn
/// `i + 1` with and without the insertion.
pub fn digression_robustness(model: &TedModel, corpus: &Corpus, seed: u64) -> Result<Robustness> {
    let pool = chitchat_pool(model, corpus);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Robustness {
        sites: 0,
        changed: 0,
    };
    if pool.is_empty() {
        return Ok(out);
    }
    for d in &corpus.dialogues {
        let sites = insertion_sites(d);
        if sites.is_empty() {
            continue;
        }
        let base = model.predict_dialogue(&featurize_dialogue_lenient(d, &model.vocab)?)?;
        for i in sites {
            let extra = pool[rng.random_range(0..pool.len())].clone();
            let mut turns: Vec<Turn> = d.turns[..=i + 1].to_vec();
            turns.insert(i + 1, extra);
            let modified = Dialogue {
                id: d.id.clone(),
                domain: d.domain.clone(),
                turns,
            };
            let feats = featurize_dialogue_lenient(&modified, &model.vocab)?;
            let pred = model.predict(&feats)?;
            out.sites += 1;
            if pred.top().index != base[i + 1] {
                out.changed += 1;
            }
        }
    }
    Ok(out)
}
