use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    Corpus, CorpusError, CorpusMetadata, Dialogue, Result, Turn, ANSWER_PREFIX, CHITCHAT_PREFIX,
    CONFIRM_PREFIX, DONT_CARE, QUESTION_PREFIX,
};

pub const GENERATOR_VERSION: &str = "ted-digression-gen/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    pub required_slots: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChitchatIntent {
    /// Intent name without the `chitchat_` prefix, e.g. `weather`.
    pub name: String,
    pub user_templates: Vec<String>,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub n_dialogues: usize,
    pub domains: Vec<DomainSpec>,
    /// Chance, per question, that the user digresses before answering.
    pub digression_probability: f64,
    /// Inclusive range of consecutive chit-chat turns in one digression.
    pub digression_length: (usize, usize),
    pub chitchat: Vec<ChitchatIntent>,
    pub slot_values: BTreeMap<String, Vec<String>>,
    pub dont_care_probability: f64,
    pub seed: u64,
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

const CHITCHAT_TABLE: &[(&str, &[&str], &str)] = &[
    (
        "weather",
        &["what is the weather like", "is it going to rain today"],
        "it looks sunny today.",
    ),
    (
        "name",
        &["what is your name", "who am i talking to"],
        "i am a booking assistant.",
    ),
    (
        "joke",
        &["tell me a joke", "say something funny"],
        "why did the chef quit? he ran out of thyme.",
    ),
    (
        "mood",
        &["how are you", "how is your day going"],
        "i am doing great, thanks for asking.",
    ),
    (
        "age",
        &["how old are you", "when were you born"],
        "i was launched last spring.",
    ),
    (
        "creator",
        &["who built you", "who made you"],
        "a small team of engineers built me.",
    ),
    (
        "hobby",
        &["what do you do for fun", "do you have any hobbies"],
        "i like reading menus and maps.",
    ),
    (
        "food",
        &["what is your favourite food", "do you like pizza"],
        "electricity is my favourite snack.",
    ),
    (
        "music",
        &["do you like music", "what music do you listen to"],
        "i enjoy a bit of jazz.",
    ),
    (
        "sports",
        &["do you watch football", "what sports do you follow"],
        "i cheer for every team equally.",
    ),
    (
        "movies",
        &["seen any good movies", "what is your favourite film"],
        "i have not been to the cinema yet.",
    ),
];

const SLOT_VALUE_TABLE: &[(&str, &[&str])] = &[
    ("location", &["north", "south", "east", "west", "centre"]),
    ("people", &["two", "three", "four", "five", "six"]),
    (
        "cuisine",
        &["italian", "chinese", "indian", "french", "thai", "mexican"],
    ),
    ("price", &["cheap", "moderate", "expensive"]),
    ("nights", &["one", "two", "three", "four", "five"]),
    ("stars", &["three", "four", "five"]),
];

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            n_dialogues: 800,
            domains: vec![
                DomainSpec {
                    name: "restaurant".into(),
                    required_slots: strings(&["location", "people", "cuisine", "price"]),
                },
                DomainSpec {
                    name: "hotel".into(),
                    required_slots: strings(&["location", "people", "nights"]),
                },
            ],
            digression_probability: 0.5,
            digression_length: (1, 3),
            chitchat: CHITCHAT_TABLE
                .iter()
                .map(|(name, user, response)| ChitchatIntent {
                    name: name.to_string(),
                    user_templates: strings(user),
                    response: response.to_string(),
                })
                .collect(),
            slot_values: SLOT_VALUE_TABLE
                .iter()
                .map(|(slot, values)| (slot.to_string(), strings(values)))
                .collect(),
            dont_care_probability: 0.1,
            seed: 42,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CorpusError::InvalidConfig(m));
        if self.n_dialogues == 0 {
            return bad("n_dialogues must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.digression_probability) {
            return bad(format!(
                "digression_probability {} outside [0, 1]",
                self.digression_probability
            ));
        }
        if !(0.0..=1.0).contains(&self.dont_care_probability) {
            return bad(format!(
                "dont_care_probability {} outside [0, 1]",
                self.dont_care_probability
            ));
        }
        let (lo, hi) = self.digression_length;
        if lo == 0 || lo > hi {
            return bad(format!("digression length range ({lo}, {hi}) is invalid"));
        }
        if self.domains.is_empty() {
            return bad("no domains configured".into());
        }
        if self.digression_probability > 0.0 && self.chitchat.is_empty() {
            return bad("digressions enabled but chit-chat pool is empty".into());
        }
        for c in &self.chitchat {
            if c.user_templates.is_empty() {
                return bad(format!("chit-chat intent {} has no user templates", c.name));
            }
        }
        for d in &self.domains {
            if d.required_slots.is_empty() {
                return Err(CorpusError::EmptySlots(d.name.clone()));
            }
            for s in &d.required_slots {
                if self.slot_values.get(s).is_none_or(Vec::is_empty) {
                    return bad(format!("slot {s} has no values"));
                }
            }
        }
        Ok(())
    }
}

pub fn question_action(slot: &str, domain: &str) -> String {
    format!("{QUESTION_PREFIX}{slot}_{domain}")
}

fn question_text(slot: &str, domain: &str) -> String {
    match slot {
        "location" => format!("which area should the {domain} be in?"),
        "people" => format!("how many people is the {domain} for?"),
        "cuisine" => "what kind of cuisine would you like?".into(),
        "price" => format!("what price range for the {domain}?"),
        "nights" => "how many nights will you stay?".into(),
        "stars" => format!("how many stars should the {domain} have?"),
        other => format!("what {other} would you like for the {domain}?"),
    }
}

fn inform_templates(slot: &str) -> &'static [&'static str] {
    match slot {
        "location" => &["in the {v}", "somewhere {v}", "the {v} please"],
        "people" => &["for {v} people", "{v} of us", "a table for {v}"],
        "cuisine" => &["{v} food", "i would like {v}", "something {v}"],
        "price" => &["{v} please", "something {v}", "a {v} one"],
        "nights" => &["{v} nights", "for {v} nights", "we stay {v} nights"],
        _ => &["{v}", "{v} please"],
    }
}

const DONT_CARE_TEXTS: &[&str] = &["i do not care", "any is fine", "it does not matter"];
const GREET_TEXTS: &[&str] = &["hi", "hello", "hey there", "good morning"];
const REQUEST_TEXTS: &[&str] = &[
    "i want to book a {d}",
    "can you help me find a {d}",
    "i am looking for a {d}",
    "please book me a {d}",
];
const ACK_TEXTS: &[&str] = &["ok", "i see", "ok great", "alright", "got it"];
const GREET_RESPONSE: &str = "hello! how can i help you?";

fn pick<'a, R: Rng>(rng: &mut R, items: &'a [&'a str]) -> &'a str {
    items.choose(rng).expect("template list is non-empty")
}

struct DialogueBuilder<'a> {
    cfg: &'a GenerationConfig,
    turns: Vec<Turn>,
}

impl DialogueBuilder<'_> {
    fn push(&mut self, user_text: String, intent: String, entities: BTreeMap<String, String>, action: String, system_text: String, cooperative: bool) {
        self.turns.push(Turn {
            user_text,
            user_intent: intent,
            user_entities: entities,
            system_action: action,
            system_text,
            cooperative,
        });
    }

    /// Chit-chat turns, each answered, then an acknowledgement that the
    /// system follows by repeating the pending question.
    fn digression<R: Rng>(&mut self, rng: &mut R, pending: &str, pending_text: &str) {
        let (lo, hi) = self.cfg.digression_length;
        let n = rng.random_range(lo..=hi);
        for _ in 0..n {
            let c = self.cfg.chitchat.choose(rng).expect("validated non-empty");
            let text = c.user_templates.choose(rng).expect("validated non-empty").clone();
            self.push(
                text,
                format!("{CHITCHAT_PREFIX}{}", c.name),
                BTreeMap::new(),
                format!("{ANSWER_PREFIX}{}", c.name),
                c.response.clone(),
                false,
            );
        }
        self.push(
            pick(rng, ACK_TEXTS).to_string(),
            "acknowledge".into(),
            BTreeMap::new(),
            pending.to_string(),
            pending_text.to_string(),
            false,
        );
    }
}

fn generate_dialogue<R: Rng>(cfg: &GenerationConfig, index: usize, rng: &mut R) -> Dialogue {
    let domain = cfg.domains.choose(rng).expect("validated non-empty");
    let d = domain.name.as_str();
    let mut b = DialogueBuilder {
        cfg,
        turns: Vec::new(),
    };
    b.push(
        pick(rng, GREET_TEXTS).to_string(),
        "greet".into(),
        BTreeMap::new(),
        "greet".into(),
        GREET_RESPONSE.into(),
        true,
    );
    let first = &domain.required_slots[0];
    b.push(
        pick(rng, REQUEST_TEXTS).replace("{d}", d),
        format!("request_{d}"),
        BTreeMap::new(),
        question_action(first, d),
        question_text(first, d),
        true,
    );
    for (i, slot) in domain.required_slots.iter().enumerate() {
        let pending = question_action(slot, d);
        let pending_text = question_text(slot, d);
        if rng.random_bool(cfg.digression_probability) {
            b.digression(rng, &pending, &pending_text);
        }
        let (value, text) = if rng.random_bool(cfg.dont_care_probability) {
            (DONT_CARE.to_string(), pick(rng, DONT_CARE_TEXTS).to_string())
        } else {
            let v = cfg.slot_values[slot].choose(rng).expect("validated").clone();
            let t = pick(rng, inform_templates(slot)).replace("{v}", &v);
            (v, t)
        };
        let (action, system_text) = match domain.required_slots.get(i + 1) {
            Some(next) => (question_action(next, d), question_text(next, d)),
            None => (
                format!("{CONFIRM_PREFIX}{d}"),
                format!("great, your {d} booking is confirmed."),
            ),
        };
        b.push(
            text,
            "inform".into(),
            BTreeMap::from([(slot.clone(), value)]),
            action,
            system_text,
            true,
        );
    }
    Dialogue {
        id: format!("{d}-{index:05}"),
        domain: d.to_string(),
        turns: b.turns,
    }
}

/// Generates `n_dialogues` slot-filling scripts (greet, request, one
/// question per required slot, confirm) with seeded digressions.
pub fn generate_corpus(cfg: &GenerationConfig) -> Result<Corpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dialogues = (0..cfg.n_dialogues)
        .map(|i| generate_dialogue(cfg, i, &mut rng))
        .collect();
    Ok(Corpus {
        metadata: CorpusMetadata {
            config: Some(cfg.clone()),
            seed: Some(cfg.seed),
            ..CorpusMetadata::default()
        },
        dialogues,
    })
}
