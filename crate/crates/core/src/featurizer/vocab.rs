use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use super::{FeatureError, Result};
use crate::corpus::Corpus;

pub const VOCAB_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureMode {
    Modular,
    EndToEnd,
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureMode::Modular => "modular",
            FeatureMode::EndToEnd => "e2e",
        })
    }
}

impl FromStr for FeatureMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "modular" => Ok(FeatureMode::Modular),
            "e2e" | "end_to_end" | "end-to-end" => Ok(FeatureMode::EndToEnd),
            other => Err(format!("unknown feature mode {other:?} (modular|e2e)")),
        }
    }
}

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(String::from)
        .collect()
}

/// Contiguous, lexicographically ordered symbol positions.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SymbolIndex {
    symbols: Vec<String>,
    positions: BTreeMap<String, usize>,
}

impl SymbolIndex {
    pub fn from_symbols<I: IntoIterator<Item = S>, S: Into<String>>(symbols: I) -> Self {
        let set: BTreeSet<String> = symbols.into_iter().map(Into::into).collect();
        let symbols: Vec<String> = set.into_iter().collect();
        let positions = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Self { symbols, positions }
    }

    pub fn get(&self, symbol: &str) -> Option<usize> {
        self.positions.get(symbol).copied()
    }

    pub(crate) fn require(&self, kind: &'static str, symbol: &str) -> Result<usize> {
        self.get(symbol).ok_or_else(|| FeatureError::UnknownSymbol {
            kind,
            symbol: symbol.to_string(),
        })
    }

    pub fn symbol(&self, index: usize) -> Option<&str> {
        self.symbols.get(index).map(String::as_str)
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureVocab {
    pub mode: FeatureMode,
    pub intents: SymbolIndex,
    pub entities: SymbolIndex,
    pub actions: SymbolIndex,
    pub slots: SymbolIndex,
    pub tokens: SymbolIndex,
    /// Response text per action label, from its first occurrence.
    pub action_texts: BTreeMap<String, String>,
}

impl FeatureVocab {
    pub fn build(corpus: &Corpus, mode: FeatureMode) -> Result<Self> {
        if corpus.is_empty() || corpus.n_turns() == 0 {
            return Err(FeatureError::EmptyCorpus);
        }
        let turns = || corpus.dialogues.iter().flat_map(|d| &d.turns);
        let mut action_texts = BTreeMap::new();
        for t in turns() {
            action_texts
                .entry(t.system_action.clone())
                .or_insert_with(|| t.system_text.clone());
        }
        let entity_names = || turns().flat_map(|t| t.user_entities.keys().cloned());
        let tokens = match mode {
            FeatureMode::Modular => SymbolIndex::default(),
            FeatureMode::EndToEnd => SymbolIndex::from_symbols(
                turns().flat_map(|t| {
                    let mut v = tokenize(&t.user_text);
                    v.extend(tokenize(&t.system_text));
                    v
                }),
            ),
        };
        Ok(Self {
            mode,
            intents: SymbolIndex::from_symbols(turns().map(|t| t.user_intent.clone())),
            entities: SymbolIndex::from_symbols(entity_names()),
            actions: SymbolIndex::from_symbols(turns().map(|t| t.system_action.clone())),
            slots: SymbolIndex::from_symbols(entity_names()),
            tokens,
            action_texts,
        })
    }

    pub fn user_dim(&self) -> usize {
        match self.mode {
            FeatureMode::Modular => self.intents.len() + self.entities.len(),
            FeatureMode::EndToEnd => self.tokens.len(),
        }
    }

    pub fn slot_dim(&self) -> usize {
        2 * self.slots.len()
    }

    pub fn action_feature_dim(&self) -> usize {
        match self.mode {
            FeatureMode::Modular => self.actions.len(),
            FeatureMode::EndToEnd => self.tokens.len(),
        }
    }

    /// Width of one concatenated turn vector.
    pub fn input_dim(&self) -> usize {
        self.user_dim() + self.slot_dim() + self.action_feature_dim()
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    /// Binary bag-of-words and the number of out-of-vocabulary tokens.
    pub fn bag_of_words(&self, text: &str) -> (Vec<f64>, usize) {
        let mut v = vec![0.0; self.tokens.len()];
        let mut dropped = 0;
        for tok in tokenize(text) {
            match self.tokens.get(&tok) {
                Some(i) => v[i] = 1.0,
                None => dropped += 1,
            }
        }
        (v, dropped)
    }

    pub fn action_features(&self, label: &str) -> Result<Vec<f64>> {
        let index = self.actions.require("action", label)?;
        Ok(match self.mode {
            FeatureMode::Modular => {
                let mut v = vec![0.0; self.actions.len()];
                v[index] = 1.0;
                v
            }
            FeatureMode::EndToEnd => self.bag_of_words(&self.action_texts[label]).0,
        })
    }

    /// Text manifest: one `[section]` per index, `position<TAB>symbol` lines.
    pub fn to_manifest(&self) -> String {
        let mut out = format!("ted-vocab {VOCAB_VERSION}\nmode {}\n", self.mode);
        for (name, index) in self.sections() {
            out.push_str(&format!("[{name}]\n"));
            for (i, s) in index.symbols().iter().enumerate() {
                out.push_str(&format!("{i}\t{s}\n"));
            }
        }
        out.push_str("[action_texts]\n");
        for (label, text) in &self.action_texts {
            out.push_str(&format!("{label}\t{text}\n"));
        }
        out
    }

    fn sections(&self) -> [(&'static str, &SymbolIndex); 5] {
        [
            ("intents", &self.intents),
            ("entities", &self.entities),
            ("actions", &self.actions),
            ("slots", &self.slots),
            ("tokens", &self.tokens),
        ]
    }

    pub fn from_manifest(text: &str) -> Result<Self> {
        let err = |line: usize, message: String| FeatureError::Manifest { line, message };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, l)) if l == format!("ted-vocab {VOCAB_VERSION}") => {}
            Some((n, l)) => return Err(err(n, format!("unsupported header {l:?}"))),
            None => return Err(err(1, "empty manifest".into())),
        }
        let mode = match lines.next() {
            Some((n, l)) => l
                .strip_prefix("mode ")
                .ok_or_else(|| err(n, "expected mode line".into()))?
                .parse()
                .map_err(|e| err(n, e))?,
            None => return Err(err(2, "missing mode line".into())),
        };
        let mut sections: BTreeMap<String, Vec<(String, String)>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (n, l) in lines {
            if let Some(name) = l.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
                current = Some(name.to_string());
                sections.entry(name.to_string()).or_default();
                continue;
            }
            let section = current.as_ref().ok_or_else(|| err(n, "entry before section".into()))?;
            let (k, v) = l
                .split_once('\t')
                .ok_or_else(|| err(n, "expected <key>\\t<value>".into()))?;
            if section != "action_texts" && k.parse::<usize>().ok() != Some(sections[section].len())
            {
                return Err(err(n, format!("non-contiguous index {k:?}")));
            }
            sections
                .get_mut(section)
                .expect("section inserted")
                .push((k.to_string(), v.to_string()));
        }
        let mut take = |name: &str| -> Result<SymbolIndex> {
            let entries = sections
                .remove(name)
                .ok_or_else(|| err(0, format!("missing section [{name}]")))?;
            let index = SymbolIndex::from_symbols(entries.iter().map(|(_, s)| s.clone()));
            if index.symbols().iter().zip(&entries).any(|(a, (_, b))| a != b) {
                return Err(err(0, format!("section [{name}] is not in lexicographic order")));
            }
            Ok(index)
        };
        let vocab = Self {
            mode,
            intents: take("intents")?,
            entities: take("entities")?,
            actions: take("actions")?,
            slots: take("slots")?,
            tokens: take("tokens")?,
            action_texts: sections
                .remove("action_texts")
                .unwrap_or_default()
                .into_iter()
                .collect(),
        };
        Ok(vocab)
    }

    /// Hex SHA-256 of the manifest.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_manifest().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::corpus::{Dialogue, Turn};

    fn corpus(texts: &[(&str, &str)]) -> Corpus {
        let turns = texts
            .iter()
            .map(|(intent, text)| Turn {
                user_text: text.to_string(),
                user_intent: intent.to_string(),
                user_entities: BTreeMap::new(),
                system_action: "confirm_x".into(),
                system_text: "".into(),
                cooperative: true,
            })
            .collect();
        Corpus::from_dialogues(vec![Dialogue {
            id: "a".into(),
            domain: "x".into(),
            turns,
        }])
    }

    #[test]
    fn intents_are_lexicographic() {
        let c = corpus(&[("inform", "a"), ("chitchat_weather", "b")]);
        let v = FeatureVocab::build(&c, FeatureMode::Modular).unwrap();
        assert_eq!(v.intents.symbols(), &["chitchat_weather", "inform"]);
        assert_eq!(v, FeatureVocab::build(&c, FeatureMode::Modular).unwrap());
    }

    #[test]
    fn tokenizer_splits_punctuation() {
        assert_eq!(tokenize("What price-range?"), vec!["what", "price", "range"]);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert_eq!(
            FeatureVocab::build(&Corpus::default(), FeatureMode::Modular),
            Err(FeatureError::EmptyCorpus)
        );
    }

    #[test]
    fn manifest_roundtrip_and_digest() {
        let c = corpus(&[("inform", "book a table"), ("greet", "a nice hotel")]);
        let v = FeatureVocab::build(&c, FeatureMode::EndToEnd).unwrap();
        let back = FeatureVocab::from_manifest(&v.to_manifest()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.digest(), v.digest());
        let m = FeatureVocab::build(&c, FeatureMode::Modular).unwrap();
        assert_ne!(m.digest(), v.digest());
    }

    #[test]
    fn manifest_rejects_bad_version() {
        assert!(matches!(
            FeatureVocab::from_manifest("ted-vocab 9\nmode modular\n"),
            Err(FeatureError::Manifest { line: 1, .. })
        ));
    }
}
