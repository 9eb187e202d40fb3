use std::fmt;
use std::str::FromStr;

use super::{PolicyError, Result};
use crate::featurizer::FeatureMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EncoderKind {
    Transformer,
    Lstm,
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::Transformer => "transformer",
            EncoderKind::Lstm => "lstm",
        })
    }
}

impl FromStr for EncoderKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "transformer" | "ted" => Ok(EncoderKind::Transformer),
            "lstm" => Ok(EncoderKind::Lstm),
            other => Err(format!("unknown encoder {other:?} (transformer|lstm)")),
        }
    }
}

/// How a turn becomes encoder positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layout {
    /// One position per turn holding `user ‖ slots ‖ previous action`.
    Concatenated,
    /// Two positions per turn: the previous action, then the user input and
    /// slots. The encoder output is read at the user position.
    Interleaved,
}

impl Layout {
    pub fn positions_per_turn(self) -> usize {
        match self {
            Layout::Concatenated => 1,
            Layout::Interleaved => 2,
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layout::Concatenated => "concatenated",
            Layout::Interleaved => "interleaved",
        })
    }
}

impl FromStr for Layout {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "concatenated" => Ok(Layout::Concatenated),
            "interleaved" => Ok(Layout::Interleaved),
            other => Err(format!("unknown layout {other:?} (concatenated|interleaved)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TedConfig {
    pub embed_dim: usize,
    pub width: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ff_width: usize,
    /// Number of most recent turns visible at each prediction.
    pub max_history: usize,
    pub n_negatives: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub encoder: EncoderKind,
    pub mode: FeatureMode,
    pub layout: Layout,
    /// Drop probability on feed-forward activations and dialogue states
    /// during training; 0 disables dropout.
    pub dropout: f64,
}

impl Default for TedConfig {
    fn default() -> Self {
        Self {
            embed_dim: 20,
            width: 128,
            n_layers: 1,
            n_heads: 4,
            ff_width: 256,
            max_history: 10,
            n_negatives: 20,
            batch_size: 8,
            epochs: 10,
            learning_rate: 1e-3,
            seed: 0,
            encoder: EncoderKind::Transformer,
            mode: FeatureMode::Modular,
            layout: Layout::Concatenated,
            dropout: 0.0,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "embed_dim",
    "width",
    "n_layers",
    "n_heads",
    "ff_width",
    "max_history",
    "n_negatives",
    "batch_size",
    "epochs",
    "learning_rate",
    "seed",
    "encoder",
    "mode",
    "layout",
    "dropout",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| PolicyError::Config(format!("{key}: {e}")))
}

impl TedConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PolicyError::Config(m.to_string()));
        if self.embed_dim == 0 || self.width == 0 || self.ff_width == 0 {
            return bad("embed_dim, width and ff_width must be positive");
        }
        if self.n_layers == 0 {
            return bad("n_layers must be >= 1");
        }
        if self.n_heads == 0 || self.width % self.n_heads != 0 {
            return bad("width must be divisible by n_heads");
        }
        if self.max_history == 0 {
            return bad("max_history must be >= 1");
        }
        if self.n_negatives == 0 {
            return bad("n_negatives must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "embed_dim" => self.embed_dim = parse(key, v)?,
            "width" => self.width = parse(key, v)?,
            "n_layers" => self.n_layers = parse(key, v)?,
            "n_heads" => self.n_heads = parse(key, v)?,
            "ff_width" => self.ff_width = parse(key, v)?,
            "max_history" => self.max_history = parse(key, v)?,
            "n_negatives" => self.n_negatives = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "encoder" => self.encoder = parse(key, v)?,
            "mode" => self.mode = parse(key, v)?,
            "layout" => self.layout = parse(key, v)?,
            "dropout" => self.dropout = parse(key, v)?,
            other => return Err(PolicyError::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "embed_dim" => self.embed_dim.to_string(),
            "width" => self.width.to_string(),
            "n_layers" => self.n_layers.to_string(),
            "n_heads" => self.n_heads.to_string(),
            "ff_width" => self.ff_width.to_string(),
            "max_history" => self.max_history.to_string(),
            "n_negatives" => self.n_negatives.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "epochs" => self.epochs.to_string(),
            "learning_rate" => format!("{:?}", self.learning_rate),
            "seed" => self.seed.to_string(),
            "encoder" => self.encoder.to_string(),
            "mode" => self.mode.to_string(),
            "layout" => self.layout.to_string(),
            "dropout" => format!("{:?}", self.dropout),
            _ => return None,
        })
    }

    /// `key=value` lines for every field, in [`CONFIG_KEYS`] order.
    pub fn to_kv(&self) -> String {
        CONFIG_KEYS
            .iter()
            .map(|k| format!("{k}={}\n", self.get(k).expect("known key")))
            .collect()
    }

    /// Defaults overridden by `key=value` lines; `#` starts a comment.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| PolicyError::Config(format!("line {}: expected key=value", n + 1)))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_roundtrip() {
        let mut c = TedConfig::default();
        c.encoder = EncoderKind::Lstm;
        c.learning_rate = 0.0025;
        c.layout = Layout::Interleaved;
        assert_eq!(TedConfig::from_kv(&c.to_kv()).unwrap(), c);
    }

    #[test]
    fn rejects_indivisible_heads_and_unknown_keys() {
        assert!(TedConfig::from_kv("width=10\nn_heads=4").is_err());
        assert!(TedConfig::from_kv("colour=blue").is_err());
        assert!(TedConfig::from_kv("max_history=0").is_err());
        assert!(TedConfig::from_kv("# comment\nseed = 7").unwrap().seed == 7);
    }
}
