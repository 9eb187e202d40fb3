//! `key=value` text form of [`GenerationConfig`].
//!
//! ```text
//! n_dialogues=800
//! digression_length=1,3
//! domains=restaurant:location,people,cuisine,price;hotel:location,people,nights
//! slot_values.cuisine=italian,thai
//! chitchat=weather,joke
//! chitchat.weather.templates=what is the weather like|will it rain
//! chitchat.weather.response=it looks sunny today.
//! ```

use super::{ChitchatIntent, CorpusError, DomainSpec, GenerationConfig, Result};

fn invalid(key: &str, message: impl std::fmt::Display) -> CorpusError {
    CorpusError::InvalidConfig(format!("{key}: {message}"))
}

fn list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| invalid(key, e))
}

impl GenerationConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (key, value) = (key.trim(), value.trim());
        match key {
            "n_dialogues" => self.n_dialogues = num(key, value)?,
            "digression_probability" => self.digression_probability = num(key, value)?,
            "dont_care_probability" => self.dont_care_probability = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "digression_length" => {
                let parts = list(value);
                let [lo, hi] = parts.as_slice() else {
                    return Err(invalid(key, "expected <min>,<max>"));
                };
                self.digression_length = (num(key, lo)?, num(key, hi)?);
            }
            "domains" => {
                self.domains = value
                    .split(';')
                    .filter(|d| !d.trim().is_empty())
                    .map(|d| {
                        let (name, slots) = d
                            .split_once(':')
                            .ok_or_else(|| invalid(key, "expected <name>:<slot>,<slot>"))?;
                        Ok(DomainSpec {
                            name: name.trim().to_string(),
                            required_slots: list(slots),
                        })
                    })
                    .collect::<Result<_>>()?;
            }
            "chitchat" => {
                let names = list(value);
                let old = std::mem::take(&mut self.chitchat);
                self.chitchat = names
                    .into_iter()
                    .map(|n| {
                        old.iter().find(|c| c.name == n).cloned().unwrap_or(ChitchatIntent {
                            name: n,
                            user_templates: Vec::new(),
                            response: String::new(),
                        })
                    })
                    .collect();
            }
            _ => {
                if let Some(slot) = key.strip_prefix("slot_values.") {
                    self.slot_values.insert(slot.to_string(), list(value));
                } else if let Some(rest) = key.strip_prefix("chitchat.") {
                    let (name, field) = rest
                        .rsplit_once('.')
                        .ok_or_else(|| invalid(key, "expected chitchat.<name>.<field>"))?;
                    let idx = match self.chitchat.iter().position(|c| c.name == name) {
                        Some(i) => i,
                        None => {
                            self.chitchat.push(ChitchatIntent {
                                name: name.to_string(),
                                user_templates: Vec::new(),
                                response: String::new(),
                            });
                            self.chitchat.len() - 1
                        }
                    };
                    let c = &mut self.chitchat[idx];
                    match field {
                        "templates" => {
                            c.user_templates = value.split('|').map(|s| s.trim().to_string()).collect()
                        }
                        "response" => c.response = value.to_string(),
                        other => return Err(invalid(key, format!("unknown field {other:?}"))),
                    }
                } else {
                    return Err(invalid(key, "unknown key"));
                }
            }
        }
        Ok(())
    }

    /// Every field as `key=value` lines; [`Self::from_kv`] inverts it.
    pub fn to_kv(&self) -> String {
        let mut out = format!(
            "n_dialogues={}\ndigression_probability={:?}\ndigression_length={},{}\ndont_care_probability={:?}\nseed={}\n",
            self.n_dialogues,
            self.digression_probability,
            self.digression_length.0,
            self.digression_length.1,
            self.dont_care_probability,
            self.seed
        );
        let domains: Vec<String> = self
            .domains
            .iter()
            .map(|d| format!("{}:{}", d.name, d.required_slots.join(",")))
            .collect();
        out.push_str(&format!("domains={}\n", domains.join(";")));
        for (slot, values) in &self.slot_values {
            out.push_str(&format!("slot_values.{slot}={}\n", values.join(",")));
        }
        let names: Vec<&str> = self.chitchat.iter().map(|c| c.name.as_str()).collect();
        out.push_str(&format!("chitchat={}\n", names.join(",")));
        for c in &self.chitchat {
            out.push_str(&format!(
                "chitchat.{}.templates={}\nchitchat.{}.response={}\n",
                c.name,
                c.user_templates.join("|"),
                c.name,
                c.response
            ));
        }
        out
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
                .ok_or_else(|| invalid(&format!("line {}", n + 1), "expected key=value"))?;
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
    fn default_roundtrip() {
        let c = GenerationConfig::default();
        assert_eq!(GenerationConfig::from_kv(&c.to_kv()).unwrap(), c);
    }

    #[test]
    fn overrides() {
        let c = GenerationConfig::from_kv(
            "n_dialogues=3\ndigression_probability=0\ndomains=taxi:people\nchitchat=joke\n",
        )
        .unwrap();
        assert_eq!(c.n_dialogues, 3);
        assert_eq!(c.domains[0].name, "taxi");
        assert_eq!(c.chitchat.len(), 1);
        assert!(GenerationConfig::from_kv("bogus=1").is_err());
        assert!(GenerationConfig::from_kv("digression_length=2").is_err());
    }
}
