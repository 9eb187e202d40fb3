use std::fs;
use std::path::Path;

use super::{Corpus, CorpusError, CorpusMetadata, Dialogue, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Serializes to the line-delimited format: one metadata record, then one
/// dialogue per line, each line terminated by `\n`.
pub fn to_jsonl(corpus: &Corpus) -> String {
    let mut out = serde_json::to_string(&corpus.metadata).expect("metadata serializes");
    out.push('\n');
    for d in &corpus.dialogues {
        out.push_str(&serde_json::to_string(d).expect("dialogue serializes"));
        out.push('\n');
    }
    out
}

pub fn from_jsonl(text: &str) -> Result<Corpus> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, head) = lines.next().ok_or(CorpusError::Malformed {
        line: 1,
        message: "missing metadata record".into(),
    })?;
    let raw: serde_json::Value = serde_json::from_str(head).map_err(|e| CorpusError::Malformed {
        line: 1,
        message: e.to_string(),
    })?;
    let found = raw
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or(CorpusError::Malformed {
            line: 1,
            message: "metadata lacks format_version".into(),
        })?;
    if found != FORMAT_VERSION as u64 {
        return Err(CorpusError::VersionMismatch {
            found: found as u32,
            expected: FORMAT_VERSION,
        });
    }
    let metadata: CorpusMetadata =
        serde_json::from_value(raw).map_err(|e| CorpusError::Malformed {
            line: 1,
            message: e.to_string(),
        })?;
    let mut dialogues = Vec::new();
    for (line, text) in lines {
        if text.trim().is_empty() {
            continue;
        }
        let d: Dialogue = serde_json::from_str(text).map_err(|e| CorpusError::Malformed {
            line,
            message: e.to_string(),
        })?;
        dialogues.push(d);
    }
    Ok(Corpus {
        metadata,
        dialogues,
    })
}

pub fn save(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_jsonl(corpus)).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_jsonl(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, GenerationConfig};

    #[test]
    fn roundtrip_single_dialogue() {
        let c = generate_corpus(&GenerationConfig {
            n_dialogues: 1,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(from_jsonl(&to_jsonl(&c)).unwrap(), c);
    }

    #[test]
    fn missing_field_names_line() {
        let c = generate_corpus(&GenerationConfig {
            n_dialogues: 2,
            ..Default::default()
        })
        .unwrap();
        let text = to_jsonl(&c);
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut v: serde_json::Value = serde_json::from_str(&lines[2]).unwrap();
        v["turns"][0].as_object_mut().unwrap().remove("system_action");
        lines[2] = v.to_string();
        let err = from_jsonl(&lines.join("\n")).unwrap_err();
        match err {
            CorpusError::Malformed { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("system_action"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn version_mismatch() {
        let text = "{\"format_version\":7,\"generator_version\":\"x\",\"config\":null,\"seed\":null}\n";
        assert!(matches!(
            from_jsonl(text),
            Err(CorpusError::VersionMismatch { found: 7, .. })
        ));
    }
}
