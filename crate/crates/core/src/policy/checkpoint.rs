//! Single-file checkpoints: a text manifest (version, config, vocabulary
//! digest, parameter table) followed by raw little-endian f64 arrays. The
//! vocabulary manifest is stored next to it as `<path>.vocab`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::model::{param_shapes, TedModel};
use super::{PolicyError, Result, TedConfig};
use crate::featurizer::FeatureVocab;
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "ted-checkpoint";
const END: &str = "end\n";

pub fn vocab_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".vocab");
    PathBuf::from(p)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PolicyError + '_ {
    move |source| PolicyError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn bad(message: impl Into<String>) -> PolicyError {
    PolicyError::Checkpoint(message.into())
}

pub fn to_bytes(model: &TedModel) -> Vec<u8> {
    let mut head = format!(
        "{MAGIC} {CHECKPOINT_VERSION}\nvocab_digest {}\n",
        model.vocab.digest()
    );
    for line in model.config.to_kv().lines() {
        head.push_str(&format!("config {line}\n"));
    }
    let mut offset = 0;
    for (name, t) in model.params() {
        let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        head.push_str(&format!("param {name} {} {offset}\n", shape.join("x")));
        offset += 8 * t.numel();
    }
    head.push_str(END);
    let mut out = head.into_bytes();
    for t in model.params().values() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parses checkpoint bytes against the vocabulary they were trained with.
pub fn from_bytes(bytes: &[u8], vocab: FeatureVocab) -> Result<TedModel> {
    let end = bytes
        .windows(END.len() + 1)
        .position(|w| w[0] == b'\n' && &w[1..] == END.as_bytes())
        .map(|p| p + 1 + END.len())
        .ok_or_else(|| bad("manifest terminator not found"))?;
    let head = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("manifest is not utf-8"))?;
    let payload = &bytes[end..];
    let mut lines = head.lines();
    if lines.next() != Some(&format!("{MAGIC} {CHECKPOINT_VERSION}")) {
        return Err(bad("unsupported checkpoint header"));
    }
    let mut digest = None;
    let mut config_text = String::new();
    let mut table = Vec::new();
    for line in lines {
        let mut parts = line.splitn(2, ' ');
        match (parts.next(), parts.next()) {
            (Some("vocab_digest"), Some(d)) => digest = Some(d.to_string()),
            (Some("config"), Some(kv)) => {
                config_text.push_str(kv);
                config_text.push('\n');
            }
            (Some("param"), Some(rest)) => {
                let f: Vec<&str> = rest.split(' ').collect();
                if f.len() != 3 {
                    return Err(bad(format!("bad param line {line:?}")));
                }
                let shape = f[1]
                    .split('x')
                    .map(|s| s.parse::<usize>().map_err(|_| bad(format!("bad shape {:?}", f[1]))))
                    .collect::<Result<Vec<_>>>()?;
                let offset: usize = f[2].parse().map_err(|_| bad(format!("bad offset {:?}", f[2])))?;
                table.push((f[0].to_string(), shape, offset));
            }
            (Some("end"), None) => break,
            _ => return Err(bad(format!("unexpected manifest line {line:?}"))),
        }
    }
    let found = vocab.digest();
    let expected = digest.ok_or_else(|| bad("missing vocab_digest"))?;
    if expected != found {
        return Err(PolicyError::DigestMismatch { expected, found });
    }
    let config = TedConfig::from_kv(&config_text)?;
    if config.mode != vocab.mode {
        return Err(bad("config mode does not match the vocabulary"));
    }
    let expected_shapes: BTreeMap<String, Vec<usize>> =
        param_shapes(&config, &vocab).into_iter().collect();
    if table.len() != expected_shapes.len() {
        return Err(bad(format!(
            "{} parameters listed, configuration needs {}",
            table.len(),
            expected_shapes.len()
        )));
    }
    let mut model = TedModel::new(config, vocab)?;
    for (name, shape, offset) in table {
        match expected_shapes.get(&name) {
            Some(s) if *s == shape => {}
            Some(s) => {
                return Err(bad(format!("{name}: shape {shape:?} differs from {s:?}")));
            }
            None => return Err(bad(format!("unexpected parameter {name}"))),
        }
        let n: usize = shape.iter().product();
        let bytes = payload
            .get(offset..offset + 8 * n)
            .ok_or_else(|| bad(format!("{name}: payload truncated")))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        model.set_param(&name, Tensor::new(&shape, data)?)?;
    }
    Ok(model)
}

/// Writes the checkpoint and its vocabulary manifest.
pub fn save(model: &TedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(model)).map_err(io_err(path))?;
    let vp = vocab_path(path);
    fs::write(&vp, model.vocab.to_manifest()).map_err(io_err(&vp))
}

pub fn load(path: impl AsRef<Path>) -> Result<TedModel> {
    let path = path.as_ref();
    let vp = vocab_path(path);
    let text = fs::read_to_string(&vp).map_err(io_err(&vp))?;
    let vocab = FeatureVocab::from_manifest(&text)?;
    let bytes = fs::read(path).map_err(io_err(path))?;
    from_bytes(&bytes, vocab)
}
