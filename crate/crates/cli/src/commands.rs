use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use ted_core::corpus::{self, split, validate_corpus, GenerationConfig};
use ted_core::featurizer::{featurize_dialogue_lenient, FeatureVocab};
use ted_core::harness::curve::{self, DEFAULT_SEEDS, DEFAULT_SIZES};
use ted_core::harness::render::{attention_svg, attention_tsv, turn_labels};
use ted_core::harness::{evaluate, prediction_log, repl, HarnessError, Result};
use ted_core::policy::{checkpoint, train_with_vocab, TedConfig};

use crate::ModelFlags;

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(suffix);
    PathBuf::from(p)
}

fn ted_config(flags: &ModelFlags) -> Result<TedConfig> {
    let mut cfg = match &flags.config {
        Some(p) => TedConfig::from_kv(&read(p)?).map_err(HarnessError::Policy)?,
        None => TedConfig::default(),
    };
    if let Some(s) = flags.seed {
        cfg.seed = s;
    }
    if let Some(e) = flags.encoder {
        cfg.encoder = e;
    }
    if let Some(m) = flags.mode {
        cfg.mode = m;
    }
    if let Some(n) = flags.max_history {
        cfg.max_history = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn generate(config: Option<PathBuf>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut cfg = match config {
        Some(p) => GenerationConfig::from_kv(&read(&p)?)?,
        None => GenerationConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let c = corpus::generate_corpus(&cfg)?;
    let report = validate_corpus(&c);
    if let Some(v) = report.violations.first() {
        return Err(HarnessError::Validation(format!(
            "{} violations, first in {}: {}",
            report.violations.len(),
            v.dialogue_id,
            v.message
        )));
    }
    corpus::save(&c, out)?;
    eprintln!(
        "wrote {} dialogues ({} turns, {} digressions) to {}",
        report.n_dialogues,
        report.n_turns,
        report.n_digressions,
        out.display()
    );
    Ok(())
}

pub fn train(corpus_path: &Path, flags: &ModelFlags, out: &Path) -> Result<()> {
    let cfg = ted_config(flags)?;
    let c = corpus::load(corpus_path)?;
    let vocab = FeatureVocab::build(&c, cfg.mode)?;
    let (model, history) = train_with_vocab(&c, vocab, &cfg, |e, l| {
        eprintln!("epoch {e:>4}  loss {l:.6}");
    })?;
    checkpoint::save(&model, out)?;
    let mut h = String::from("epoch\tloss\n");
    for (e, l) in history.iter().enumerate() {
        h.push_str(&format!("{e}\t{l:?}\n"));
    }
    write(&with_suffix(out, ".history.tsv"), h)?;
    eprintln!("wrote {} ({} encoder)", out.display(), cfg.encoder);
    Ok(())
}

pub fn eval(ckpt: &Path, corpus_path: &Path, out: Option<&Path>) -> Result<()> {
    let model = checkpoint::load(ckpt)?;
    let c = corpus::load(corpus_path)?;
    let (report, records) = evaluate(&model, &c)?;
    print!("{}", report.to_text());
    if let Some(prefix) = out {
        write(&with_suffix(prefix, ".json"), report.to_json())?;
        write(&with_suffix(prefix, ".txt"), report.to_text())?;
        write(&with_suffix(prefix, ".predictions.tsv"), prediction_log(&records))?;
    }
    Ok(())
}

pub fn curve(
    corpus_path: &Path,
    flags: &ModelFlags,
    sizes: Option<Vec<usize>>,
    seeds: Option<Vec<u64>>,
    train_fraction: f64,
    split_seed: u64,
    out: &Path,
) -> Result<()> {
    let cfg = ted_config(flags)?;
    let c = corpus::load(corpus_path)?;
    let (train, test) = split(&c, train_fraction, split_seed)?;
    let vocab = FeatureVocab::build(&c, cfg.mode)?;
    let sizes = sizes.unwrap_or_else(|| DEFAULT_SIZES.to_vec());
    let seeds = seeds.unwrap_or_else(|| DEFAULT_SEEDS.to_vec());
    if seeds.is_empty() || sizes.is_empty() {
        return Err(HarnessError::Usage("sizes and seeds must be non-empty".into()));
    }
    let points = curve::learning_curve(&train, &test, &vocab, &cfg, &sizes, &seeds)?;
    let table = curve::curve_table(&points);
    write(out, &table)?;
    print!("{table}");
    Ok(())
}

pub fn attention(ckpt: &Path, corpus_path: &Path, id: &str, out: &Path) -> Result<()> {
    let model = checkpoint::load(ckpt)?;
    let c = corpus::load(corpus_path)?;
    let d = c
        .find(id)
        .ok_or_else(|| HarnessError::Validation(format!("no dialogue {id:?} in corpus")))?;
    let feats = featurize_dialogue_lenient(d, &model.vocab)?;
    let maps = model.attention_maps(&feats)?;
    let labels = turn_labels(d);
    for (l, layer) in maps.maps.iter().enumerate() {
        for (h, m) in layer.iter().enumerate() {
            let stem = with_suffix(out, &format!(".layer{l}.head{h}"));
            write(&with_suffix(&stem, ".tsv"), attention_tsv(m, &labels))?;
            let title = format!("{id} layer {l} head {h}");
            write(&with_suffix(&stem, ".svg"), attention_svg(m, &labels, &title))?;
        }
        let mean = maps.head_mean(l);
        let stem = with_suffix(out, &format!(".layer{l}.mean"));
        write(&with_suffix(&stem, ".tsv"), attention_tsv(&mean, &labels))?;
        let title = format!("{id} layer {l} head mean");
        write(&with_suffix(&stem, ".svg"), attention_svg(&mean, &labels, &title))?;
    }
    eprintln!(
        "wrote {} layers x {} heads for {id}",
        maps.n_layers(),
        maps.n_heads()
    );
    Ok(())
}

pub fn repl(ckpt: &Path) -> Result<()> {
    let model = checkpoint::load(ckpt)?;
    eprintln!(
        "{} policy ({} mode); :reset, :history, :quit",
        model.config.encoder, model.vocab.mode
    );
    repl::run(&model, io::stdin().lock(), io::stdout().lock())
}
