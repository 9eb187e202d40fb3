use std::fmt::Write as _;

use rayon::prelude::*;

use super::metrics::{evaluate, EvalReport};
use super::{HarnessError, Result};
use crate::corpus::Corpus;
use crate::featurizer::FeatureVocab;
use crate::policy::{train_with_vocab, EncoderKind, History, TedConfig, TedModel};

pub const DEFAULT_SIZES: &[usize] = &[25, 50, 100, 200, 400, 600];
pub const DEFAULT_SEEDS: &[u64] = &[0, 1, 2];

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub encoder: EncoderKind,
    pub train_size: usize,
    /// Full-dialogue accuracy per seed, in seed order.
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// One trained-and-evaluated (encoder, size, seed) job.
#[derive(Debug, Clone)]
pub struct Cell {
    pub encoder: EncoderKind,
    pub train_size: usize,
    pub seed: u64,
    pub model: TedModel,
    pub history: History,
    pub report: EvalReport,
}

/// Sample mean and standard deviation (`n - 1` denominator, 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trains on the first `size` dialogues of the train set shuffled by `seed`
/// and evaluates on `test`.
pub fn run_cell(
    train: &Corpus,
    test: &Corpus,
    vocab: &FeatureVocab,
    base: &TedConfig,
    encoder: EncoderKind,
    size: usize,
    seed: u64,
) -> Result<Cell> {
    if size == 0 || size > train.len() {
        return Err(HarnessError::Usage(format!(
            "train size {size} outside 1..={}",
            train.len()
        )));
    }
    let subset = train.shuffled(seed).take(size);
    let config = TedConfig {
        encoder,
        seed,
        ..base.clone()
    };
    let (model, history) = train_with_vocab(&subset, vocab.clone(), &config, |_, _| {})?;
    let (report, _) = evaluate(&model, test)?;
    Ok(Cell {
        encoder,
        train_size: size,
        seed,
        model,
        history,
        report,
    })
}

/// All (encoder, size, seed) cells, run in parallel and returned in
/// (encoder, size, seed) order.
pub fn run_cells(
    train: &Corpus,
    test: &Corpus,
    vocab: &FeatureVocab,
    base: &TedConfig,
    encoders: &[EncoderKind],
    sizes: &[usize],
    seeds: &[u64],
) -> Result<Vec<Cell>> {
    if let Some(&s) = sizes.iter().find(|&&s| s == 0 || s > train.len()) {
        return Err(HarnessError::Usage(format!(
            "train size {s} outside 1..={}",
            train.len()
        )));
    }
    let jobs: Vec<(EncoderKind, usize, u64)> = encoders
        .iter()
        .flat_map(|&e| {
            sizes
                .iter()
                .flat_map(move |&n| seeds.iter().map(move |&s| (e, n, s)))
        })
        .collect();
    jobs.par_iter()
        .map(|&(e, n, s)| run_cell(train, test, vocab, base, e, n, s))
        .collect()
}

/// Aggregates cells into one point per (encoder, size).
pub fn summarize(cells: &[Cell]) -> Vec<CurvePoint> {
    let mut points: Vec<CurvePoint> = Vec::new();
    for c in cells {
        let v = c.report.full_dialogue_accuracy;
        match points
            .iter_mut()
            .find(|p| p.encoder == c.encoder && p.train_size == c.train_size)
        {
            Some(p) => p.values.push(v),
            None => points.push(CurvePoint {
                encoder: c.encoder,
                train_size: c.train_size,
                values: vec![v],
                mean: 0.0,
                std: 0.0,
            }),
        }
    }
    for p in &mut points {
        (p.mean, p.std) = mean_std(&p.values);
    }
    points
}

pub fn learning_curve(
    train: &Corpus,
    test: &Corpus,
    vocab: &FeatureVocab,
    base: &TedConfig,
    sizes: &[usize],
    seeds: &[u64],
) -> Result<Vec<CurvePoint>> {
    let encoders = [EncoderKind::Transformer, EncoderKind::Lstm];
    let cells = run_cells(train, test, vocab, base, &encoders, sizes, seeds)?;
    Ok(summarize(&cells))
}

pub const CURVE_HEADER: &str = "encoder\ttrain_size\tn_seeds\tmean\tstd\tvalues";

pub fn curve_table(points: &[CurvePoint]) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for p in points {
        let values: Vec<String> = p.values.iter().map(|v| format!("{v:.6}")).collect();
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{:.6}\t{:.6}\t{}",
            p.encoder,
            p.train_size,
            p.values.len(),
            p.mean,
            p.std,
            values.join(",")
        );
    }
    out
}

/// Spearman rank correlation with average ranks for ties; `None` when
/// either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, _) = mean_std(&rx);
    let (my, _) = mean_std(&ry);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn std_is_zero_for_one_seed() {
        assert_eq!(mean_std(&[0.7]), (0.7, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn spearman_handles_ties() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 2.0], &[5.0, 5.0]), None);
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[0.5, 1.0, 1.0, 1.0]).unwrap();
        assert!(r > 0.7 && r < 1.0);
    }
}
