//! Shared fixtures for the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ted_core::corpus::{generate_corpus, Corpus, GenerationConfig};
use ted_core::featurizer::{featurize_dialogue, FeatureVocab, TurnFeatures};
use ted_core::policy::{EncoderKind, TedConfig, TedModel};
use ted_core::tensor::Tensor;

pub fn corpus(n: usize) -> Corpus {
    generate_corpus(&GenerationConfig {
        n_dialogues: n,
        ..GenerationConfig::default()
    })
    .expect("default generation config is valid")
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    Tensor::uniform(&[rows, cols], 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Untrained model with default sizes and the featurized dialogues of `corpus`.
pub fn model(corpus: &Corpus, encoder: EncoderKind) -> (TedModel, Vec<Vec<TurnFeatures>>) {
    let config = TedConfig {
        encoder,
        ..TedConfig::default()
    };
    let vocab = FeatureVocab::build(corpus, config.mode).expect("non-empty corpus");
    let feats = corpus
        .dialogues
        .iter()
        .map(|d| featurize_dialogue(d, &vocab).expect("corpus symbols are in its vocabulary"))
        .collect();
    (TedModel::new(config, vocab).expect("default config is valid"), feats)
}
