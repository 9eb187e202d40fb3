use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::batching::balanced_batches;
use super::loss::sample_negatives;
use super::model::{Plan, TedModel};
use super::{PolicyError, Result, TedConfig};
use crate::corpus::Corpus;
use crate::featurizer::{featurize_dialogue, FeatureVocab, TurnFeatures};
use crate::tensor::{Adam, AdamConfig, Tape, Tensor, TensorError};

/// Mean training loss per epoch.
pub type History = Vec<f64>;

/// Featurized training dialogues with their gold action indices.
pub(crate) struct TrainingSet {
    pub features: Vec<Vec<TurnFeatures>>,
    pub gold: Vec<Vec<usize>>,
}

impl TrainingSet {
    pub(crate) fn new(corpus: &Corpus, vocab: &FeatureVocab) -> Result<Self> {
        let features = corpus
            .dialogues
            .iter()
            .map(|d| featurize_dialogue(d, vocab))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let gold = features
            .iter()
            .map(|f| {
                f.iter()
                    .map(|t| t.action_target_index.expect("strict featurization sets targets"))
                    .collect()
            })
            .collect();
        Ok(Self { features, gold })
    }
}

/// Trains with a vocabulary built from `corpus`.
pub fn train(corpus: &Corpus, config: &TedConfig) -> Result<(TedModel, History)> {
    let vocab = FeatureVocab::build(corpus, config.mode)?;
    train_with_vocab(corpus, vocab, config, |_, _| {})
}

/// Trains a freshly initialized model; `on_epoch(epoch, mean_loss)` runs
/// after every epoch.
pub fn train_with_vocab(
    corpus: &Corpus,
    vocab: FeatureVocab,
    config: &TedConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(TedModel, History)> {
    if corpus.is_empty() {
        return Err(PolicyError::EmptyCorpus);
    }
    if vocab.mode != config.mode {
        return Err(PolicyError::Config(format!(
            "vocabulary mode {} differs from configured mode {}",
            vocab.mode, config.mode
        )));
    }
    let mut model = TedModel::new(config.clone(), vocab)?;
    let data = TrainingSet::new(corpus, &model.vocab)?;
    let actions = model.action_feature_matrix()?;
    let mut adam = Adam::new(AdamConfig {
        lr: config.learning_rate,
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let batches = balanced_batches(&data.gold, config.batch_size, &mut rng);
        let mut total = 0.0;
        for (bi, batch) in batches.iter().enumerate() {
            let loss = train_step(&mut model, &data, batch, &actions, &mut adam, &mut rng)
                .map_err(|e| match e {
                    PolicyError::Tensor(TensorError::NonFinite { op }) => PolicyError::NonFiniteLoss {
                        epoch,
                        batch: bi,
                        op,
                    },
                    other => other,
                })?;
            total += loss;
        }
        let mean = total / batches.len() as f64;
        history.push(mean);
        on_epoch(epoch, mean);
    }
    Ok((model, history))
}

/// Batch loss: mean over turns within each dialogue, then over dialogues.
pub(crate) fn batch_loss(
    model: &TedModel,
    tape: &mut Tape,
    bound: &super::model::Bound,
    data: &TrainingSet,
    batch: &[usize],
    actions: &Tensor,
    rng: &mut ChaCha8Rng,
    train: bool,
) -> Result<crate::tensor::Var> {
    let n_actions = model.n_actions();
    let k = model.config.n_negatives.min(n_actions - 1);
    let feats: Vec<&[TurnFeatures]> = batch.iter().map(|&d| data.features[d].as_slice()).collect();
    let plan = Plan::build(&feats, &model.config, model.vocab.input_dim())?;
    let fwd = model.forward(tape, bound, &plan, train.then_some(&mut *rng))?;
    let hd = model.embed_states(tape, bound, fwd.states)?;
    let a = tape.constant(actions.clone());
    let ha = model.embed_action_rows(tape, bound, a)?;
    let scores = tape.matmul_nt(hd, ha)?;
    let mut cols = Vec::with_capacity(plan.n_predictions() * (k + 1));
    let mut weights = Vec::with_capacity(plan.n_predictions());
    for &d in batch {
        let gold = &data.gold[d];
        for &g in gold {
            cols.push(g);
            cols.extend(sample_negatives(g, n_actions, k, rng)?);
            weights.push(1.0 / (gold.len() * batch.len()) as f64);
        }
    }
    let cand = tape.gather_per_row(scores, &cols)?;
    let lse = tape.logsumexp(cand)?;
    let pos = tape.slice_cols(cand, 0, 1)?;
    let n = weights.len();
    let w_vec = tape.constant(Tensor::vector(weights.clone())?);
    let w_col = tape.constant(Tensor::matrix(n, 1, weights)?);
    let a = tape.mul(lse, w_vec)?;
    let a = tape.sum(a)?;
    let b = tape.mul(pos, w_col)?;
    let b = tape.sum(b)?;
    Ok(tape.sub(a, b)?)
}

fn train_step(
    model: &mut TedModel,
    data: &TrainingSet,
    batch: &[usize],
    actions: &Tensor,
    adam: &mut Adam,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true)?;
    let loss = batch_loss(model, &mut tape, &bound, data, batch, actions, rng, true)?;
    let value = tape.value(loss)?.item();
    let grads = tape.backward(loss)?;
    let vars: Vec<(String, crate::tensor::Var)> =
        bound.iter().map(|(n, v)| (n.clone(), *v)).collect();
    for (name, var) in vars {
        let g = grads.wrt(var)?;
        let p = model.params_mut().get_mut(&name).expect("bound from params");
        adam.update(&name, p, &g)?;
    }
    Ok(value)
}
