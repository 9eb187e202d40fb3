use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{EncoderKind, Layout, TedConfig};
use super::{PolicyError, Result};
use crate::featurizer::{FeatureVocab, TurnFeatures};
use crate::tensor::{Tape, Tensor, Var};

/// Named parameters plus the configuration and vocabulary they were built
/// for. Both encoder kinds share this type and the embedding head.
#[derive(Debug, Clone, PartialEq)]
pub struct TedModel {
    pub config: TedConfig,
    pub vocab: FeatureVocab,
    pub(crate) params: BTreeMap<String, Tensor>,
}

/// One ranked candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranked {
    pub label: String,
    pub index: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// All actions, by descending similarity; ties by action index.
    pub ranked: Vec<Ranked>,
    /// Transformer only: attention over the prefix.
    pub attention: Option<AttentionMaps>,
}

impl Prediction {
    pub fn top(&self) -> &Ranked {
        &self.ranked[0]
    }
}

/// `maps[layer][head][t][j]`: weight that prediction turn `t` puts on turn
/// `j`. Entries with `j > t` or outside the history window are 0.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMaps {
    pub maps: Vec<Vec<Vec<Vec<f64>>>>,
}

impl AttentionMaps {
    pub fn n_layers(&self) -> usize {
        self.maps.len()
    }

    pub fn n_heads(&self) -> usize {
        self.maps.first().map_or(0, Vec::len)
    }

    /// Mean over heads for one layer.
    pub fn head_mean(&self, layer: usize) -> Vec<Vec<f64>> {
        let heads = &self.maps[layer];
        let n = heads[0].len();
        let mut out = vec![vec![0.0; n]; n];
        for h in heads {
            for (o, r) in out.iter_mut().zip(h) {
                for (o, v) in o.iter_mut().zip(r) {
                    *o += v / heads.len() as f64;
                }
            }
        }
        out
    }
}

/// Parameter names and shapes for a configuration and vocabulary, in
/// initialization order.
pub fn param_shapes(config: &TedConfig, vocab: &FeatureVocab) -> Vec<(String, Vec<usize>)> {
    let w = config.width;
    let input = vocab.input_dim();
    let mut v: Vec<(String, Vec<usize>)> = Vec::new();
    let mut push = |name: String, shape: Vec<usize>| v.push((name, shape));
    match config.encoder {
        EncoderKind::Transformer => {
            push("input.weight".into(), vec![input, w]);
            push("input.bias".into(), vec![w]);
            push(
                "position".into(),
                vec![config.max_history * config.layout.positions_per_turn(), w],
            );
            for l in 0..config.n_layers {
                for m in ["query", "key", "value", "output"] {
                    push(format!("layer{l}.{m}.weight"), vec![w, w]);
                    push(format!("layer{l}.{m}.bias"), vec![w]);
                }
                push(format!("layer{l}.ff1.weight"), vec![w, config.ff_width]);
                push(format!("layer{l}.ff1.bias"), vec![config.ff_width]);
                push(format!("layer{l}.ff2.weight"), vec![config.ff_width, w]);
                push(format!("layer{l}.ff2.bias"), vec![w]);
            }
        }
        EncoderKind::Lstm => {
            push("lstm.input_weight".into(), vec![input, 4 * w]);
            push("lstm.recurrent_weight".into(), vec![w, 4 * w]);
            push("lstm.bias".into(), vec![4 * w]);
        }
    }
    push("dialogue_embed.weight".into(), vec![w, config.embed_dim]);
    push("dialogue_embed.bias".into(), vec![config.embed_dim]);
    push("action_proj.weight".into(), vec![vocab.action_feature_dim(), w]);
    push("action_proj.bias".into(), vec![w]);
    push("action_embed.weight".into(), vec![w, config.embed_dim]);
    push("action_embed.bias".into(), vec![config.embed_dim]);
    v
}

/// Encoder inputs for a set of dialogues, split into history windows.
#[derive(Debug)]
pub(crate) struct Plan {
    x: Tensor,
    windows: Vec<Window>,
    /// Per prediction, in (dialogue, turn) order: window and position.
    queries: Vec<(usize, usize)>,
    positions_per_turn: usize,
}

#[derive(Debug)]
struct Window {
    tokens: Vec<usize>,
    first_turn: usize,
}

fn token_rows(f: &TurnFeatures, layout: Layout) -> Vec<Vec<f64>> {
    match layout {
        Layout::Concatenated => vec![f.concatenated()],
        Layout::Interleaved => {
            let head = f.user_vec.len() + f.slot_vec.len();
            let mut action = vec![0.0; head];
            action.extend_from_slice(&f.prev_action_vec);
            let mut user = Vec::with_capacity(head + f.prev_action_vec.len());
            user.extend_from_slice(&f.user_vec);
            user.extend_from_slice(&f.slot_vec);
            user.resize(head + f.prev_action_vec.len(), 0.0);
            vec![action, user]
        }
    }
}

impl Plan {
    /// Turns `0..min(T, N)` share one causal window; every later turn `t`
    /// gets its own window over turns `t-N+1..=t`.
    pub(crate) fn build(dialogues: &[&[TurnFeatures]], config: &TedConfig, input_dim: usize) -> Result<Self> {
        let ppt = config.layout.positions_per_turn();
        let n = config.max_history;
        let mut data = Vec::new();
        let mut n_tokens = 0;
        let mut windows = Vec::new();
        let mut queries = Vec::new();
        for feats in dialogues {
            if feats.is_empty() {
                return Err(PolicyError::EmptyPrefix);
            }
            let offset = n_tokens;
            for f in feats.iter() {
                for row in token_rows(f, config.layout) {
                    if row.len() != input_dim {
                        return Err(PolicyError::WidthMismatch {
                            expected: input_dim,
                            found: row.len(),
                        });
                    }
                    data.extend(row);
                    n_tokens += 1;
                }
            }
            let t_len = feats.len();
            let head = t_len.min(n);
            windows.push(Window {
                tokens: (offset..offset + ppt * head).collect(),
                first_turn: 0,
            });
            let w0 = windows.len() - 1;
            queries.extend((0..head).map(|t| (w0, ppt * t + ppt - 1)));
            for t in n..t_len {
                let first = t + 1 - n;
                windows.push(Window {
                    tokens: (offset + ppt * first..offset + ppt * (t + 1)).collect(),
                    first_turn: first,
                });
                queries.push((windows.len() - 1, ppt * n - 1));
            }
        }
        Ok(Self {
            x: Tensor::new(&[n_tokens, input_dim], data)?,
            windows,
            queries,
            positions_per_turn: ppt,
        })
    }

    pub(crate) fn n_predictions(&self) -> usize {
        self.queries.len()
    }
}

/// Parameters placed on a tape.
pub(crate) struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub(crate) fn get(&self, name: &str) -> Var {
        self.vars[name]
    }

    pub(crate) fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

pub(crate) struct Forward {
    pub states: Var,
    /// Per layer: attention node and, per prediction, its query row.
    pub attention: Vec<(Var, Vec<usize>)>,
}

fn dropout(tape: &mut Tape, x: Var, p: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
    let Some(rng) = rng else { return Ok(x) };
    if p == 0.0 {
        return Ok(x);
    }
    let shape = tape.value(x)?.shape().to_vec();
    let n: usize = shape.iter().product();
    let keep = 1.0 / (1.0 - p);
    let mask = (0..n)
        .map(|_| if rng.random_bool(p) { 0.0 } else { keep })
        .collect();
    let m = tape.constant(Tensor::new(&shape, mask)?);
    Ok(tape.mul(x, m)?)
}

impl TedModel {
    /// Glorot-uniform weights and zero biases, seeded by `config.seed`.
    pub fn new(config: TedConfig, vocab: FeatureVocab) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = param_shapes(&config, &vocab)
            .into_iter()
            .map(|(name, shape)| {
                let t = if shape.len() == 1 {
                    Tensor::zeros(&shape)
                } else {
                    Tensor::glorot(shape[0], shape[1], &mut rng)
                };
                (name, t)
            })
            .collect();
        Ok(Self {
            config,
            vocab,
            params,
        })
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    /// Replaces one parameter; the shape must match.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .params
            .get_mut(name)
            .ok_or_else(|| PolicyError::Config(format!("no parameter {name:?}")))?;
        if slot.shape() != value.shape() {
            return Err(PolicyError::WidthMismatch {
                expected: slot.numel(),
                found: value.numel(),
            });
        }
        if !value.is_finite() {
            return Err(PolicyError::Tensor(crate::tensor::TensorError::NonFinite {
                op: "set_param",
            }));
        }
        *slot = value;
        Ok(())
    }

    pub(crate) fn params_mut(&mut self) -> &mut BTreeMap<String, Tensor> {
        &mut self.params
    }

    pub fn n_actions(&self) -> usize {
        self.vocab.n_actions()
    }

    pub(crate) fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<Bound> {
        let mut vars = BTreeMap::new();
        for (name, t) in &self.params {
            let v = if trainable {
                tape.param(t.clone())?
            } else {
                tape.constant(t.clone())
            };
            vars.insert(name.clone(), v);
        }
        Ok(Bound { vars })
    }

    fn linear(&self, tape: &mut Tape, b: &Bound, x: Var, name: &str) -> Result<Var> {
        let y = tape.matmul(x, b.get(&format!("{name}.weight")))?;
        Ok(tape.add(y, b.get(&format!("{name}.bias")))?)
    }

    pub(crate) fn forward(
        &self,
        tape: &mut Tape,
        b: &Bound,
        plan: &Plan,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Forward> {
        let mut fwd = match self.config.encoder {
            EncoderKind::Transformer => self.transformer(tape, b, plan, rng.as_deref_mut())?,
            EncoderKind::Lstm => self.lstm(tape, b, plan)?,
        };
        fwd.states = dropout(tape, fwd.states, self.config.dropout, rng)?;
        Ok(fwd)
    }

    fn transformer(
        &self,
        tape: &mut Tape,
        b: &Bound,
        plan: &Plan,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Forward> {
        let cfg = &self.config;
        let x = tape.constant(plan.x.clone());
        let projected = self.linear(tape, b, x, "input")?;
        let mut tok_rows = Vec::new();
        let mut pos_rows = Vec::new();
        let mut offsets = Vec::with_capacity(plan.windows.len());
        let mut full_spans = Vec::new();
        for w in &plan.windows {
            let off = tok_rows.len();
            offsets.push(off);
            for (p, &t) in w.tokens.iter().enumerate() {
                tok_rows.push(t);
                pos_rows.push(p);
                full_spans.push((off, off + p + 1));
            }
        }
        let query_rows: Vec<usize> = plan.queries.iter().map(|&(w, p)| offsets[w] + p).collect();
        let query_spans: Vec<(usize, usize)> = query_rows
            .iter()
            .zip(&plan.queries)
            .map(|(&r, &(w, _))| (offsets[w], r + 1))
            .collect();
        let tok = tape.gather_rows(projected, &tok_rows)?;
        let pos = tape.gather_rows(b.get("position"), &pos_rows)?;
        let mut h = tape.add(tok, pos)?;
        let mut attention = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let last = l + 1 == cfg.n_layers;
            let (hq, spans, rows) = if last {
                (tape.gather_rows(h, &query_rows)?, &query_spans, query_rows.clone())
            } else {
                (h, &full_spans, query_rows.clone())
            };
            let name = |m: &str| format!("layer{l}.{m}");
            let q = self.linear(tape, b, hq, &name("query"))?;
            let k = self.linear(tape, b, h, &name("key"))?;
            let v = self.linear(tape, b, h, &name("value"))?;
            let att = tape.span_attention(q, k, v, cfg.n_heads, spans)?;
            let probe_rows = if last { (0..rows.len()).collect() } else { rows };
            attention.push((att, probe_rows));
            let o = self.linear(tape, b, att, &name("output"))?;
            let h1 = tape.add(hq, o)?;
            let f = self.linear(tape, b, h1, &name("ff1"))?;
            let f = tape.relu(f)?;
            let f = dropout(tape, f, cfg.dropout, rng.as_deref_mut())?;
            let f = self.linear(tape, b, f, &name("ff2"))?;
            h = tape.add(h1, f)?;
        }
        Ok(Forward {
            states: h,
            attention,
        })
    }

    fn lstm(&self, tape: &mut Tape, b: &Bound, plan: &Plan) -> Result<Forward> {
        let hdim = self.config.width;
        let x = tape.constant(plan.x.clone());
        let xw = tape.matmul(x, b.get("lstm.input_weight"))?;
        let xw = tape.add(xw, b.get("lstm.bias"))?;
        let wh = b.get("lstm.recurrent_weight");
        // longest windows first so the active set is always a prefix
        let mut order: Vec<usize> = (0..plan.windows.len()).collect();
        order.sort_by_key(|&w| std::cmp::Reverse(plan.windows[w].tokens.len()));
        let mut rank = vec![0; order.len()];
        for (r, &w) in order.iter().enumerate() {
            rank[w] = r;
        }
        let max_len = order.first().map_or(0, |&w| plan.windows[w].tokens.len());
        let mut step_offsets = Vec::with_capacity(max_len);
        let mut outputs = Vec::with_capacity(max_len);
        let mut total = 0;
        let mut state: Option<(Var, Var, usize)> = None;
        for s in 0..max_len {
            let active = order
                .iter()
                .take_while(|&&w| plan.windows[w].tokens.len() > s)
                .count();
            let rows: Vec<usize> = order[..active]
                .iter()
                .map(|&w| plan.windows[w].tokens[s])
                .collect();
            let xs = tape.gather_rows(xw, &rows)?;
            let prev = match state {
                None => None,
                Some((h, c, n)) if n == active => Some((h, c)),
                Some((h, c, _)) => {
                    let keep: Vec<usize> = (0..active).collect();
                    Some((tape.gather_rows(h, &keep)?, tape.gather_rows(c, &keep)?))
                }
            };
            let gates = match prev {
                None => xs,
                Some((h, _)) => {
                    let r = tape.matmul(h, wh)?;
                    tape.add(xs, r)?
                }
            };
            let gi = tape.slice_cols(gates, 0, hdim)?;
            let i = tape.sigmoid(gi)?;
            let gf = tape.slice_cols(gates, hdim, hdim)?;
            let f = tape.sigmoid(gf)?;
            let gg = tape.slice_cols(gates, 2 * hdim, hdim)?;
            let g = tape.tanh(gg)?;
            let go = tape.slice_cols(gates, 3 * hdim, hdim)?;
            let o = tape.sigmoid(go)?;
            let ig = tape.mul(i, g)?;
            let c = match prev {
                None => ig,
                Some((_, c)) => {
                    let fc = tape.mul(f, c)?;
                    tape.add(fc, ig)?
                }
            };
            let tc = tape.tanh(c)?;
            let h = tape.mul(o, tc)?;
            step_offsets.push(total);
            total += active;
            outputs.push(h);
            state = Some((h, c, active));
        }
        let all = tape.concat_rows(&outputs)?;
        let idx: Vec<usize> = plan
            .queries
            .iter()
            .map(|&(w, p)| step_offsets[p] + rank[w])
            .collect();
        Ok(Forward {
            states: tape.gather_rows(all, &idx)?,
            attention: Vec::new(),
        })
    }

    /// Dialogue embeddings `[n × embed_dim]` from encoder states.
    pub(crate) fn embed_states(&self, tape: &mut Tape, b: &Bound, states: Var) -> Result<Var> {
        self.linear(tape, b, states, "dialogue_embed")
    }

    /// Action embeddings `[n × embed_dim]` from action feature rows.
    pub(crate) fn embed_action_rows(&self, tape: &mut Tape, b: &Bound, feats: Var) -> Result<Var> {
        let p = self.linear(tape, b, feats, "action_proj")?;
        let p = tape.relu(p)?;
        self.linear(tape, b, p, "action_embed")
    }

    /// Feature rows of every action, in action-index order.
    pub fn action_feature_matrix(&self) -> Result<Tensor> {
        let rows = self
            .vocab
            .actions
            .symbols()
            .iter()
            .map(|a| self.vocab.action_features(a))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Tensor::from_rows(&rows)?)
    }

    /// Per-turn encoder states `[T × width]`.
    pub fn encode_dialogue(&self, features: &[TurnFeatures]) -> Result<Tensor> {
        let plan = Plan::build(&[features], &self.config, self.vocab.input_dim())?;
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false)?;
        let f = self.forward(&mut tape, &b, &plan, None)?;
        Ok(tape.value(f.states)?.clone())
    }

    /// `(E_dialogue(a), E_action(y))` for one state and one action vector.
    pub fn embed_pair(&self, state: &[f64], action: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let check = |expected: usize, found: usize| {
            if expected == found {
                Ok(())
            } else {
                Err(PolicyError::WidthMismatch { expected, found })
            }
        };
        check(self.config.width, state.len())?;
        check(self.vocab.action_feature_dim(), action.len())?;
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false)?;
        let s = tape.constant(Tensor::matrix(1, state.len(), state.to_vec())?);
        let a = tape.constant(Tensor::matrix(1, action.len(), action.to_vec())?);
        let hd = self.embed_states(&mut tape, &b, s)?;
        let ha = self.embed_action_rows(&mut tape, &b, a)?;
        Ok((tape.value(hd)?.data().to_vec(), tape.value(ha)?.data().to_vec()))
    }

    fn scores_and_maps(
        &self,
        features: &[TurnFeatures],
        with_maps: bool,
    ) -> Result<(Tensor, Option<AttentionMaps>)> {
        let plan = Plan::build(&[features], &self.config, self.vocab.input_dim())?;
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false)?;
        let f = self.forward(&mut tape, &b, &plan, None)?;
        let hd = self.embed_states(&mut tape, &b, f.states)?;
        let feats = tape.constant(self.action_feature_matrix()?);
        let ha = self.embed_action_rows(&mut tape, &b, feats)?;
        let s = tape.matmul_nt(hd, ha)?;
        let maps = if with_maps && self.config.encoder == EncoderKind::Transformer {
            Some(self.collect_maps(&tape, &plan, &f, features.len())?)
        } else {
            None
        };
        Ok((tape.value(s)?.clone(), maps))
    }

    fn collect_maps(
        &self,
        tape: &Tape,
        plan: &Plan,
        f: &Forward,
        n_turns: usize,
    ) -> Result<AttentionMaps> {
        let heads = self.config.n_heads;
        let ppt = plan.positions_per_turn;
        let mut maps = Vec::with_capacity(f.attention.len());
        for (att, rows) in &f.attention {
            let probs = tape.span_attention_probs(*att)?;
            let mut layer = vec![vec![vec![0.0; n_turns]; n_turns]; heads];
            for (t, (&(w, p), &row)) in plan.queries.iter().zip(rows).enumerate() {
                let len = p + 1;
                let first = plan.windows[w].first_turn;
                for (h, m) in layer.iter_mut().enumerate() {
                    for j in 0..len {
                        m[t][first + j / ppt] += probs[row][h * len + j];
                    }
                }
            }
            maps.push(layer);
        }
        Ok(AttentionMaps { maps })
    }

    /// Similarity of every turn's dialogue embedding with every action:
    /// `[T × n_actions]`.
    pub fn turn_scores(&self, features: &[TurnFeatures]) -> Result<Tensor> {
        Ok(self.scores_and_maps(features, false)?.0)
    }

    /// Ranks all actions for the last turn of `prefix`.
    pub fn predict(&self, prefix: &[TurnFeatures]) -> Result<Prediction> {
        if prefix.is_empty() {
            return Err(PolicyError::EmptyPrefix);
        }
        let (scores, attention) = self.scores_and_maps(prefix, true)?;
        Ok(Prediction {
            ranked: self.rank(scores.row(prefix.len() - 1)),
            attention,
        })
    }

    /// Actions sorted by descending score, ties by action index.
    pub fn rank(&self, scores: &[f64]) -> Vec<Ranked> {
        let mut ranked: Vec<Ranked> = scores
            .iter()
            .enumerate()
            .map(|(i, &score)| Ranked {
                label: self.vocab.actions.symbols()[i].clone(),
                index: i,
                score,
            })
            .collect();
        ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
        ranked
    }

    /// Top-ranked action index for every turn.
    pub fn predict_dialogue(&self, features: &[TurnFeatures]) -> Result<Vec<usize>> {
        let scores = self.turn_scores(features)?;
        Ok((0..scores.rows())
            .map(|t| self.rank(scores.row(t))[0].index)
            .collect())
    }

    pub fn attention_maps(&self, features: &[TurnFeatures]) -> Result<AttentionMaps> {
        if self.config.encoder != EncoderKind::Transformer {
            return Err(PolicyError::NoAttention);
        }
        self.scores_and_maps(features, true)?
            .1
            .ok_or(PolicyError::NoAttention)
    }
}
