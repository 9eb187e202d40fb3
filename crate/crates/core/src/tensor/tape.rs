use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels;
use super::{Result, Tensor, TensorError};

/// Handle to a node on a [`Tape`]. Handles from a cleared tape are rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    id: usize,
    generation: u64,
}

impl Var {
    pub fn id(self) -> usize {
        self.id
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add { a: usize, b: usize, broadcast: bool },
    Sub { a: usize, b: usize, broadcast: bool },
    Mul { a: usize, b: usize, broadcast: bool },
    Scale { a: usize, factor: f64 },
    Relu { a: usize },
    Sigmoid { a: usize },
    Tanh { a: usize },
    MatMul { a: usize, b: usize },
    MatMulNt { a: usize, b: usize },
    Transpose { a: usize },
    MaskedSoftmax { a: usize },
    RowLogSumExp { a: usize },
    SliceCols { a: usize, start: usize },
    ConcatCols { parts: Vec<usize> },
    ConcatRows { parts: Vec<usize> },
    GatherRows { a: usize, rows: Vec<usize> },
    GatherPerRow { a: usize, cols: Vec<usize> },
    Sum { a: usize },
    SpanAttention {
        q: usize,
        k: usize,
        v: usize,
        heads: usize,
        spans: Vec<(usize, usize)>,
        probs: Vec<Vec<f64>>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

static NEXT_GENERATION: AtomicU64 = AtomicU64::new(0);

fn next_generation() -> u64 {
    NEXT_GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// Reverse-mode differentiation record. Operations are appended in
/// evaluation order, so node ids are a topological order.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    generation: u64,
}

/// Gradients produced by [`Tape::backward`], addressed by the `Var`s of the
/// tape they were computed on.
#[derive(Debug)]
pub struct Gradients {
    generation: u64,
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; zero for anything the loss
    /// does not depend on (including constants).
    pub fn wrt(&self, var: Var) -> Result<Tensor> {
        if var.generation != self.generation || var.id >= self.shapes.len() {
            return Err(TensorError::UnknownNode(var.id));
        }
        let shape = &self.shapes[var.id];
        Ok(match &self.grads[var.id] {
            Some(g) => Tensor::new(shape, g.clone())?,
            None => Tensor::zeros(shape),
        })
    }
}

fn same_or_broadcast(op: &'static str, a: &Tensor, b: &Tensor) -> Result<bool> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa == sb {
        return Ok(false);
    }
    let tail = &sa[1..];
    let ok = sb == tail || (sb.len() == sa.len() && sb[0] == 1 && &sb[1..] == tail);
    if ok && !tail.is_empty() {
        Ok(true)
    } else {
        Err(TensorError::ShapeMismatch {
            op,
            left: sa.to_vec(),
            right: sb.to_vec(),
        })
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self {
            nodes: Vec::new(),
            generation: next_generation(),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.generation != self.generation || v.id >= self.nodes.len() {
            return Err(TensorError::UnknownNode(v.id));
        }
        Ok(v.id)
    }

    fn node(&self, v: Var) -> Result<&Node> {
        Ok(&self.nodes[self.idx(v)?])
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        Ok(&self.node(v)?.value)
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, inputs: &[usize]) -> Result<Var> {
        value.check_finite(op_name)?;
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.push_node(value, op, requires_grad)
    }

    fn push_node(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var {
            id,
            generation: self.generation,
        })
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        value.check_finite("param")?;
        self.push_node(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, false)
            .expect("push of a leaf cannot fail")
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(usize, usize, bool) -> Op,
    ) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (ta, tb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let broadcast = same_or_broadcast(name, ta, tb)?;
        let nb = tb.numel();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, tb.data()[i % nb]))
            .collect();
        let value = Tensor::new(ta.shape(), data)?;
        self.push(name, value, make(ia, ib, broadcast), &[ia, ib])
    }

    /// `a + b`; `b` may broadcast along the leading axis of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, |a, b, broadcast| Op::Add {
            a,
            b,
            broadcast,
        })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, |a, b, broadcast| Op::Sub {
            a,
            b,
            broadcast,
        })
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, |a, b, broadcast| Op::Mul {
            a,
            b,
            broadcast,
        })
    }

    fn unary(
        &mut self,
        name: &'static str,
        a: Var,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let ia = self.idx(a)?;
        let ta = &self.nodes[ia].value;
        let value = Tensor::new(ta.shape(), ta.data().iter().map(|&x| f(x)).collect())?;
        self.push(name, value, op, &[ia])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let ia = self.idx(a)?;
        self.unary("scale", a, |x| x * factor, Op::Scale { a: ia, factor })
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        self.unary("relu", a, |x| x.max(0.0), Op::Relu { a: ia })
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid { a: ia })
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        self.unary("tanh", a, f64::tanh, Op::Tanh { a: ia })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let value = self.nodes[ia].value.matmul(&self.nodes[ib].value)?;
        self.push("matmul", value, Op::MatMul { a: ia, b: ib }, &[ia, ib])
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (ta, tb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let (m, k) = ta.as_matrix("matmul_nt")?;
        let (n, k2) = tb.as_matrix("matmul_nt")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_nt",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_a_bt(ta.data(), tb.data(), &mut out, m, k, n);
        let value = Tensor::new(&[m, n], out)?;
        self.push("matmul_nt", value, Op::MatMulNt { a: ia, b: ib }, &[ia, ib])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = self.nodes[ia].value.transpose()?;
        self.push("transpose", value, Op::Transpose { a: ia }, &[ia])
    }

    /// Row-wise softmax restricted to positions where `mask` is 1. Masked
    /// outputs are exactly zero and receive exactly zero gradient.
    pub fn masked_softmax(&mut self, scores: Var, mask: &Tensor) -> Result<Var> {
        let ia = self.idx(scores)?;
        let ts = &self.nodes[ia].value;
        if ts.shape() != mask.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "masked_softmax",
                left: ts.shape().to_vec(),
                right: mask.shape().to_vec(),
            });
        }
        if mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(TensorError::InvalidMask);
        }
        let cols = ts.cols();
        let mut out = vec![0.0; ts.numel()];
        for (r, (srow, mrow)) in ts
            .data()
            .chunks(cols)
            .zip(mask.data().chunks(cols))
            .enumerate()
        {
            let max = srow
                .iter()
                .zip(mrow)
                .filter(|(_, &m)| m == 1.0)
                .map(|(&s, _)| s)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(TensorError::FullyMaskedRow { row: r });
            }
            let orow = &mut out[r * cols..(r + 1) * cols];
            let mut total = 0.0;
            for ((o, &s), &m) in orow.iter_mut().zip(srow).zip(mrow) {
                if m == 1.0 {
                    *o = (s - max).exp();
                    total += *o;
                }
            }
            for o in orow.iter_mut() {
                *o /= total;
            }
        }
        let value = Tensor::new(ts.shape(), out)?;
        self.push("masked_softmax", value, Op::MaskedSoftmax { a: ia }, &[ia])
    }

    /// `log Σ exp` along the last axis: `[m, n] -> [m]`, `[n] -> [1]`.
    pub fn logsumexp(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let ta = &self.nodes[ia].value;
        if ta.rank() > 2 {
            return Err(TensorError::ShapeMismatch {
                op: "logsumexp",
                left: ta.shape().to_vec(),
                right: vec![0, 0],
            });
        }
        let out = ta
            .data()
            .chunks(ta.cols())
            .map(super::logsumexp)
            .collect::<Result<Vec<_>>>()?;
        let value = Tensor::vector(out)?;
        self.push("logsumexp", value, Op::RowLogSumExp { a: ia }, &[ia])
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ia = self.idx(a)?;
        let ta = &self.nodes[ia].value;
        let (m, n) = ta.as_matrix("slice_cols")?;
        if len == 0 || start + len > n {
            return Err(TensorError::IndexOutOfRange {
                op: "slice_cols",
                index: start + len,
                extent: n,
            });
        }
        let data = ta
            .data()
            .chunks(n)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let value = Tensor::new(&[m, len], data)?;
        self.push("slice_cols", value, Op::SliceCols { a: ia, start }, &[ia])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let ids = parts.iter().map(|&v| self.idx(v)).collect::<Result<Vec<_>>>()?;
        let first = ids.first().ok_or(TensorError::EmptyInput { op: "concat_cols" })?;
        let (m, _) = self.nodes[*first].value.as_matrix("concat_cols")?;
        let mut widths = Vec::with_capacity(ids.len());
        for &i in &ids {
            let t = &self.nodes[i].value;
            let (mi, ni) = t.as_matrix("concat_cols")?;
            if mi != m {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    left: vec![m],
                    right: t.shape().to_vec(),
                });
            }
            widths.push(ni);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for (&i, &w) in ids.iter().zip(&widths) {
                data.extend_from_slice(&self.nodes[i].value.data()[r * w..(r + 1) * w]);
            }
        }
        let value = Tensor::new(&[m, total], data)?;
        self.push("concat_cols", value, Op::ConcatCols { parts: ids.clone() }, &ids)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let ids = parts.iter().map(|&v| self.idx(v)).collect::<Result<Vec<_>>>()?;
        let first = ids.first().ok_or(TensorError::EmptyInput { op: "concat_rows" })?;
        let n = self.nodes[*first].value.cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &i in &ids {
            let t = &self.nodes[i].value;
            if t.rank() > 2 || t.cols() != n {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    left: vec![n],
                    right: t.shape().to_vec(),
                });
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let value = Tensor::new(&[rows, n], data)?;
        self.push("concat_rows", value, Op::ConcatRows { parts: ids.clone() }, &ids)
    }

    /// Rows of a matrix (or elements of a vector, as 1-wide rows) by index;
    /// repeated indices accumulate gradient.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let ia = self.idx(a)?;
        let ta = &self.nodes[ia].value;
        if rows.is_empty() {
            return Err(TensorError::EmptyInput { op: "gather_rows" });
        }
        let (m, n) = if ta.rank() == 1 {
            (ta.numel(), 1)
        } else {
            ta.as_matrix("gather_rows")?
        };
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            if r >= m {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: r,
                    extent: m,
                });
            }
            data.extend_from_slice(&ta.data()[r * n..(r + 1) * n]);
        }
        let value = Tensor::new(&[rows.len(), n], data)?;
        let op = Op::GatherRows {
            a: ia,
            rows: rows.to_vec(),
        };
        self.push("gather_rows", value, op, &[ia])
    }

    /// `out[r, j] = a[r, cols[r * width + j]]` with `width = cols.len() / rows`.
    pub fn gather_per_row(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        let ia = self.idx(a)?;
        let ta = &self.nodes[ia].value;
        let (m, n) = ta.as_matrix("gather_per_row")?;
        if cols.is_empty() || cols.len() % m != 0 {
            return Err(TensorError::ShapeMismatch {
                op: "gather_per_row",
                left: vec![m, n],
                right: vec![cols.len()],
            });
        }
        let width = cols.len() / m;
        let mut data = Vec::with_capacity(cols.len());
        for (k, &c) in cols.iter().enumerate() {
            if c >= n {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_per_row",
                    index: c,
                    extent: n,
                });
            }
            data.push(ta.data()[(k / width) * n + c]);
        }
        let value = Tensor::new(&[m, width], data)?;
        let op = Op::GatherPerRow {
            a: ia,
            cols: cols.to_vec(),
        };
        self.push("gather_per_row", value, op, &[ia])
    }

    /// Multi-head scaled dot-product attention where query row `i` attends
    /// to the contiguous key/value rows `spans[i].0..spans[i].1`.
    pub fn span_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        spans: &[(usize, usize)],
    ) -> Result<Var> {
        let (iq, ik, iv) = (self.idx(q)?, self.idx(k)?, self.idx(v)?);
        let (tq, tk, tv) = (&self.nodes[iq].value, &self.nodes[ik].value, &self.nodes[iv].value);
        let (r, d) = tq.as_matrix("span_attention")?;
        let (p, dk_full) = tk.as_matrix("span_attention")?;
        if tv.shape() != tk.shape() || dk_full != d || heads == 0 || d % heads != 0 {
            return Err(TensorError::ShapeMismatch {
                op: "span_attention",
                left: tq.shape().to_vec(),
                right: tk.shape().to_vec(),
            });
        }
        if spans.len() != r {
            return Err(TensorError::ShapeMismatch {
                op: "span_attention",
                left: vec![r],
                right: vec![spans.len()],
            });
        }
        let dk = d / heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let (qd, kd, vd) = (tq.data(), tk.data(), tv.data());
        let mut out = vec![0.0; r * d];
        let mut probs = Vec::with_capacity(r);
        for (i, &(s, e)) in spans.iter().enumerate() {
            if s >= e {
                return Err(TensorError::FullyMaskedRow { row: i });
            }
            if e > p {
                return Err(TensorError::IndexOutOfRange {
                    op: "span_attention",
                    index: e,
                    extent: p,
                });
            }
            let len = e - s;
            let mut row_probs = vec![0.0; heads * len];
            for h in 0..heads {
                let qi = &qd[i * d + h * dk..i * d + (h + 1) * dk];
                let ph = &mut row_probs[h * len..(h + 1) * len];
                for (j, pj) in ph.iter_mut().enumerate() {
                    let kj = &kd[(s + j) * d + h * dk..(s + j) * d + (h + 1) * dk];
                    *pj = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                }
                let max = ph.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for pj in ph.iter_mut() {
                    *pj = (*pj - max).exp();
                    total += *pj;
                }
                let o = &mut out[i * d + h * dk..i * d + (h + 1) * dk];
                for (j, pj) in ph.iter_mut().enumerate() {
                    *pj /= total;
                    let vj = &vd[(s + j) * d + h * dk..(s + j) * d + (h + 1) * dk];
                    for (o, &x) in o.iter_mut().zip(vj) {
                        *o += *pj * x;
                    }
                }
            }
            probs.push(row_probs);
        }
        let value = Tensor::new(&[r, d], out)?;
        let op = Op::SpanAttention {
            q: iq,
            k: ik,
            v: iv,
            heads,
            spans: spans.to_vec(),
            probs,
        };
        self.push("span_attention", value, op, &[iq, ik, iv])
    }

    /// Attention weights of a [`Self::span_attention`] node: per query row,
    /// `heads` consecutive blocks of span length.
    pub fn span_attention_probs(&self, v: Var) -> Result<&[Vec<f64>]> {
        match &self.node(v)?.op {
            Op::SpanAttention { probs, .. } => Ok(probs),
            _ => Err(TensorError::UnknownNode(v.id)),
        }
    }

    /// Sum of all elements as a `[1]` scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let total = self.nodes[ia].value.data().iter().sum();
        self.push("sum", Tensor::scalar(total), Op::Sum { a: ia }, &[ia])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a)?.numel() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Computes gradients of the scalar `loss` for every node, then clears
    /// the tape for reuse.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        let il = self.idx(loss)?;
        let shape = self.nodes[il].value.shape();
        if self.nodes[il].value.numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: shape.to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[il].requires_grad {
            grads[il] = Some(vec![1.0]);
        }
        for i in (0..=il).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        let gradients = Gradients {
            generation: self.generation,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            grads,
        };
        self.nodes.clear();
        self.generation = next_generation();
        Ok(gradients)
    }

    fn backprop_node(&self, i: usize, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let y = &nodes[i].value;
        let mut acc = |id: usize, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[id].requires_grad {
                return;
            }
            let g = grads[id].get_or_insert_with(|| vec![0.0; nodes[id].value.numel()]);
            f(g);
        };
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Add { a, b, broadcast } | Op::Sub { a, b, broadcast } => {
                let sign = if matches!(nodes[i].op, Op::Sub { .. }) { -1.0 } else { 1.0 };
                acc(*a, &mut |g| g.iter_mut().zip(dy).for_each(|(g, d)| *g += d));
                acc(*b, &mut |g| {
                    if *broadcast {
                        let nb = g.len();
                        for (k, d) in dy.iter().enumerate() {
                            g[k % nb] += sign * d;
                        }
                    } else {
                        g.iter_mut().zip(dy).for_each(|(g, d)| *g += sign * d);
                    }
                });
            }
            Op::Mul { a, b, broadcast } => {
                let (va, vb) = (nodes[*a].value.data(), nodes[*b].value.data());
                let nb = vb.len();
                acc(*a, &mut |g| {
                    for (k, d) in dy.iter().enumerate() {
                        g[k] += d * vb[k % nb];
                    }
                });
                acc(*b, &mut |g| {
                    for (k, d) in dy.iter().enumerate() {
                        g[if *broadcast { k % nb } else { k }] += d * va[k];
                    }
                });
            }
            Op::Scale { a, factor } => {
                acc(*a, &mut |g| g.iter_mut().zip(dy).for_each(|(g, d)| *g += factor * d));
            }
            Op::Relu { a } => {
                let x = nodes[*a].value.data();
                acc(*a, &mut |g| {
                    for k in 0..g.len() {
                        if x[k] > 0.0 {
                            g[k] += dy[k];
                        }
                    }
                });
            }
            Op::Sigmoid { a } => {
                acc(*a, &mut |g| {
                    for (k, &s) in y.data().iter().enumerate() {
                        g[k] += dy[k] * s * (1.0 - s);
                    }
                });
            }
            Op::Tanh { a } => {
                acc(*a, &mut |g| {
                    for (k, &t) in y.data().iter().enumerate() {
                        g[k] += dy[k] * (1.0 - t * t);
                    }
                });
            }
            Op::MatMul { a, b } => {
                let (ta, tb) = (&nodes[*a].value, &nodes[*b].value);
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                acc(*a, &mut |g| kernels::matmul_a_bt(dy, tb.data(), g, m, n, k));
                acc(*b, &mut |g| kernels::matmul_at_b(ta.data(), dy, g, m, k, n));
            }
            Op::MatMulNt { a, b } => {
                let (ta, tb) = (&nodes[*a].value, &nodes[*b].value);
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[0];
                // y = a bᵀ: da = dy b, db = dyᵀ a
                acc(*a, &mut |g| kernels::matmul(dy, tb.data(), g, m, n, k));
                acc(*b, &mut |g| kernels::matmul_at_b(dy, ta.data(), g, m, n, k));
            }
            Op::Transpose { a } => {
                let (m, n) = (y.shape()[0], y.shape()[1]);
                acc(*a, &mut |g| {
                    for r in 0..m {
                        for c in 0..n {
                            g[c * m + r] += dy[r * n + c];
                        }
                    }
                });
            }
            Op::MaskedSoftmax { a } => {
                let n = y.cols();
                acc(*a, &mut |g| {
                    for ((grow, yrow), drow) in
                        g.chunks_mut(n).zip(y.data().chunks(n)).zip(dy.chunks(n))
                    {
                        let dot: f64 = yrow.iter().zip(drow).map(|(y, d)| y * d).sum();
                        for ((g, &y), &d) in grow.iter_mut().zip(yrow).zip(drow) {
                            if y != 0.0 {
                                *g += y * (d - dot);
                            }
                        }
                    }
                });
            }
            Op::RowLogSumExp { a } => {
                let x = &nodes[*a].value;
                let n = x.cols();
                acc(*a, &mut |g| {
                    for (r, (grow, xrow)) in g.chunks_mut(n).zip(x.data().chunks(n)).enumerate() {
                        let lse = y.data()[r];
                        for (g, &xv) in grow.iter_mut().zip(xrow) {
                            *g += dy[r] * (xv - lse).exp();
                        }
                    }
                });
            }
            Op::SliceCols { a, start } => {
                let n = nodes[*a].value.cols();
                let w = y.cols();
                acc(*a, &mut |g| {
                    for (grow, drow) in g.chunks_mut(n).zip(dy.chunks(w)) {
                        grow[*start..start + w]
                            .iter_mut()
                            .zip(drow)
                            .for_each(|(g, d)| *g += d);
                    }
                });
            }
            Op::ConcatCols { parts } => {
                let total = y.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = nodes[p].value.cols();
                    acc(p, &mut |g| {
                        for (grow, drow) in g.chunks_mut(w).zip(dy.chunks(total)) {
                            grow.iter_mut()
                                .zip(&drow[offset..offset + w])
                                .for_each(|(g, d)| *g += d);
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let len = nodes[p].value.numel();
                    acc(p, &mut |g| {
                        g.iter_mut()
                            .zip(&dy[offset..offset + len])
                            .for_each(|(g, d)| *g += d);
                    });
                    offset += len;
                }
            }
            Op::GatherRows { a, rows } => {
                let n = y.cols();
                acc(*a, &mut |g| {
                    for (k, &r) in rows.iter().enumerate() {
                        g[r * n..(r + 1) * n]
                            .iter_mut()
                            .zip(&dy[k * n..(k + 1) * n])
                            .for_each(|(g, d)| *g += d);
                    }
                });
            }
            Op::GatherPerRow { a, cols } => {
                let n = nodes[*a].value.cols();
                let w = y.cols();
                acc(*a, &mut |g| {
                    for (k, &c) in cols.iter().enumerate() {
                        g[(k / w) * n + c] += dy[k];
                    }
                });
            }
            Op::Sum { a } => {
                acc(*a, &mut |g| g.iter_mut().for_each(|g| *g += dy[0]));
            }
            Op::SpanAttention {
                q,
                k,
                v,
                heads,
                spans,
                probs,
            } => {
                let (qd, kd, vd) = (
                    nodes[*q].value.data(),
                    nodes[*k].value.data(),
                    nodes[*v].value.data(),
                );
                let d = y.cols();
                let dk = d / heads;
                let scale = 1.0 / (dk as f64).sqrt();
                // score gradients, laid out like `probs`
                let ds: Vec<Vec<f64>> = spans
                    .iter()
                    .zip(probs)
                    .enumerate()
                    .map(|(i, (&(s, e), p))| {
                        let len = e - s;
                        let mut out = vec![0.0; p.len()];
                        for h in 0..*heads {
                            let di = &dy[i * d + h * dk..i * d + (h + 1) * dk];
                            let ph = &p[h * len..(h + 1) * len];
                            let dp: Vec<f64> = (0..len)
                                .map(|j| {
                                    let vj = &vd[(s + j) * d + h * dk..(s + j) * d + (h + 1) * dk];
                                    di.iter().zip(vj).map(|(a, b)| a * b).sum()
                                })
                                .collect();
                            let dot: f64 = ph.iter().zip(&dp).map(|(a, b)| a * b).sum();
                            for j in 0..len {
                                out[h * len + j] = ph[j] * (dp[j] - dot);
                            }
                        }
                        out
                    })
                    .collect();
                acc(*q, &mut |g| {
                    for (i, &(s, e)) in spans.iter().enumerate() {
                        let len = e - s;
                        for h in 0..*heads {
                            let gi = &mut g[i * d + h * dk..i * d + (h + 1) * dk];
                            for j in 0..len {
                                let w = ds[i][h * len + j] * scale;
                                let kj = &kd[(s + j) * d + h * dk..(s + j) * d + (h + 1) * dk];
                                gi.iter_mut().zip(kj).for_each(|(g, &x)| *g += w * x);
                            }
                        }
                    }
                });
                acc(*k, &mut |g| {
                    for (i, &(s, e)) in spans.iter().enumerate() {
                        let len = e - s;
                        for h in 0..*heads {
                            let qi = &qd[i * d + h * dk..i * d + (h + 1) * dk];
                            for j in 0..len {
                                let w = ds[i][h * len + j] * scale;
                                let gj = &mut g[(s + j) * d + h * dk..(s + j) * d + (h + 1) * dk];
                                gj.iter_mut().zip(qi).for_each(|(g, &x)| *g += w * x);
                            }
                        }
                    }
                });
                acc(*v, &mut |g| {
                    for (i, &(s, e)) in spans.iter().enumerate() {
                        let len = e - s;
                        for h in 0..*heads {
                            let di = &dy[i * d + h * dk..i * d + (h + 1) * dk];
                            for j in 0..len {
                                let w = probs[i][h * len + j];
                                let gj = &mut g[(s + j) * d + h * dk..(s + j) * d + (h + 1) * dk];
                                gj.iter_mut().zip(di).for_each(|(g, &x)| *g += w * x);
                            }
                        }
                    }
                });
            }
        }
    }
}
