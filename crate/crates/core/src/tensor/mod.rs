//! Dense `f64` tensors with a reverse-mode tape and the Adam optimizer.
//!
//! Values live in [`Tensor`]; differentiable computation is recorded on a
//! [`Tape`] through [`Var`] handles. Every forward operation checks its output
//! for NaN/Inf and fails with the name of the offending op.

mod kernels;
mod optim;
mod tape;

pub use optim::{adam_step, Adam, AdamConfig, AdamState};
pub use tape::{Gradients, Tape, Var};

use rand::Rng;
use thiserror::Error;

pub const MAX_RANK: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid shape {shape:?} for {len} values")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("{op}: non-finite value in output")]
    NonFinite { op: &'static str },
    #[error("masked_softmax: row {row} is fully masked")]
    FullyMaskedRow { row: usize },
    #[error("masked_softmax: mask entries must be 0 or 1")]
    InvalidMask,
    #[error("{op}: empty input")]
    EmptyInput { op: &'static str },
    #[error("{op}: index {index} out of range for extent {extent}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        extent: usize,
    },
    #[error("backward: loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("node {0} is not on the current tape")]
    UnknownNode(usize),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Row-major array of `f64` with rank 1 to 3.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let valid = !shape.is_empty()
            && shape.len() <= MAX_RANK
            && shape.iter().all(|&d| d > 0)
            && shape.iter().product::<usize>() == data.len();
        if !valid {
            return Err(TensorError::InvalidShape {
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n]).expect("zeros: invalid shape")
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![value; n]).expect("filled: invalid shape")
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::new(&[n], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(&[rows, cols], data)
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(TensorError::ShapeMismatch {
                op: "from_rows",
                left: vec![cols],
                right: vec![bad.len()],
            });
        }
        Self::new(&[rows.len(), cols], rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Uniform samples in `[-limit, limit)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], limit: f64, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
        Self::new(shape, data).expect("uniform: invalid shape")
    }

    /// Glorot-uniform weight matrix `[fan_in, fan_out]`.
    pub fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Self::uniform(&[fan_in, fan_out], limit, rng)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Leading extent for matrices, 1 for vectors.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            _ => self.shape[0],
        }
    }

    /// Trailing extent.
    pub fn cols(&self) -> usize {
        *self.shape.last().expect("tensor has rank >= 1")
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let c = self.cols();
        &self.data[row * c..(row + 1) * c]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_finite(&self, op: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(TensorError::NonFinite { op })
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let data = std::mem::take(&mut self.data);
        Self::new(shape, data)
    }

    /// Plain (untracked) matrix product.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.as_matrix("matmul")?;
        let (k2, n) = other.as_matrix("matmul")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul(&self.data, &other.data, &mut out, m, k, n);
        let t = Tensor::new(&[m, n], out)?;
        t.check_finite("matmul")?;
        Ok(t)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = self.as_matrix("transpose")?;
        let mut out = vec![0.0; m * n];
        kernels::transpose(&self.data, &mut out, m, n);
        Tensor::new(&[n, m], out)
    }

    pub(crate) fn as_matrix(&self, op: &'static str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: vec![0, 0],
            });
        }
        Ok((self.shape[0], self.shape[1]))
    }
}

/// Numerically stable `log Σ exp(v)`.
pub fn logsumexp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(TensorError::EmptyInput { op: "logsumexp" });
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(TensorError::NonFinite { op: "logsumexp" });
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Row-wise softmax over the positions where `mask` is 1; masked outputs are 0.
pub fn masked_softmax(scores: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let s = tape.constant(scores.clone());
    let out = tape.masked_softmax(s, mask)?;
    Ok(tape.value(out)?.clone())
}
