use rand::seq::index;
use rand::Rng;

use super::{PolicyError, Result};
use crate::tensor::logsumexp;

/// Dot product of two embeddings.
pub fn similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(PolicyError::WidthMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
}

fn check_finite(s_plus: f64, s_minus: &[f64]) -> Result<()> {
    if s_plus.is_finite() && s_minus.iter().all(|s| s.is_finite()) {
        Ok(())
    } else {
        Err(PolicyError::Tensor(crate::tensor::TensorError::NonFinite { op: "ted_loss" }))
    }
}

/// `-(S⁺ - log(e^{S⁺} + Σ e^{S⁻}))` for one time step.
pub fn ted_loss(s_plus: f64, s_minus: &[f64]) -> Result<f64> {
    check_finite(s_plus, s_minus)?;
    if s_minus.is_empty() {
        return Ok(0.0);
    }
    if s_minus.iter().all(|&s| s <= s_plus) {
        // log1p form keeps a dominant S⁺ from rounding the loss to zero
        let tail: f64 = s_minus.iter().map(|&s| (s - s_plus).exp()).sum();
        return Ok(tail.ln_1p());
    }
    let mut all = Vec::with_capacity(s_minus.len() + 1);
    all.push(s_plus);
    all.extend_from_slice(s_minus);
    Ok((logsumexp(&all)? - s_plus).max(0.0))
}

/// Analytic gradient of [`ted_loss`] with respect to `S⁺` and each `S⁻`.
pub fn ted_loss_grad(s_plus: f64, s_minus: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_finite(s_plus, s_minus)?;
    let mut all = Vec::with_capacity(s_minus.len() + 1);
    all.push(s_plus);
    all.extend_from_slice(s_minus);
    let lse = logsumexp(&all)?;
    let weight = |s: f64| (s - lse).exp();
    Ok((
        weight(s_plus) - 1.0,
        s_minus.iter().map(|&s| weight(s)).collect(),
    ))
}

/// `k` distinct action indices other than `gold`, uniform without
/// replacement, drawn from `n_actions` labels.
pub fn sample_negatives<R: Rng + ?Sized>(
    gold: usize,
    n_actions: usize,
    k: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if k >= n_actions {
        return Err(PolicyError::TooManyNegatives { k, n_actions });
    }
    if gold >= n_actions {
        return Err(PolicyError::Config(format!(
            "gold index {gold} outside {n_actions} actions"
        )));
    }
    Ok(index::sample(rng, n_actions - 1, k)
        .into_iter()
        .map(|i| if i >= gold { i + 1 } else { i })
        .collect())
}
