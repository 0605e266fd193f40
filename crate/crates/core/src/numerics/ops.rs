//! Pure numeric primitives shared by the forward pass and the tape.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// `xᵢ·gainᵢ / sqrt(mean(x²) + eps)`.
pub fn rms_norm(x: &[f64], gain: &[f64], eps: f64) -> Result<Vec<f64>> {
    if x.len() != gain.len() {
        return Err(Error::Shape(format!("rms_norm: x has {} entries, gain has {}", x.len(), gain.len())));
    }
    let inv = inv_rms(x, eps);
    Ok(x.iter().zip(gain).map(|(v, g)| v * g * inv).collect())
}

#[inline]
pub(crate) fn inv_rms(x: &[f64], eps: f64) -> f64 {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    1.0 / (ms + eps).sqrt()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// d/dx silu(x).
#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Result of a masked mean cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossEntropy {
    pub loss: f64,
    /// Number of positions that contributed.
    pub counted: usize,
    /// Set when every position was masked out; `loss` is then 0.
    pub empty_mask: bool,
}

/// Mean over unmasked rows of `-log softmax(logits)[target]`, using a stable
/// log-sum-exp.
pub fn cross_entropy(logits: &Matrix, targets: &[usize], mask: &[bool]) -> Result<CrossEntropy> {
    check_ce_inputs(logits, targets, mask)?;
    let mut total = 0.0;
    let mut counted = 0;
    for (r, (&t, &m)) in targets.iter().zip(mask).enumerate() {
        if m {
            total += nll_row(logits.row(r), t);
            counted += 1;
        }
    }
    if counted == 0 {
        log::warn!("cross_entropy: every position masked, loss defined as 0");
        return Ok(CrossEntropy { loss: 0.0, counted, empty_mask: true });
    }
    Ok(CrossEntropy { loss: total / counted as f64, counted, empty_mask: false })
}

pub(crate) fn check_ce_inputs(logits: &Matrix, targets: &[usize], mask: &[bool]) -> Result<()> {
    if targets.len() != logits.rows() || mask.len() != logits.rows() {
        return Err(Error::Shape(format!(
            "cross_entropy: {} logit rows, {} targets, {} mask entries",
            logits.rows(),
            targets.len(),
            mask.len()
        )));
    }
    if let Some((i, &t)) = targets.iter().enumerate().find(|(_, &t)| t >= logits.cols()) {
        return Err(Error::TokenOutOfRange { position: i, id: t, vocab: logits.cols() });
    }
    Ok(())
}

#[inline]
pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[inline]
pub(crate) fn nll_row(row: &[f64], target: usize) -> f64 {
    log_sum_exp(row) - row[target]
}
