//! Dense matrices, numeric primitives and a reverse-mode gradient tape.
//!
//! Everything runs in `f64` so finite-difference checks stay meaningful at
//! `h = 1e-5`.

mod matrix;
pub mod ops;
mod tape;

pub use matrix::Matrix;
pub use ops::{cross_entropy, rms_norm, silu, softmax_rows, CrossEntropy};
pub use tape::{GradTape, Gradients, NodeId, ParamId};
pub(crate) use tape::{dot, rotate};

use crate::error::Result;

/// Relative error with denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Central difference `(f(x + h·e) - f(x - h·e)) / 2h` for entry `(r, c)`.
pub fn central_difference<F>(mut eval: F, x: &Matrix, (r, c): (usize, usize), h: f64) -> Result<f64>
where
    F: FnMut(&Matrix) -> Result<f64>,
{
    let mut probe = x.clone();
    let orig = x.get(r, c);
    probe.set(r, c, orig + h);
    let plus = eval(&probe)?;
    probe.set(r, c, orig - h);
    let minus = eval(&probe)?;
    Ok((plus - minus) / (2.0 * h))
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub analytic: Matrix,
    pub numeric: Matrix,
    pub max_rel_error: f64,
}

/// Compares the tape gradient of the scalar built by `f` against central
/// finite differences at every entry of `x`.
pub fn grad_check<'a, F>(f: F, x: &Matrix, h: f64) -> Result<GradCheck>
where
    F: Fn(&mut GradTape<'a>, NodeId) -> Result<NodeId>,
{
    let eval = |m: &Matrix| -> Result<f64> {
        let mut tape = GradTape::new();
        let (node, _) = tape.param(m.clone());
        let out = f(&mut tape, node)?;
        Ok(tape.scalar(out))
    };

    let mut tape = GradTape::new();
    let (node, pid) = tape.param(x.clone());
    let out = f(&mut tape, node)?;
    let grads = tape.backward(out)?;
    let analytic = grads.get(pid).cloned().unwrap_or_else(|| Matrix::zeros(x.rows(), x.cols()));

    let mut numeric = Matrix::zeros(x.rows(), x.cols());
    let mut worst: f64 = 0.0;
    for r in 0..x.rows() {
        for c in 0..x.cols() {
            let n = central_difference(eval, x, (r, c), h)?;
            numeric.set(r, c, n);
            worst = worst.max(relative_error(analytic.get(r, c), n));
        }
    }
    Ok(GradCheck { analytic, numeric, max_rel_error: worst })
}
