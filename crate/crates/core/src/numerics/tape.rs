//! Reverse-mode differentiation over matrix-level primitives.
//!
//! A [`GradTape`] records each primitive as it is evaluated. Leaves are either
//! constants or registered trainable parameters; only the latter receive
//! gradients from [`GradTape::backward`]. Nodes that depend on no trainable
//! leaf are never visited during the backward sweep.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::numerics::ops::{self, check_ce_inputs, inv_rms, log_sum_exp, silu, silu_grad};
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Handle returned by [`GradTape::param`]; indexes [`Gradients`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    /// `a · bᵀ`
    MatMulT(NodeId, NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    Hadamard(NodeId, NodeId),
    Sum(NodeId),
    RmsNorm { x: NodeId, gain: NodeId, inv_rms: Vec<f64> },
    Rope { x: NodeId, head_dim: usize, base: f64 },
    Attention { q: NodeId, k: NodeId, v: NodeId, n_heads: usize, n_kv_heads: usize, head_dim: usize, probs: Vec<Vec<f64>> },
    SwiGlu { gate: NodeId, up: NodeId },
    CrossEntropy { logits: NodeId, targets: Vec<usize>, mask: Vec<bool>, denom: f64, probs: Matrix },
}

struct Node<'a> {
    value: Cow<'a, Matrix>,
    op: Op,
    needs_grad: bool,
}

/// Gradients of a scalar with respect to every registered parameter.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient for `id`, or `None` when the loss does not depend on it.
    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: ParamId) -> Option<Matrix> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Single-writer record of one forward evaluation.
#[derive(Default)]
pub struct GradTape<'a> {
    nodes: Vec<Node<'a>>,
    n_params: usize,
}

impl<'a> GradTape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), n_params: 0 }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.get(0, 0)
    }

    /// Every recorded output, in recording order.
    pub fn outputs(&self) -> impl Iterator<Item = &Matrix> {
        self.nodes.iter().map(|n| n.value.as_ref())
    }

    fn push(&mut self, value: Cow<'a, Matrix>, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, m: impl Into<Cow<'a, Matrix>>) -> NodeId {
        self.push(m.into(), Op::Leaf, false)
    }

    /// Trainable input.
    pub fn param(&mut self, m: impl Into<Cow<'a, Matrix>>) -> (NodeId, ParamId) {
        let pid = ParamId(self.n_params);
        self.n_params += 1;
        (self.push(m.into(), Op::Param(pid), true), pid)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Cow::Owned(v), Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ`; the natural form for `x · Wᵀ` with `W` stored as (out, in).
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul_t(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Cow::Owned(v), Op::MatMulT(a, b), ng))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Cow::Owned(v), Op::Add(a, b), ng))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a).scale(s);
        let ng = self.needs(a);
        self.push(Cow::Owned(v), Op::Scale(a, s), ng)
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).hadamard(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Cow::Owned(v), Op::Hadamard(a, b), ng))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Matrix::filled(1, 1, self.value(a).sum());
        let ng = self.needs(a);
        self.push(Cow::Owned(v), Op::Sum(a), ng)
    }

    /// Row-wise RMS normalization with a (1 × cols) gain.
    pub fn rms_norm(&mut self, x: NodeId, gain: NodeId, eps: f64) -> Result<NodeId> {
        let (xv, gv) = (self.value(x), self.value(gain));
        if gv.rows() != 1 || gv.cols() != xv.cols() {
            return Err(Error::Shape(format!(
                "rms_norm: input {}x{} with gain {}x{}",
                xv.rows(),
                xv.cols(),
                gv.rows(),
                gv.cols()
            )));
        }
        let mut out = xv.clone();
        let mut inv = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let s = inv_rms(xv.row(r), eps);
            inv.push(s);
            for (o, g) in out.row_mut(r).iter_mut().zip(gv.row(0)) {
                *o *= g * s;
            }
        }
        let ng = self.needs(x) || self.needs(gain);
        Ok(self.push(Cow::Owned(out), Op::RmsNorm { x, gain, inv_rms: inv }, ng))
    }

    /// Rotary position embedding applied per head; row index is the position.
    pub fn rope(&mut self, x: NodeId, head_dim: usize, base: f64) -> Result<NodeId> {
        let xv = self.value(x);
        if !head_dim.is_multiple_of(2) || !xv.cols().is_multiple_of(head_dim) {
            return Err(Error::Shape(format!("rope: width {} with head_dim {head_dim}", xv.cols())));
        }
        let out = rotate(xv, head_dim, base, 1.0, 0);
        let ng = self.needs(x);
        Ok(self.push(Cow::Owned(out), Op::Rope { x, head_dim, base }, ng))
    }

    /// Causal scaled dot-product attention with grouped key/value heads.
    pub fn causal_attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        n_heads: usize,
        n_kv_heads: usize,
        head_dim: usize,
    ) -> Result<NodeId> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let t = qv.rows();
        if n_kv_heads == 0
            || !n_heads.is_multiple_of(n_kv_heads)
            || qv.cols() != n_heads * head_dim
            || kv.cols() != n_kv_heads * head_dim
            || vv.cols() != n_kv_heads * head_dim
            || kv.rows() != t
            || vv.rows() != t
        {
            return Err(Error::Shape(format!(
                "attention: q {}x{}, k {}x{}, v {}x{} for {n_heads}/{n_kv_heads} heads of {head_dim}",
                qv.rows(),
                qv.cols(),
                kv.rows(),
                kv.cols(),
                vv.rows(),
                vv.cols()
            )));
        }
        let group = n_heads / n_kv_heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut out = Matrix::zeros(t, n_heads * head_dim);
        let mut probs = Vec::with_capacity(n_heads);
        for h in 0..n_heads {
            let qo = h * head_dim;
            let ko = (h / group) * head_dim;
            // lower-triangular row-packed probabilities
            let mut p = vec![0.0; t * (t + 1) / 2];
            for i in 0..t {
                let base = i * (i + 1) / 2;
                let qi = &qv.row(i)[qo..qo + head_dim];
                let row = &mut p[base..base + i + 1];
                for (j, s) in row.iter_mut().enumerate() {
                    let kj = &kv.row(j)[ko..ko + head_dim];
                    *s = dot(qi, kj) * scale;
                }
                ops::softmax_in_place(row);
                let orow = &mut out.row_mut(i)[qo..qo + head_dim];
                for (j, &pj) in row.iter().enumerate() {
                    let vj = &vv.row(j)[ko..ko + head_dim];
                    for (o, &x) in orow.iter_mut().zip(vj) {
                        *o += pj * x;
                    }
                }
            }
            probs.push(p);
        }
        let ng = self.needs(q) || self.needs(k) || self.needs(v);
        Ok(self.push(Cow::Owned(out), Op::Attention { q, k, v, n_heads, n_kv_heads, head_dim, probs }, ng))
    }

    /// `silu(gate) ⊙ up`.
    pub fn swiglu(&mut self, gate: NodeId, up: NodeId) -> Result<NodeId> {
        let (g, u) = (self.value(gate), self.value(up));
        if g.shape() != u.shape() {
            return Err(Error::Shape(format!("swiglu: {:?} vs {:?}", g.shape(), u.shape())));
        }
        let data = g.data().iter().zip(u.data()).map(|(&a, &b)| silu(a) * b).collect();
        let v = Matrix::from_vec(g.rows(), g.cols(), data)?;
        let ng = self.needs(gate) || self.needs(up);
        Ok(self.push(Cow::Owned(v), Op::SwiGlu { gate, up }, ng))
    }

    /// Sum over unmasked rows of `-log softmax(logits)[target]`, divided by
    /// `denom`. Pass the masked count for a mean, or a batch-wide count when
    /// several tapes share one loss.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize], mask: &[bool], denom: f64) -> Result<NodeId> {
        let lv = self.value(logits);
        check_ce_inputs(lv, targets, mask)?;
        let mut probs = Matrix::zeros(lv.rows(), lv.cols());
        let mut total = 0.0;
        for (r, (&t, &m)) in targets.iter().zip(mask).enumerate() {
            if !m {
                continue;
            }
            let row = lv.row(r);
            let lse = log_sum_exp(row);
            total += lse - row[t];
            for (p, &x) in probs.row_mut(r).iter_mut().zip(row) {
                *p = (x - lse).exp();
            }
        }
        let loss = if denom > 0.0 { total / denom } else { 0.0 };
        let ng = self.needs(logits);
        Ok(self.push(
            Cow::Owned(Matrix::filled(1, 1, loss)),
            Op::CrossEntropy { logits, targets: targets.to_vec(), mask: mask.to_vec(), denom, probs },
            ng,
        ))
    }

    /// Reverse sweep from a 1×1 `loss` node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::Shape(format!("backward needs a scalar loss, got {:?}", lv.shape())));
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        let mut grads = vec![None; self.n_params];

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {}
                Op::Param(pid) => grads[pid.0] = Some(g),
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut adj, *a, g.matmul_t(self.value(*b))?);
                    }
                    if self.needs(*b) {
                        accumulate(&mut adj, *b, self.value(*a).t_matmul(&g)?);
                    }
                }
                Op::MatMulT(a, b) => {
                    // c = a·bᵀ: da = g·b, db = gᵀ·a
                    if self.needs(*a) {
                        accumulate(&mut adj, *a, g.matmul(self.value(*b))?);
                    }
                    if self.needs(*b) {
                        accumulate(&mut adj, *b, g.t_matmul(self.value(*a))?);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) && self.needs(*b) {
                        accumulate(&mut adj, *a, g.clone());
                        accumulate(&mut adj, *b, g);
                    } else if self.needs(*a) {
                        accumulate(&mut adj, *a, g);
                    } else if self.needs(*b) {
                        accumulate(&mut adj, *b, g);
                    }
                }
                Op::Scale(a, s) => accumulate(&mut adj, *a, g.scale(*s)),
                Op::Hadamard(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut adj, *a, g.hadamard(self.value(*b))?);
                    }
                    if self.needs(*b) {
                        accumulate(&mut adj, *b, g.hadamard(self.value(*a))?);
                    }
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut adj, *a, Matrix::filled(r, c, g.get(0, 0)));
                }
                Op::RmsNorm { x, gain, inv_rms } => {
                    let xv = self.value(*x);
                    let gv = self.value(*gain).row(0);
                    let n = xv.cols() as f64;
                    if self.needs(*x) {
                        let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                        for r in 0..xv.rows() {
                            let s = inv_rms[r];
                            let (xr, gr) = (xv.row(r), g.row(r));
                            let dot_: f64 = xr.iter().zip(gr).zip(gv).map(|((x, d), w)| x * d * w).sum();
                            let coef = s * s * s * dot_ / n;
                            for (j, o) in dx.row_mut(r).iter_mut().enumerate() {
                                *o = s * gv[j] * gr[j] - coef * xr[j];
                            }
                        }
                        accumulate(&mut adj, *x, dx);
                    }
                    if self.needs(*gain) {
                        let mut dg = Matrix::zeros(1, xv.cols());
                        for r in 0..xv.rows() {
                            let s = inv_rms[r];
                            for (j, o) in dg.row_mut(0).iter_mut().enumerate() {
                                *o += g.get(r, j) * xv.get(r, j) * s;
                            }
                        }
                        accumulate(&mut adj, *gain, dg);
                    }
                }
                Op::Rope { x, head_dim, base } => {
                    accumulate(&mut adj, *x, rotate(&g, *head_dim, *base, -1.0, 0));
                }
                Op::Attention { q, k, v, n_heads, n_kv_heads, head_dim, probs } => {
                    let (dq, dk, dv) =
                        attention_backward(self.value(*q), self.value(*k), self.value(*v), &g, *n_heads, *n_kv_heads, *head_dim, probs);
                    if self.needs(*q) {
                        accumulate(&mut adj, *q, dq);
                    }
                    if self.needs(*k) {
                        accumulate(&mut adj, *k, dk);
                    }
                    if self.needs(*v) {
                        accumulate(&mut adj, *v, dv);
                    }
                }
                Op::SwiGlu { gate, up } => {
                    let (gv, uv) = (self.value(*gate), self.value(*up));
                    if self.needs(*gate) {
                        let data =
                            g.data().iter().zip(gv.data()).zip(uv.data()).map(|((d, &a), b)| d * b * silu_grad(a)).collect();
                        accumulate(&mut adj, *gate, Matrix::from_vec(gv.rows(), gv.cols(), data)?);
                    }
                    if self.needs(*up) {
                        let data = g.data().iter().zip(gv.data()).map(|(d, &a)| d * silu(a)).collect();
                        accumulate(&mut adj, *up, Matrix::from_vec(gv.rows(), gv.cols(), data)?);
                    }
                }
                Op::CrossEntropy { logits, targets, mask, denom, probs } => {
                    let scale = if *denom > 0.0 { g.get(0, 0) / denom } else { 0.0 };
                    let mut d = probs.clone();
                    for (r, (&t, &m)) in targets.iter().zip(mask).enumerate() {
                        let row = d.row_mut(r);
                        if m {
                            row[t] -= 1.0;
                            for v in row.iter_mut() {
                                *v *= scale;
                            }
                        }
                    }
                    accumulate(&mut adj, *logits, d);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(adj: &mut [Option<Matrix>], id: NodeId, g: Matrix) {
    match &mut adj[id.0] {
        Some(existing) => existing.add_assign(&g).expect("adjoint shape"),
        slot @ None => *slot = Some(g),
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Rotates each (i, i + head_dim/2) pair by `sign · pos · base^(-2i/head_dim)`.
/// Row `r` sits at position `offset + r`.
pub(crate) fn rotate(x: &Matrix, head_dim: usize, base: f64, sign: f64, offset: usize) -> Matrix {
    let half = head_dim / 2;
    let inv_freq: Vec<f64> = (0..half).map(|i| base.powf(-((2 * i) as f64) / head_dim as f64)).collect();
    let mut out = x.clone();
    for pos in 0..x.rows() {
        let p = (offset + pos) as f64;
        let (sin, cos): (Vec<f64>, Vec<f64>) = inv_freq.iter().map(|f| (p * f).sin_cos()).unzip();
        let row_in = x.row(pos);
        let row = out.row_mut(pos);
        for h in 0..x.cols() / head_dim {
            let o = h * head_dim;
            for i in 0..half {
                let (a, b) = (row_in[o + i], row_in[o + i + half]);
                let s = sign * sin[i];
                row[o + i] = a * cos[i] - b * s;
                row[o + i + half] = a * s + b * cos[i];
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn attention_backward(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    g: &Matrix,
    n_heads: usize,
    n_kv_heads: usize,
    head_dim: usize,
    probs: &[Vec<f64>],
) -> (Matrix, Matrix, Matrix) {
    let t = q.rows();
    let group = n_heads / n_kv_heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut dq = Matrix::zeros(t, q.cols());
    let mut dk = Matrix::zeros(t, k.cols());
    let mut dv = Matrix::zeros(t, v.cols());
    let mut ds = vec![0.0; t];
    for h in 0..n_heads {
        let qo = h * head_dim;
        let ko = (h / group) * head_dim;
        let p = &probs[h];
        for i in 0..t {
            let base = i * (i + 1) / 2;
            let pi = &p[base..base + i + 1];
            let gi = &g.row(i)[qo..qo + head_dim];
            // dP_ij = g_i · v_j ; dv_j += P_ij g_i
            let mut weighted = 0.0;
            for j in 0..=i {
                let vj = &v.row(j)[ko..ko + head_dim];
                let dp = dot(gi, vj);
                ds[j] = dp;
                weighted += dp * pi[j];
                let dvj = &mut dv.row_mut(j)[ko..ko + head_dim];
                for (o, &x) in dvj.iter_mut().zip(gi) {
                    *o += pi[j] * x;
                }
            }
            for j in 0..=i {
                let s = pi[j] * (ds[j] - weighted) * scale;
                if s == 0.0 {
                    continue;
                }
                let kj = &k.row(j)[ko..ko + head_dim];
                let dqi = &mut dq.row_mut(i)[qo..qo + head_dim];
                for (o, &x) in dqi.iter_mut().zip(kj) {
                    *o += s * x;
                }
                let qi = &q.row(i)[qo..qo + head_dim];
                let dkj = &mut dk.row_mut(j)[ko..ko + head_dim];
                for (o, &x) in dkj.iter_mut().zip(qi) {
                    *o += s * x;
                }
            }
        }
    }
    (dq, dk, dv)
}
