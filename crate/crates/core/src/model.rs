//! Tiny decoder-only transformer with LLaMA-style named projections, adapter
//! attachment and greedy decoding.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lora::{self, init_adapter, LoraAdapter, LoraConfig, ModelGeometry, TargetModule};
use crate::numerics::{dot, ops, rotate, silu, GradTape, Matrix, NodeId, ParamId};

/// Uniform init bounds. Projections use `U(±projection/√fan_in)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitScales {
    pub embedding: f64,
    pub projection: f64,
    pub head: f64,
}

impl Default for InitScales {
    fn default() -> Self {
        Self { embedding: 0.2, projection: 1.0, head: 1.0 }
    }
}

/// Weights of one decoder block. Projections are stored `(out, in)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub attn_norm: Matrix,
    pub q_proj: Matrix,
    pub k_proj: Matrix,
    pub v_proj: Matrix,
    pub o_proj: Matrix,
    pub ffn_norm: Matrix,
    pub gate_proj: Matrix,
    pub up_proj: Matrix,
    pub down_proj: Matrix,
}

impl LayerWeights {
    pub fn weight(&self, module: TargetModule) -> &Matrix {
        match module {
            TargetModule::QProj => &self.q_proj,
            TargetModule::KProj => &self.k_proj,
            TargetModule::VProj => &self.v_proj,
            TargetModule::OProj => &self.o_proj,
            TargetModule::GateProj => &self.gate_proj,
            TargetModule::UpProj => &self.up_proj,
            TargetModule::DownProj => &self.down_proj,
        }
    }

    pub fn weight_mut(&mut self, module: TargetModule) -> &mut Matrix {
        match module {
            TargetModule::QProj => &mut self.q_proj,
            TargetModule::KProj => &mut self.k_proj,
            TargetModule::VProj => &mut self.v_proj,
            TargetModule::OProj => &mut self.o_proj,
            TargetModule::GateProj => &mut self.gate_proj,
            TargetModule::UpProj => &mut self.up_proj,
            TargetModule::DownProj => &mut self.down_proj,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerModel {
    pub geometry: ModelGeometry,
    pub embed: Matrix,
    pub layers: Vec<LayerWeights>,
    pub final_norm: Matrix,
    pub lm_head: Matrix,
    /// Set once adapters are attached; the training loop never writes base
    /// weights while this holds.
    pub frozen: bool,
}

/// Deterministic initialization: small-uniform projections, ones for norm gains.
pub fn build_model(geometry: ModelGeometry, seed: u64) -> Result<TransformerModel> {
    build_model_with(geometry, seed, InitScales::default())
}

pub fn build_model_with(geometry: ModelGeometry, seed: u64, scales: InitScales) -> Result<TransformerModel> {
    geometry.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = &geometry;
    let embed = Matrix::uniform(g.vocab_size, g.d_model, scales.embedding, &mut rng);
    let proj = |m: TargetModule, rng: &mut ChaCha8Rng| {
        let (o, i) = g.module_shape(m);
        Matrix::uniform(o, i, scales.projection / (i as f64).sqrt(), rng)
    };
    let layers = (0..g.n_layers)
        .map(|_| LayerWeights {
            attn_norm: Matrix::filled(1, g.d_model, 1.0),
            q_proj: proj(TargetModule::QProj, &mut rng),
            k_proj: proj(TargetModule::KProj, &mut rng),
            v_proj: proj(TargetModule::VProj, &mut rng),
            o_proj: proj(TargetModule::OProj, &mut rng),
            ffn_norm: Matrix::filled(1, g.d_model, 1.0),
            gate_proj: proj(TargetModule::GateProj, &mut rng),
            up_proj: proj(TargetModule::UpProj, &mut rng),
            down_proj: proj(TargetModule::DownProj, &mut rng),
        })
        .collect();
    let final_norm = Matrix::filled(1, g.d_model, 1.0);
    let lm_head = Matrix::uniform(g.vocab_size, g.d_model, scales.head, &mut rng);
    Ok(TransformerModel { geometry, embed, layers, final_norm, lm_head, frozen: false })
}

impl TransformerModel {
    /// Every weight with its canonical name, in a fixed order.
    pub fn named_weights(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![("embed".to_string(), &self.embed)];
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layers.{i}.attn_norm"), &l.attn_norm));
            for m in TargetModule::ALL {
                out.push((format!("layers.{i}.{m}"), l.weight(m)));
                if m == TargetModule::OProj {
                    out.push((format!("layers.{i}.ffn_norm"), &l.ffn_norm));
                }
            }
        }
        out.push(("final_norm".to_string(), &self.final_norm));
        out.push(("lm_head".to_string(), &self.lm_head));
        out
    }

    pub fn named_weights_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = vec![("embed".to_string(), &mut self.embed)];
        for (i, l) in self.layers.iter_mut().enumerate() {
            let LayerWeights { attn_norm, q_proj, k_proj, v_proj, o_proj, ffn_norm, gate_proj, up_proj, down_proj } = l;
            out.push((format!("layers.{i}.attn_norm"), attn_norm));
            out.push((format!("layers.{i}.q_proj"), q_proj));
            out.push((format!("layers.{i}.k_proj"), k_proj));
            out.push((format!("layers.{i}.v_proj"), v_proj));
            out.push((format!("layers.{i}.o_proj"), o_proj));
            out.push((format!("layers.{i}.ffn_norm"), ffn_norm));
            out.push((format!("layers.{i}.gate_proj"), gate_proj));
            out.push((format!("layers.{i}.up_proj"), up_proj));
            out.push((format!("layers.{i}.down_proj"), down_proj));
        }
        out.push(("final_norm".to_string(), &mut self.final_norm));
        out.push(("lm_head".to_string(), &mut self.lm_head));
        out
    }

    pub fn param_count(&self) -> u64 {
        self.named_weights().iter().map(|(_, m)| m.len() as u64).sum()
    }

    /// SHA-256 over weight names, shapes and little-endian values.
    pub fn checksum(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for (name, m) in self.named_weights() {
            h.update(name.as_bytes());
            h.update((m.rows() as u64).to_le_bytes());
            h.update((m.cols() as u64).to_le_bytes());
            h.update(m.to_le_bytes());
        }
        h.finalize().into()
    }

    pub fn check_shapes(&self) -> Result<()> {
        let g = &self.geometry;
        let mut expect = vec![((g.vocab_size, g.d_model), &self.embed, "embed".to_string())];
        for (i, l) in self.layers.iter().enumerate() {
            expect.push(((1, g.d_model), &l.attn_norm, format!("layers.{i}.attn_norm")));
            expect.push(((1, g.d_model), &l.ffn_norm, format!("layers.{i}.ffn_norm")));
            for m in TargetModule::ALL {
                expect.push((g.module_shape(m), l.weight(m), format!("layers.{i}.{m}")));
            }
        }
        expect.push(((1, g.d_model), &self.final_norm, "final_norm".into()));
        expect.push(((g.vocab_size, g.d_model), &self.lm_head, "lm_head".into()));
        if self.layers.len() != g.n_layers {
            return Err(Error::Shape(format!("{} layers for geometry with {}", self.layers.len(), g.n_layers)));
        }
        for (shape, m, name) in expect {
            if m.shape() != shape {
                return Err(Error::Shape(format!("{name}: {:?}, geometry wants {shape:?}", m.shape())));
            }
        }
        Ok(())
    }
}

/// Key of an adapter: layer index and host module.
pub type AdapterKey = (usize, TargetModule);

/// A frozen base model with one adapter per targeted projection per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedModel {
    pub base: TransformerModel,
    pub adapters: BTreeMap<AdapterKey, LoraAdapter>,
    pub config: LoraConfig,
}

impl AdaptedModel {
    /// Freezes `base` and attaches fresh adapters seeded by `config.seed`.
    pub fn attach(mut base: TransformerModel, config: LoraConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut adapters = BTreeMap::new();
        for layer in 0..base.geometry.n_layers {
            for &m in &config.target_modules {
                let shape = base.geometry.module_shape(m);
                let a = init_adapter(format!("layers.{layer}.{m}"), shape, &config, &mut rng)?;
                adapters.insert((layer, m), a);
            }
        }
        base.frozen = true;
        Ok(Self { base, adapters, config })
    }

    /// Checks the attachment invariants: exact key coverage and host shapes.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.base.check_shapes()?;
        let expected: Vec<AdapterKey> = (0..self.base.geometry.n_layers)
            .flat_map(|l| self.config.target_modules.iter().map(move |&m| (l, m)))
            .collect();
        let actual: Vec<AdapterKey> = self.adapters.keys().copied().collect();
        if expected != actual {
            return Err(Error::Shape("adapter set does not match target modules × layers".into()));
        }
        for (&(l, m), a) in &self.adapters {
            let host = self.base.layers[l].weight(m).shape();
            if a.host_shape != host || a.rank() != self.config.rank {
                return Err(Error::Shape(format!(
                    "{}: adapter for {:?} rank {}, host is {host:?} rank {}",
                    a.module,
                    a.host_shape,
                    a.rank(),
                    self.config.rank
                )));
            }
        }
        Ok(())
    }

    pub fn trainable_params(&self) -> u64 {
        self.adapters.values().map(|a| a.param_count() as u64).sum()
    }

    /// Base model with every adapter folded into its host weight.
    pub fn merged(&self) -> Result<TransformerModel> {
        let mut out = self.base.clone();
        for (&(l, m), a) in &self.adapters {
            let w = out.layers[l].weight_mut(m);
            *w = lora::merge(w, a, &self.config)?;
        }
        out.frozen = false;
        Ok(out)
    }
}

/// Anything that can produce next-token logits.
pub trait LanguageModel {
    fn geometry(&self) -> &ModelGeometry;

    /// Records the forward pass on `tape`, with adapters as constants.
    fn record<'a>(&'a self, tape: &mut GradTape<'a>, tokens: &[usize]) -> Result<NodeId>;

    /// Base weights plus adapters and their scaling, for cached inference.
    fn parts(&self) -> (&TransformerModel, Option<(&BTreeMap<AdapterKey, LoraAdapter>, f64)>);
}

impl LanguageModel for TransformerModel {
    fn geometry(&self) -> &ModelGeometry {
        &self.geometry
    }

    fn record<'a>(&'a self, tape: &mut GradTape<'a>, tokens: &[usize]) -> Result<NodeId> {
        record_forward(tape, self, &AdapterNodes::default(), tokens)
    }

    fn parts(&self) -> (&TransformerModel, Option<(&BTreeMap<AdapterKey, LoraAdapter>, f64)>) {
        (self, None)
    }
}

impl LanguageModel for AdaptedModel {
    fn geometry(&self) -> &ModelGeometry {
        &self.base.geometry
    }

    fn record<'a>(&'a self, tape: &mut GradTape<'a>, tokens: &[usize]) -> Result<NodeId> {
        let mut nodes = AdapterNodes { scaling: self.config.scaling(), ..Default::default() };
        for (&key, a) in &self.adapters {
            let down = tape.constant(&a.down);
            let up = tape.constant(&a.up);
            nodes.map.insert(key, (down, up));
        }
        record_forward(tape, &self.base, &nodes, tokens)
    }

    fn parts(&self) -> (&TransformerModel, Option<(&BTreeMap<AdapterKey, LoraAdapter>, f64)>) {
        (&self.base, Some((&self.adapters, self.config.scaling())))
    }
}

/// Adapter factors already placed on a tape, keyed like
/// [`AdaptedModel::adapters`].
#[derive(Debug, Default)]
pub(crate) struct AdapterNodes {
    pub map: BTreeMap<AdapterKey, (NodeId, NodeId)>,
    pub scaling: f64,
    /// Per-key constant dropout masks on the adapter input path.
    pub dropout: BTreeMap<AdapterKey, NodeId>,
}

impl AdapterNodes {
    /// Places every adapter of `model` on `tape` as a trainable parameter.
    /// Returned ids follow the adapters' key order, `down` before `up`.
    pub fn trainable<'a>(tape: &mut GradTape<'a>, model: &'a AdaptedModel) -> (Self, Vec<(AdapterKey, ParamId, ParamId)>) {
        let mut nodes = AdapterNodes { scaling: model.config.scaling(), ..Default::default() };
        let mut ids = Vec::with_capacity(model.adapters.len());
        for (&key, a) in &model.adapters {
            let (down, down_id) = tape.param(&a.down);
            let (up, up_id) = tape.param(&a.up);
            nodes.map.insert(key, (down, up));
            ids.push((key, down_id, up_id));
        }
        (nodes, ids)
    }
}

fn check_tokens(g: &ModelGeometry, tokens: &[usize]) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::EmptyInput("forward needs at least one token".into()));
    }
    if tokens.len() > g.max_seq_len {
        return Err(Error::SequenceTooLong { len: tokens.len(), max: g.max_seq_len });
    }
    if let Some((position, &id)) = tokens.iter().enumerate().find(|(_, &t)| t >= g.vocab_size) {
        return Err(Error::TokenOutOfRange { position, id, vocab: g.vocab_size });
    }
    Ok(())
}

fn projection(
    tape: &mut GradTape<'_>,
    x: NodeId,
    w: NodeId,
    key: AdapterKey,
    adapters: &AdapterNodes,
) -> Result<NodeId> {
    let base = tape.matmul_t(x, w)?;
    let Some(&(down, up)) = adapters.map.get(&key) else {
        return Ok(base);
    };
    let input = match adapters.dropout.get(&key) {
        Some(&mask) => tape.hadamard(x, mask)?,
        None => x,
    };
    let low = tape.matmul_t(input, down)?;
    let delta = tape.matmul_t(low, up)?;
    let delta = tape.scale(delta, adapters.scaling);
    tape.add(base, delta)
}

/// Records the full forward pass; returns the `T × vocab` logits node.
pub(crate) fn record_forward<'a>(
    tape: &mut GradTape<'a>,
    model: &'a TransformerModel,
    adapters: &AdapterNodes,
    tokens: &[usize],
) -> Result<NodeId> {
    let g = &model.geometry;
    check_tokens(g, tokens)?;
    let mut emb = Matrix::zeros(tokens.len(), g.d_model);
    for (r, &t) in tokens.iter().enumerate() {
        emb.row_mut(r).copy_from_slice(model.embed.row(t));
    }
    let mut x = tape.constant(emb);
    for (li, layer) in model.layers.iter().enumerate() {
        let gain = tape.constant(&layer.attn_norm);
        let h = tape.rms_norm(x, gain, g.norm_eps)?;
        let proj = |tape: &mut GradTape<'a>, input: NodeId, m: TargetModule| {
            let w = tape.constant(layer.weight(m));
            projection(tape, input, w, (li, m), adapters)
        };
        let q = proj(tape, h, TargetModule::QProj)?;
        let k = proj(tape, h, TargetModule::KProj)?;
        let v = proj(tape, h, TargetModule::VProj)?;
        let q = tape.rope(q, g.head_dim, g.rope_base)?;
        let k = tape.rope(k, g.head_dim, g.rope_base)?;
        let attn = tape.causal_attention(q, k, v, g.n_heads, g.n_kv_heads, g.head_dim)?;
        let o = proj(tape, attn, TargetModule::OProj)?;
        x = tape.add(x, o)?;

        let gain = tape.constant(&layer.ffn_norm);
        let h = tape.rms_norm(x, gain, g.norm_eps)?;
        let gate = proj(tape, h, TargetModule::GateProj)?;
        let up = proj(tape, h, TargetModule::UpProj)?;
        let act = tape.swiglu(gate, up)?;
        let down = proj(tape, act, TargetModule::DownProj)?;
        x = tape.add(x, down)?;
    }
    let gain = tape.constant(&model.final_norm);
    let h = tape.rms_norm(x, gain, g.norm_eps)?;
    let head = tape.constant(&model.lm_head);
    tape.matmul_t(h, head)
}

/// One logits row per input position.
pub fn forward<M: LanguageModel + ?Sized>(model: &M, tokens: &[usize]) -> Result<Matrix> {
    let mut tape = GradTape::new();
    let out = model.record(&mut tape, tokens)?;
    let logits = tape.value(out).clone();
    if !logits.is_finite() {
        return Err(Error::Invariant("non-finite logits".into()));
    }
    Ok(logits)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

struct CachedProjection {
    weight_t: Matrix,
    adapter: Option<(Matrix, Matrix)>,
}

impl CachedProjection {
    fn apply(&self, x: &Matrix, scaling: f64) -> Result<Matrix> {
        let base = x.matmul(&self.weight_t)?;
        let Some((down_t, up_t)) = &self.adapter else {
            return Ok(base);
        };
        let delta = x.matmul(down_t)?.matmul(up_t)?;
        base.add(&delta.scale(scaling))
    }
}

/// Incremental inference with cached keys and values.
///
/// Each pushed token costs one row of work per layer instead of a full
/// recompute. Per-row arithmetic follows the tape forward in the same order,
/// so logits match [`forward`] bit for bit.
pub struct KvCache<'m> {
    model: &'m TransformerModel,
    scaling: f64,
    proj: Vec<Vec<CachedProjection>>,
    head_t: Matrix,
    keys: Vec<Vec<Vec<f64>>>,
    values: Vec<Vec<Vec<f64>>>,
}

impl<'m> KvCache<'m> {
    pub fn new<M: LanguageModel + ?Sized>(model: &'m M) -> Self {
        let (base, adapters) = model.parts();
        let proj = base
            .layers
            .iter()
            .enumerate()
            .map(|(l, layer)| {
                TargetModule::ALL
                    .iter()
                    .map(|&m| CachedProjection {
                        weight_t: layer.weight(m).transpose(),
                        adapter: adapters
                            .and_then(|(map, _)| map.get(&(l, m)))
                            .map(|a| (a.down.transpose(), a.up.transpose())),
                    })
                    .collect()
            })
            .collect();
        Self {
            model: base,
            scaling: adapters.map_or(0.0, |(_, s)| s),
            proj,
            head_t: base.lm_head.transpose(),
            keys: vec![Vec::new(); base.layers.len()],
            values: vec![Vec::new(); base.layers.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.keys.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn project(&self, layer: usize, m: TargetModule, x: &Matrix) -> Result<Matrix> {
        let i = TargetModule::ALL.iter().position(|&t| t == m).expect("module listed");
        self.proj[layer][i].apply(x, self.scaling)
    }

    /// Feeds `token` at the next position and returns its logits.
    pub fn push(&mut self, token: usize) -> Result<Vec<f64>> {
        let g = &self.model.geometry;
        let pos = self.len();
        if pos >= g.max_seq_len {
            return Err(Error::SequenceTooLong { len: pos + 1, max: g.max_seq_len });
        }
        if token >= g.vocab_size {
            return Err(Error::TokenOutOfRange { position: pos, id: token, vocab: g.vocab_size });
        }
        let mut x = Matrix::from_vec(1, g.d_model, self.model.embed.row(token).to_vec())?;
        for (li, layer) in self.model.layers.iter().enumerate() {
            let h = norm_row(&x, &layer.attn_norm, g.norm_eps);
            let q = self.project(li, TargetModule::QProj, &h)?;
            let k = self.project(li, TargetModule::KProj, &h)?;
            let v = self.project(li, TargetModule::VProj, &h)?;
            let q = rotate(&q, g.head_dim, g.rope_base, 1.0, pos);
            let k = rotate(&k, g.head_dim, g.rope_base, 1.0, pos);
            self.keys[li].push(k.row(0).to_vec());
            self.values[li].push(v.row(0).to_vec());
            let attn = self.attend(li, q.row(0));
            let o = self.project(li, TargetModule::OProj, &attn)?;
            x = x.add(&o)?;

            let h = norm_row(&x, &layer.ffn_norm, g.norm_eps);
            let gate = self.project(li, TargetModule::GateProj, &h)?;
            let up = self.project(li, TargetModule::UpProj, &h)?;
            let act: Vec<f64> = gate.row(0).iter().zip(up.row(0)).map(|(&a, &b)| silu(a) * b).collect();
            let act = Matrix::from_vec(1, act.len(), act)?;
            let down = self.project(li, TargetModule::DownProj, &act)?;
            x = x.add(&down)?;
        }
        let h = norm_row(&x, &self.model.final_norm, g.norm_eps);
        let logits = h.matmul(&self.head_t)?;
        if !logits.is_finite() {
            return Err(Error::Invariant("non-finite logits".into()));
        }
        Ok(logits.row(0).to_vec())
    }

    fn attend(&self, layer: usize, q: &[f64]) -> Matrix {
        let g = &self.model.geometry;
        let (hd, group) = (g.head_dim, g.n_heads / g.n_kv_heads);
        let scale = 1.0 / (hd as f64).sqrt();
        let (keys, values) = (&self.keys[layer], &self.values[layer]);
        let mut out = Matrix::zeros(1, g.n_heads * hd);
        let mut p = vec![0.0; keys.len()];
        for h in 0..g.n_heads {
            let (qo, ko) = (h * hd, (h / group) * hd);
            let qi = &q[qo..qo + hd];
            for (s, kj) in p.iter_mut().zip(keys) {
                *s = dot(qi, &kj[ko..ko + hd]) * scale;
            }
            ops::softmax_in_place(&mut p);
            let orow = &mut out.row_mut(0)[qo..qo + hd];
            for (&pj, vj) in p.iter().zip(values) {
                for (o, &x) in orow.iter_mut().zip(&vj[ko..ko + hd]) {
                    *o += pj * x;
                }
            }
        }
        out
    }
}

fn norm_row(x: &Matrix, gain: &Matrix, eps: f64) -> Matrix {
    let mut out = x.clone();
    let s = ops::inv_rms(x.row(0), eps);
    for (o, g) in out.row_mut(0).iter_mut().zip(gain.row(0)) {
        *o *= g * s;
    }
    out
}

/// Tokens dropped from the front of the window each time the context fills.
pub const fn window_slide(limit: usize) -> usize {
    if limit >= 32 {
        limit / 16
    } else {
        1
    }
}

/// Appends argmax tokens until `stop` is produced or `max_new` tokens were
/// added. Returns prompt plus continuation; the stop token itself is not
/// appended.
///
/// When the sequence outgrows the context, the window restarts from the
/// last `limit - window_slide(limit)` tokens, so positions always begin at
/// zero as they do in training.
pub fn greedy_decode<M: LanguageModel + ?Sized>(
    model: &M,
    prompt: &[usize],
    max_new: usize,
    stop: Option<usize>,
) -> Result<Vec<usize>> {
    if prompt.is_empty() {
        return Err(Error::EmptyInput("prompt".into()));
    }
    let limit = model.geometry().max_seq_len;
    if prompt.len() > limit {
        return Err(Error::SequenceTooLong { len: prompt.len(), max: limit });
    }
    let mut cache = KvCache::new(model);
    let mut last = Vec::new();
    for &t in prompt {
        last = cache.push(t)?;
    }
    let mut seq = prompt.to_vec();
    for _ in 0..max_new {
        let next = argmax(&last);
        if Some(next) == stop {
            break;
        }
        seq.push(next);
        if cache.len() == limit {
            cache = KvCache::new(model);
            for &t in &seq[seq.len() - (limit - window_slide(limit))..] {
                last = cache.push(t)?;
            }
        } else {
            last = cache.push(next)?;
        }
    }
    Ok(seq)
}

/// Draws an inverted-dropout mask (`0` or `1/(1-p)`) of the given shape.
pub(crate) fn dropout_mask<R: Rng + ?Sized>(rows: usize, cols: usize, p: f64, rng: &mut R) -> Matrix {
    let keep = 1.0 / (1.0 - p);
    let data = (0..rows * cols).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
    Matrix::from_vec(rows, cols, data).expect("mask shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> TransformerModel {
        build_model(ModelGeometry::toy(40), 11).unwrap()
    }

    fn tokens(seed: u64, n: usize, vocab: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(0..vocab)).collect()
    }

    #[test]
    fn seeded_build_is_reproducible() {
        assert_eq!(toy(), toy());
        assert_ne!(toy().checksum(), build_model(ModelGeometry::toy(40), 12).unwrap().checksum());
    }

    #[test]
    fn param_count_matches_geometry() {
        let m = toy();
        m.check_shapes().unwrap();
        let g = &m.geometry;
        // independent shape sum
        let d = g.d_model as u64;
        let layer = 4 * d * d + 3 * d * g.d_ff as u64 + 2 * d;
        let oracle = 2 * g.vocab_size as u64 * d + g.n_layers as u64 * layer + d;
        assert_eq!(m.param_count(), oracle);
        assert_eq!(m.param_count(), g.total_base_params());
    }

    #[test]
    fn forward_shapes_and_errors() {
        let m = toy();
        let logits = forward(&m, &tokens(1, 9, 40)).unwrap();
        assert_eq!(logits.shape(), (9, 40));
        assert!(matches!(forward(&m, &[]), Err(Error::EmptyInput(_))));
        assert!(matches!(forward(&m, &[1, 40]), Err(Error::TokenOutOfRange { position: 1, .. })));
        let long = vec![0; m.geometry.max_seq_len + 1];
        assert!(matches!(forward(&m, &long), Err(Error::SequenceTooLong { .. })));
    }

    #[test]
    fn fresh_adapters_are_transparent() {
        let base = toy();
        let adapted = AdaptedModel::attach(base.clone(), LoraConfig::default()).unwrap();
        adapted.validate().unwrap();
        assert!(adapted.base.frozen);
        for seed in 0..5 {
            let t = tokens(seed, 12, 40);
            assert_eq!(forward(&base, &t).unwrap(), forward(&adapted, &t).unwrap());
        }
    }

    #[test]
    fn causal_masking() {
        let m = toy();
        let mut t = tokens(3, 10, 40);
        let before = forward(&m, &t).unwrap();
        t[7] = (t[7] + 5) % 40;
        t[9] = (t[9] + 1) % 40;
        let after = forward(&m, &t).unwrap();
        for r in 0..7 {
            assert_eq!(before.row(r), after.row(r));
        }
        assert_ne!(before.row(7), after.row(7));
    }

    #[test]
    fn positions_matter() {
        let m = toy();
        let a = forward(&m, &[3, 8, 5]).unwrap();
        let b = forward(&m, &[8, 3, 5]).unwrap();
        assert_ne!(a.row(2), b.row(2));
    }

    #[test]
    fn merged_weights_match_adapter_path() {
        let mut adapted = AdaptedModel::attach(toy(), LoraConfig::default().with_seed(5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for a in adapted.adapters.values_mut() {
            a.up = Matrix::gaussian(a.up.rows(), a.up.cols(), 0.05, &mut rng);
        }
        let merged = adapted.merged().unwrap();
        let t = tokens(4, 20, 40);
        let d = forward(&adapted, &t).unwrap().max_abs_diff(&forward(&merged, &t).unwrap());
        assert!(d < 1e-9, "{d}");
        assert!(d > 0.0 || forward(&adapted, &t).unwrap() != forward(&adapted.base, &t).unwrap());
    }

    #[test]
    fn decode_contract() {
        let m = toy();
        let prompt = tokens(5, 6, 40);
        assert_eq!(greedy_decode(&m, &prompt, 0, None).unwrap(), prompt);
        let a = greedy_decode(&m, &prompt, 8, Some(2)).unwrap();
        let b = greedy_decode(&m, &prompt, 8, Some(2)).unwrap();
        assert_eq!(a, b);
        assert!(a.len() <= prompt.len() + 8);
        assert!(matches!(greedy_decode(&m, &[], 3, None), Err(Error::EmptyInput(_))));
        let long = vec![0; m.geometry.max_seq_len + 1];
        assert!(matches!(greedy_decode(&m, &long, 1, None), Err(Error::SequenceTooLong { .. })));
    }

    fn decode_by_recompute<M: LanguageModel>(m: &M, prompt: &[usize], max_new: usize, stop: Option<usize>) -> Vec<usize> {
        let limit = m.geometry().max_seq_len;
        let mut seq = prompt.to_vec();
        let mut start = 0;
        for _ in 0..max_new {
            let logits = forward(m, &seq[start..]).unwrap();
            let next = argmax(logits.row(logits.rows() - 1));
            if Some(next) == stop {
                break;
            }
            seq.push(next);
            if seq.len() - start > limit {
                start = seq.len() - (limit - window_slide(limit));
            }
        }
        seq
    }

    #[test]
    fn cached_logits_match_forward_exactly() {
        let mut adapted = AdaptedModel::attach(toy(), LoraConfig::default().with_seed(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for a in adapted.adapters.values_mut() {
            a.up = Matrix::gaussian(a.up.rows(), a.up.cols(), 0.05, &mut rng);
        }
        let t = tokens(6, 30, 40);
        let full = forward(&adapted, &t).unwrap();
        let mut cache = KvCache::new(&adapted);
        for (r, &tok) in t.iter().enumerate() {
            assert_eq!(cache.push(tok).unwrap(), full.row(r), "row {r}");
        }
        assert_eq!(cache.len(), 30);
        let base = toy();
        let full = forward(&base, &t).unwrap();
        let mut cache = KvCache::new(&base);
        for (r, &tok) in t.iter().enumerate() {
            assert_eq!(cache.push(tok).unwrap(), full.row(r));
        }
    }

    #[test]
    fn cached_decode_matches_recompute() {
        let m = toy();
        for seed in 0..4 {
            let prompt = tokens(seed, 5, 40);
            assert_eq!(greedy_decode(&m, &prompt, 20, Some(2)).unwrap(), decode_by_recompute(&m, &prompt, 20, Some(2)));
        }
        let mut g = ModelGeometry::toy(40);
        g.max_seq_len = 12;
        let small = build_model(g, 3).unwrap();
        let prompt = tokens(9, 4, 40);
        let out = greedy_decode(&small, &prompt, 50, None).unwrap();
        assert_eq!(out.len(), 54);
        assert_eq!(out, decode_by_recompute(&small, &prompt, 50, None));
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[5.0, 5.0]), 0);
    }

    #[test]
    fn adapter_validation_catches_missing_keys() {
        let mut adapted = AdaptedModel::attach(toy(), LoraConfig::default()).unwrap();
        adapted.adapters.remove(&(1, TargetModule::VProj));
        assert!(adapted.validate().is_err());
    }
}
