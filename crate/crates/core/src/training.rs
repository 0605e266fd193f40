//! Frozen-base fine-tuning of the adapter factors, loss curves and the
//! rank × alpha × module-group ablation grid.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{self, encode_prompt, encode_query, DatasetSplit, Encoded, ExamplePair, Vocab};
use crate::error::{Error, Result};
use crate::exec::map_ordered;
use crate::lora::{count_lora_params, LoraConfig, ModelGeometry, ModuleGroup};
use crate::metrics::{evaluate_corpus, MetricReport};
use crate::model::{self, dropout_mask, AdaptedModel, AdapterKey, AdapterNodes, TransformerModel};
use crate::numerics::{GradTape, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_seq_len: usize,
    pub steps: usize,
    /// Seeds the data order and dropout masks.
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub schedule: LrSchedule,
}

/// Learning-rate multiplier over the run. The recipe uses `Constant`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Linear decay to zero at the last step.
    Linear,
    /// Half-cosine decay to zero at the last step.
    Cosine,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            batch_size: 8,
            max_seq_len: 256,
            steps: 2000,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            clip_norm: 1.0,
            schedule: LrSchedule::Constant,
        }
    }
}

impl TrainConfig {
    /// Learning rate for the 1-based optimizer step `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        let done = (step.saturating_sub(1) as f64 / self.steps.max(1) as f64).min(1.0);
        self.learning_rate
            * match self.schedule {
                LrSchedule::Constant => 1.0,
                LrSchedule::Linear => 1.0 - done,
                LrSchedule::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * done).cos()),
            }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning rate must be finite and nonnegative");
        }
        if self.batch_size == 0 || self.steps == 0 || self.max_seq_len < 3 {
            return bad("batch size and steps must be at least 1 and max_seq_len at least 3");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.eps > 0.0 && self.clip_norm > 0.0 && self.weight_decay >= 0.0) {
            return bad("eps and clip norm must be positive, weight decay nonnegative");
        }
        Ok(())
    }
}

/// Per-step training loss.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    points: Vec<(usize, f64)>,
}

impl LossCurve {
    pub fn push(&mut self, step: usize, loss: f64) -> Result<()> {
        if !loss.is_finite() {
            return Err(Error::Invariant(format!("non-finite loss at step {step}")));
        }
        if self.points.last().is_some_and(|&(s, _)| s >= step) {
            return Err(Error::Invariant(format!("loss curve steps must increase (got {step})")));
        }
        self.points.push((step, loss));
        Ok(())
    }

    pub fn points(&self) -> &[(usize, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn mean(points: &[(usize, f64)]) -> f64 {
        points.iter().map(|p| p.1).sum::<f64>() / points.len().max(1) as f64
    }

    pub fn mean_first(&self, n: usize) -> f64 {
        Self::mean(&self.points[..n.min(self.points.len())])
    }

    pub fn mean_last(&self, n: usize) -> f64 {
        Self::mean(&self.points[self.points.len().saturating_sub(n)..])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (s, l) in &self.points {
            let _ = writeln!(out, "{s},{l}");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut curve = LossCurve::default();
        for (i, line) in text.lines().enumerate().skip(1) {
            let parsed = line
                .split_once(',')
                .and_then(|(s, l)| Some((s.trim().parse::<usize>().ok()?, l.trim().parse::<f64>().ok()?)));
            let (s, l) = parsed.ok_or_else(|| Error::Record { index: i, message: format!("bad loss row {line:?}") })?;
            curve.push(s, l)?;
        }
        Ok(curve)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m: Matrix,
    v: Matrix,
}

/// AdamW moments for every adapter factor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptState {
    pub step: u64,
    moments: BTreeMap<(AdapterKey, bool), Moments>,
}

/// Mean masked loss and gradients of one batch, reduced in example order.
struct BatchGrads {
    loss: f64,
    /// Per adapter key: (d down, d up).
    grads: BTreeMap<AdapterKey, (Matrix, Matrix)>,
}

fn example_seed(seed: u64, step: u64, index: usize) -> u64 {
    seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

/// Loss contribution and adapter gradients of one encoded example; the loss
/// is normalized by `denom`, the masked-token count of the whole batch.
fn example_grads(
    model: &AdaptedModel,
    ex: &Encoded,
    denom: f64,
    dropout_seed: u64,
) -> Result<(f64, Vec<(AdapterKey, Matrix, Matrix)>)> {
    let inputs = &ex.tokens[..ex.tokens.len() - 1];
    let targets = &ex.tokens[1..];
    let mask = &ex.mask[1..];
    let mut tape = GradTape::new();
    let (mut nodes, ids) = AdapterNodes::trainable(&mut tape, model);
    if model.config.dropout > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
        for (&(layer, m), a) in &model.adapters {
            let mask = dropout_mask(inputs.len(), a.host_shape.1, model.config.dropout, &mut rng);
            let node = tape.constant(mask);
            nodes.dropout.insert((layer, m), node);
        }
    }
    let logits = model::record_forward(&mut tape, &model.base, &nodes, inputs)?;
    let loss = tape.cross_entropy(logits, targets, mask, denom)?;
    let value = tape.scalar(loss);
    let mut grads = tape.backward(loss)?;
    let out = ids
        .into_iter()
        .map(|(key, d, u)| {
            let (rank, host) = (model.config.rank, model.adapters[&key].host_shape);
            let gd = grads.take(d).unwrap_or_else(|| Matrix::zeros(rank, host.1));
            let gu = grads.take(u).unwrap_or_else(|| Matrix::zeros(host.0, rank));
            (key, gd, gu)
        })
        .collect();
    Ok((value, out))
}

fn batch_grads(model: &AdaptedModel, batch: &[Encoded], seed: u64, step: u64) -> Result<BatchGrads> {
    let denom: usize = batch.iter().map(|e| e.mask[1..].iter().filter(|&&m| m).count()).sum();
    let indexed: Vec<(usize, &Encoded)> = batch.iter().enumerate().collect();
    let per_example =
        map_ordered(&indexed, |&(i, ex)| example_grads(model, ex, denom as f64, example_seed(seed, step, i)));
    let mut loss = 0.0;
    let mut grads: BTreeMap<AdapterKey, (Matrix, Matrix)> = BTreeMap::new();
    for result in per_example {
        let (l, gs) = result?;
        loss += l;
        for (key, gd, gu) in gs {
            match grads.get_mut(&key) {
                Some((d, u)) => {
                    d.add_assign(&gd)?;
                    u.add_assign(&gu)?;
                }
                None => {
                    grads.insert(key, (gd, gu));
                }
            }
        }
    }
    Ok(BatchGrads { loss, grads })
}

/// Batch loss and gradients for every weight of `model`, keyed by name;
/// adapter factors appear as `<module>.lora_down` and `<module>.lora_up`.
/// Base weights enter the tape as constants, so backward produces nothing
/// for them and their entries are zero.
pub fn named_gradients(
    model: &AdaptedModel,
    batch: &[ExamplePair],
    vocab: &Vocab,
    config: &TrainConfig,
    step: u64,
) -> Result<(f64, BTreeMap<String, Matrix>)> {
    let encoded = encode_batch(batch, vocab, config.max_seq_len)?;
    let BatchGrads { loss, grads } = batch_grads(model, &encoded, config.seed, step)?;
    let mut out: BTreeMap<String, Matrix> =
        model.base.named_weights().into_iter().map(|(n, w)| (n, Matrix::zeros(w.rows(), w.cols()))).collect();
    for (key, (d, u)) in grads {
        let module = &model.adapters[&key].module;
        out.insert(format!("{module}.lora_down"), d);
        out.insert(format!("{module}.lora_up"), u);
    }
    Ok((loss, out))
}

/// Encodes a batch, naming the failing pair on error.
pub fn encode_batch(batch: &[ExamplePair], vocab: &Vocab, max_len: usize) -> Result<Vec<Encoded>> {
    batch
        .iter()
        .enumerate()
        .map(|(index, p)| encode_prompt(p, vocab, max_len).map_err(|e| Error::Pair { index, source: Box::new(e) }))
        .collect()
}

fn adamw(param: &mut Matrix, grad: &Matrix, mom: &mut Moments, config: &TrainConfig, step: u64) {
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(step as i32);
    let c2 = 1.0 - b2.powi(step as i32);
    let lr = config.lr_at(step);
    let p = param.data_mut();
    let (m, v) = (mom.m.data_mut(), mom.v.data_mut());
    for i in 0..p.len() {
        let g = grad.data()[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let update = (m[i] / c1) / ((v[i] / c2).sqrt() + config.eps) + config.weight_decay * p[i];
        p[i] -= lr * update;
    }
}

/// One optimizer step on the adapter factors. Returns the batch loss (mean
/// over answer positions). Base weights are never written.
pub fn training_step(
    model: &mut AdaptedModel,
    batch: &[ExamplePair],
    vocab: &Vocab,
    config: &TrainConfig,
    opt: &mut OptState,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("training batch".into()));
    }
    let encoded = encode_batch(batch, vocab, config.max_seq_len)?;
    step_encoded(model, &encoded, config, opt)
}

fn step_encoded(model: &mut AdaptedModel, batch: &[Encoded], config: &TrainConfig, opt: &mut OptState) -> Result<f64> {
    let BatchGrads { loss, mut grads } = batch_grads(model, batch, config.seed, opt.step)?;
    if !loss.is_finite() {
        return Err(Error::Invariant(format!("non-finite loss {loss} at step {}", opt.step + 1)));
    }
    let norm = grads.values().map(|(d, u)| d.sum_squares() + u.sum_squares()).sum::<f64>().sqrt();
    if norm > config.clip_norm {
        let s = config.clip_norm / norm;
        for (d, u) in grads.values_mut() {
            *d = d.scale(s);
            *u = u.scale(s);
        }
    }
    opt.step += 1;
    for (key, (gd, gu)) in &grads {
        let a = model.adapters.get_mut(key).ok_or_else(|| Error::Invariant(format!("no adapter for {key:?}")))?;
        for (is_up, param, grad) in [(false, &mut a.down, gd), (true, &mut a.up, gu)] {
            let mom = opt.moments.entry((*key, is_up)).or_insert_with(|| Moments {
                m: Matrix::zeros(param.rows(), param.cols()),
                v: Matrix::zeros(param.rows(), param.cols()),
            });
            adamw(param, grad, mom, config, opt.step);
        }
    }
    Ok(loss)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: AdaptedModel,
    pub curve: LossCurve,
    /// Training pairs dropped because their answer alone exceeds the context.
    pub skipped: usize,
}

/// Trains fresh adapters on `data.train`. Deterministic given the seeds in
/// `config` and `lora`.
pub fn train(
    base: TransformerModel,
    config: &TrainConfig,
    lora: &LoraConfig,
    data: &DatasetSplit,
    vocab: &Vocab,
) -> Result<TrainOutcome> {
    train_with_progress(base, config, lora, data, vocab, |_, _| {})
}

pub fn train_with_progress<F: FnMut(usize, f64)>(
    base: TransformerModel,
    config: &TrainConfig,
    lora: &LoraConfig,
    data: &DatasetSplit,
    vocab: &Vocab,
    mut progress: F,
) -> Result<TrainOutcome> {
    config.validate()?;
    let max_len = config.max_seq_len.min(base.geometry.max_seq_len + 1);
    let mut model = AdaptedModel::attach(base, lora.clone())?;
    let mut encoded = Vec::with_capacity(data.train.len());
    let mut skipped = 0;
    for (index, pair) in data.train.iter().enumerate() {
        match encode_prompt(pair, vocab, max_len) {
            Ok(e) => encoded.push(e),
            Err(Error::SequenceTooLong { .. }) => skipped += 1,
            Err(e) => return Err(Error::Pair { index, source: Box::new(e) }),
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} training pairs whose answers do not fit {max_len} tokens");
    }
    if encoded.is_empty() {
        return Err(Error::EmptyInput("no usable training pairs".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut queue: Vec<usize> = Vec::new();
    let mut opt = OptState::default();
    let mut curve = LossCurve::default();
    for step in 1..=config.steps {
        while queue.len() < config.batch_size.min(encoded.len()) {
            let mut epoch: Vec<usize> = (0..encoded.len()).collect();
            epoch.shuffle(&mut rng);
            queue.extend(epoch);
        }
        let take = config.batch_size.min(queue.len());
        let batch: Vec<Encoded> = queue.drain(..take).map(|i| encoded[i].clone()).collect();
        let loss = step_encoded(&mut model, &batch, config, &mut opt)?;
        curve.push(step, loss)?;
        progress(step, loss);
    }
    Ok(TrainOutcome { model, curve, skipped })
}

/// Greedy answer for one question. The prompt keeps as much of the question
/// as the context holds; decoding slides the window once it fills.
pub fn predict<M: model::LanguageModel + ?Sized>(
    model: &M,
    vocab: &Vocab,
    question: &str,
    max_new: usize,
) -> Result<String> {
    let limit = model.geometry().max_seq_len;
    let prompt = encode_query(question, vocab, limit, 1)?;
    let out = model::greedy_decode(model, &prompt, max_new, Some(data::EOS))?;
    Ok(vocab.decode(&out[prompt.len()..]))
}

/// Greedy predictions for every pair, in order.
pub fn predict_all<M: model::LanguageModel + Sync + ?Sized>(
    model: &M,
    vocab: &Vocab,
    pairs: &[ExamplePair],
    max_new: usize,
) -> Result<Vec<String>> {
    map_ordered(pairs, |p| predict(model, vocab, &p.question, max_new)).into_iter().collect()
}

/// Predictions and metrics over `pairs`.
pub fn evaluate_model<M: model::LanguageModel + Sync + ?Sized>(
    model: &M,
    vocab: &Vocab,
    pairs: &[ExamplePair],
    max_new: usize,
) -> Result<(Vec<String>, MetricReport)> {
    let preds = predict_all(model, vocab, pairs, max_new)?;
    let refs: Vec<&str> = pairs.iter().map(|p| p.answer.as_str()).collect();
    let pred_refs: Vec<&str> = preds.iter().map(String::as_str).collect();
    let report = evaluate_corpus(&pred_refs, &refs)?;
    Ok((preds, report))
}

pub const ABLATION_HEADER: &str = "r,alpha,modules,params,percent,minutes,bleu,rouge1,rouge2,rougeL,accuracy";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub ranks: Vec<usize>,
    pub alphas: Vec<f64>,
    pub groups: Vec<ModuleGroup>,
}

impl Default for AblationGrid {
    fn default() -> Self {
        Self {
            ranks: vec![8, 16, 32],
            alphas: vec![8.0, 16.0, 32.0],
            groups: vec![ModuleGroup::Attention, ModuleGroup::Ffn, ModuleGroup::All],
        }
    }
}

impl AblationGrid {
    /// Cells in rank-major, then alpha, then group order.
    pub fn cells(&self) -> Vec<(usize, f64, ModuleGroup)> {
        let mut out = Vec::new();
        for &r in &self.ranks {
            for &a in &self.alphas {
                for &g in &self.groups {
                    out.push((r, a, g));
                }
            }
        }
        out
    }
}

/// Everything an ablation cell shares.
#[derive(Debug, Clone)]
pub struct AblationBase {
    pub geometry: ModelGeometry,
    pub model_seed: u64,
    pub lora_seed: u64,
    pub train: TrainConfig,
    pub max_new: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub rank: usize,
    pub alpha: f64,
    pub group: ModuleGroup,
    pub params: u64,
    pub percent: f64,
    pub minutes: f64,
    pub report: MetricReport,
}

impl AblationRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.4},{:.3},{}",
            self.rank,
            self.alpha,
            self.group,
            self.params,
            self.percent,
            self.minutes,
            self.report.metric_fields()
        )
    }
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = format!("{ABLATION_HEADER}\n");
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Trains and evaluates one adapter per grid cell on the same base model and
/// data. Cells run independently and come back in grid order.
pub fn run_ablation(
    grid: &AblationGrid,
    base: &AblationBase,
    data: &DatasetSplit,
    vocab: &Vocab,
) -> Result<Vec<AblationRow>> {
    if data.test.is_empty() {
        return Err(Error::EmptyInput("ablation needs a nonempty test split".into()));
    }
    let base_model = model::build_model(base.geometry, base.model_seed)?;
    let cells = grid.cells();
    map_ordered(&cells, |&(rank, alpha, group)| {
        let start = Instant::now();
        let lora = LoraConfig::new(rank, alpha, group).with_seed(base.lora_seed);
        let count = count_lora_params(&base.geometry, &lora);
        let outcome = train(base_model.clone(), &base.train, &lora, data, vocab)?;
        let (_, report) = evaluate_model(&outcome.model, vocab, &data.test, base.max_new)?;
        Ok(AblationRow {
            rank,
            alpha,
            group,
            params: count.trainable,
            percent: count.percent,
            minutes: start.elapsed().as_secs_f64() / 60.0,
            report,
        })
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_toy_corpus;
    use crate::lora::ModelGeometry;
    use crate::model::build_model;

    fn tiny_geometry(vocab: usize) -> ModelGeometry {
        ModelGeometry {
            n_layers: 1,
            d_model: 16,
            n_heads: 2,
            n_kv_heads: 1,
            head_dim: 8,
            d_ff: 24,
            vocab_size: vocab,
            max_seq_len: 256,
            rope_base: 10000.0,
            norm_eps: 1e-6,
        }
    }

    fn tiny_split(n: usize) -> DatasetSplit {
        let pairs = gen_toy_corpus(n, 5);
        DatasetSplit { train: pairs.clone(), validation: vec![], test: pairs, seed: 0 }
    }

    #[test]
    fn zero_learning_rate_leaves_adapters() {
        let vocab = Vocab::default();
        let base = build_model(tiny_geometry(vocab.len()), 1).unwrap();
        let mut m = AdaptedModel::attach(base, LoraConfig::default()).unwrap();
        let before = m.adapters.clone();
        let config = TrainConfig { learning_rate: 0.0, ..Default::default() };
        let loss = training_step(&mut m, &gen_toy_corpus(2, 1), &vocab, &config, &mut OptState::default()).unwrap();
        assert!(loss.is_finite());
        assert_eq!(m.adapters, before);
    }

    #[test]
    fn step_changes_adapters_but_not_base() {
        let vocab = Vocab::default();
        let base = build_model(tiny_geometry(vocab.len()), 2).unwrap();
        let sum = base.checksum();
        let mut m = AdaptedModel::attach(base, LoraConfig::default()).unwrap();
        let before = m.adapters.clone();
        let mut opt = OptState::default();
        for _ in 0..2 {
            training_step(&mut m, &gen_toy_corpus(2, 1), &vocab, &TrainConfig::default(), &mut opt).unwrap();
        }
        assert_eq!(m.base.checksum(), sum);
        assert_ne!(m.adapters, before);
        assert_eq!(opt.step, 2);
    }

    #[test]
    fn encoding_failure_names_pair() {
        let vocab = Vocab::default();
        let base = build_model(tiny_geometry(vocab.len()), 3).unwrap();
        let mut m = AdaptedModel::attach(base, LoraConfig::default()).unwrap();
        let batch = vec![ExamplePair::new("q", "a"), ExamplePair::new("q", "x".repeat(300))];
        let err = training_step(&mut m, &batch, &vocab, &TrainConfig::default(), &mut OptState::default()).unwrap_err();
        assert!(matches!(err, Error::Pair { index: 1, .. }), "{err}");
    }

    #[test]
    fn single_step_curve_and_determinism() {
        let vocab = Vocab::default();
        let data = tiny_split(6);
        let base = build_model(tiny_geometry(vocab.len()), 4).unwrap();
        let config = TrainConfig { steps: 1, batch_size: 2, ..Default::default() };
        let out = train(base.clone(), &config, &LoraConfig::default(), &data, &vocab).unwrap();
        assert_eq!(out.curve.len(), 1);
        let config = TrainConfig { steps: 3, batch_size: 2, ..Default::default() };
        let a = train(base.clone(), &config, &LoraConfig::default(), &data, &vocab).unwrap();
        let b = train(base, &config, &LoraConfig::default(), &data, &vocab).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.model.adapters, b.model.adapters);
    }

    #[test]
    fn loss_curve_csv_round_trip() {
        let mut c = LossCurve::default();
        c.push(1, 2.5).unwrap();
        c.push(2, 0.1 + 0.2).unwrap();
        assert_eq!(LossCurve::from_csv(&c.to_csv()).unwrap(), c);
        assert!(c.push(2, 1.0).is_err());
        assert!(c.push(3, f64::NAN).is_err());
    }

    #[test]
    fn grid_cells_and_header() {
        assert_eq!(AblationGrid::default().cells().len(), 27);
        assert_eq!(ABLATION_HEADER.split(',').count(), 11);
    }

    #[test]
    fn schedules() {
        let c = TrainConfig { steps: 4, learning_rate: 1.0, ..Default::default() };
        assert!((1..=4).all(|s| c.lr_at(s) == 1.0));
        let lin = TrainConfig { schedule: LrSchedule::Linear, ..c.clone() };
        assert_eq!((1..=4).map(|s| lin.lr_at(s)).collect::<Vec<_>>(), [1.0, 0.75, 0.5, 0.25]);
        let cos = TrainConfig { schedule: LrSchedule::Cosine, ..c };
        assert_eq!(cos.lr_at(1), 1.0);
        assert!((cos.lr_at(3) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { steps: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
    }
}
