//! Low-rank adapters: construction, the `ΔW = (α/r)·B·A` algebra, target
//! module selection and trainable-parameter accounting.

mod geometry;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub use geometry::ModelGeometry;

/// A projection matrix that can host an adapter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetModule {
    QProj,
    KProj,
    VProj,
    OProj,
    GateProj,
    UpProj,
    DownProj,
}

impl TargetModule {
    pub const ALL: [TargetModule; 7] = [
        TargetModule::QProj,
        TargetModule::KProj,
        TargetModule::VProj,
        TargetModule::OProj,
        TargetModule::GateProj,
        TargetModule::UpProj,
        TargetModule::DownProj,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TargetModule::QProj => "q_proj",
            TargetModule::KProj => "k_proj",
            TargetModule::VProj => "v_proj",
            TargetModule::OProj => "o_proj",
            TargetModule::GateProj => "gate_proj",
            TargetModule::UpProj => "up_proj",
            TargetModule::DownProj => "down_proj",
        }
    }
}

impl fmt::Display for TargetModule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TargetModule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TargetModule::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::UnknownModule(s.to_string()))
    }
}

/// Named groups of target modules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleGroup {
    Attention,
    Ffn,
    All,
}

impl ModuleGroup {
    pub const ALL: [ModuleGroup; 3] = [ModuleGroup::Attention, ModuleGroup::Ffn, ModuleGroup::All];

    pub fn name(self) -> &'static str {
        match self {
            ModuleGroup::Attention => "attention",
            ModuleGroup::Ffn => "ffn",
            ModuleGroup::All => "all",
        }
    }
}

impl fmt::Display for ModuleGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModuleGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" => Ok(ModuleGroup::Attention),
            "ffn" => Ok(ModuleGroup::Ffn),
            "all" => Ok(ModuleGroup::All),
            other => Err(Error::UnknownGroup(other.to_string())),
        }
    }
}

/// Module names targeted by a group.
pub fn select_target_modules(group: ModuleGroup) -> BTreeSet<TargetModule> {
    use TargetModule::*;
    match group {
        ModuleGroup::Attention => [QProj, KProj, VProj, OProj].into(),
        ModuleGroup::Ffn => [GateProj, UpProj, DownProj].into(),
        ModuleGroup::All => TargetModule::ALL.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    pub dropout: f64,
    pub target_modules: BTreeSet<TargetModule>,
    pub seed: u64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self { rank: 16, alpha: 16.0, dropout: 0.0, target_modules: select_target_modules(ModuleGroup::All), seed: 0 }
    }
}

impl LoraConfig {
    pub fn new(rank: usize, alpha: f64, group: ModuleGroup) -> Self {
        Self { rank, alpha, target_modules: select_target_modules(group), ..Self::default() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// `α / r`.
    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::Config("rank must be at least 1".into()));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1], got {}", self.dropout)));
        }
        if self.target_modules.is_empty() {
            return Err(Error::Config("target_modules must not be empty".into()));
        }
        Ok(())
    }

    /// The group matching `target_modules`, if any.
    pub fn group(&self) -> Option<ModuleGroup> {
        ModuleGroup::ALL.into_iter().find(|g| select_target_modules(*g) == self.target_modules)
    }
}

/// The two factors attached to one host matrix of shape `(d, k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter {
    /// Owning weight, e.g. `layers.0.q_proj`.
    pub module: String,
    pub host_shape: (usize, usize),
    /// `A`, shape `r × k`, Gaussian-initialized.
    pub down: Matrix,
    /// `B`, shape `d × r`, zero-initialized.
    pub up: Matrix,
}

impl LoraAdapter {
    pub fn rank(&self) -> usize {
        self.down.rows()
    }

    pub fn param_count(&self) -> usize {
        self.down.len() + self.up.len()
    }

    fn check(&self) -> Result<()> {
        let (d, k) = self.host_shape;
        let r = self.down.rows();
        if self.down.shape() != (r, k) || self.up.shape() != (d, r) {
            return Err(Error::Shape(format!(
                "{}: host {d}x{k} with A {:?} and B {:?}",
                self.module,
                self.down.shape(),
                self.up.shape()
            )));
        }
        Ok(())
    }
}

/// Fresh adapter: `A ~ N(0, 1/r)` entry-wise, `B = 0`.
pub fn init_adapter<R: Rng + ?Sized>(
    module: impl Into<String>,
    host_shape: (usize, usize),
    config: &LoraConfig,
    rng: &mut R,
) -> Result<LoraAdapter> {
    let (d, k) = host_shape;
    let r = config.rank;
    if d == 0 || k == 0 || r == 0 {
        return Err(Error::Config(format!("adapter needs positive d, k, r; got {d}, {k}, {r}")));
    }
    let module = module.into();
    if r >= d.min(k) {
        log::warn!("{module}: rank {r} is not below min(d, k) = {}", d.min(k));
    }
    let down = Matrix::gaussian(r, k, 1.0 / (r as f64).sqrt(), rng);
    let up = Matrix::zeros(d, r);
    Ok(LoraAdapter { module, host_shape, down, up })
}

/// `(α/r) · B · A`, shape `d × k`.
pub fn delta_w(adapter: &LoraAdapter, config: &LoraConfig) -> Result<Matrix> {
    adapter.check()?;
    Ok(adapter.up.matmul(&adapter.down)?.scale(config.scaling()))
}

/// `W' = W + ΔW`; `w` is left untouched.
pub fn merge(w: &Matrix, adapter: &LoraAdapter, config: &LoraConfig) -> Result<Matrix> {
    check_host(w, adapter)?;
    w.add(&delta_w(adapter, config)?)
}

/// `W = W' - ΔW`.
pub fn unmerge(w_prime: &Matrix, adapter: &LoraAdapter, config: &LoraConfig) -> Result<Matrix> {
    check_host(w_prime, adapter)?;
    w_prime.sub(&delta_w(adapter, config)?)
}

fn check_host(w: &Matrix, adapter: &LoraAdapter) -> Result<()> {
    if w.shape() != adapter.host_shape {
        return Err(Error::Shape(format!(
            "{}: weight is {:?} but adapter expects {:?}",
            adapter.module,
            w.shape(),
            adapter.host_shape
        )));
    }
    Ok(())
}

/// Trainable parameter count and its share of the base model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamCount {
    pub trainable: u64,
    pub base: u64,
    /// `trainable / base × 100`.
    pub percent: f64,
}

/// `Σ_layers Σ_targets r·(d + k)`.
pub fn count_lora_params(geometry: &ModelGeometry, config: &LoraConfig) -> ParamCount {
    let per_layer: u64 = config
        .target_modules
        .iter()
        .map(|&m| {
            let (d, k) = geometry.module_shape(m);
            (config.rank * (d + k)) as u64
        })
        .sum();
    let trainable = per_layer * geometry.n_layers as u64;
    let base = geometry.total_base_params();
    ParamCount { trainable, base, percent: trainable as f64 / base as f64 * 100.0 }
}
