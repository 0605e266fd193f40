use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lora::TargetModule;

/// Layer, width and head configuration of a decoder-only transformer.
///
/// Weight shapes are `(out, in)`: a projection maps a row vector `x` to
/// `x · Wᵀ`, and a LoRA update `B · A` has the same `(out, in)` shape with
/// `A` as the down-projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelGeometry {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub head_dim: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub rope_base: f64,
    pub norm_eps: f64,
}

impl ModelGeometry {
    /// LLaMA-3-8B accounting preset.
    pub fn llama3_8b() -> Self {
        Self {
            n_layers: 32,
            d_model: 4096,
            n_heads: 32,
            n_kv_heads: 8,
            head_dim: 128,
            d_ff: 14336,
            vocab_size: 128_256,
            max_seq_len: 8192,
            rope_base: 500_000.0,
            norm_eps: 1e-5,
        }
    }

    /// Desk-scale model: 2 layers, width 64, 4 heads of 16, SwiGLU width 176.
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            n_layers: 2,
            d_model: 64,
            n_heads: 4,
            n_kv_heads: 4,
            head_dim: 16,
            d_ff: 176,
            vocab_size,
            max_seq_len: 256,
            rope_base: 10_000.0,
            norm_eps: 1e-6,
        }
    }

    /// Looks up a named preset (`llama3-8b` or `toy`).
    pub fn preset(name: &str, toy_vocab: usize) -> Result<Self> {
        match name {
            "llama3-8b" => Ok(Self::llama3_8b()),
            "toy" => Ok(Self::toy(toy_vocab)),
            other => Err(Error::Config(format!("unknown geometry preset `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_kv_heads", self.n_kv_heads),
            ("head_dim", self.head_dim),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("geometry field {name} must be positive")));
        }
        if !self.n_heads.is_multiple_of(self.n_kv_heads) {
            return Err(Error::Config(format!(
                "n_heads {} not divisible by n_kv_heads {}",
                self.n_heads, self.n_kv_heads
            )));
        }
        if !self.head_dim.is_multiple_of(2) {
            return Err(Error::Config("head_dim must be even for rotary embeddings".into()));
        }
        if !(self.norm_eps > 0.0) || !(self.rope_base > 0.0) {
            return Err(Error::Config("norm_eps and rope_base must be positive".into()));
        }
        Ok(())
    }

    pub fn q_width(&self) -> usize {
        self.n_heads * self.head_dim
    }

    pub fn kv_width(&self) -> usize {
        self.n_kv_heads * self.head_dim
    }

    /// `(out, in)` shape of a projection.
    pub fn module_shape(&self, module: TargetModule) -> (usize, usize) {
        match module {
            TargetModule::QProj => (self.q_width(), self.d_model),
            TargetModule::KProj | TargetModule::VProj => (self.kv_width(), self.d_model),
            TargetModule::OProj => (self.d_model, self.q_width()),
            TargetModule::GateProj | TargetModule::UpProj => (self.d_ff, self.d_model),
            TargetModule::DownProj => (self.d_model, self.d_ff),
        }
    }

    /// Embeddings, per-layer projections and norm gains, final norm and an
    /// untied output head.
    pub fn total_base_params(&self) -> u64 {
        let per_layer: u64 = TargetModule::ALL
            .iter()
            .map(|&m| {
                let (o, i) = self.module_shape(m);
                (o * i) as u64
            })
            .sum::<u64>()
            + 2 * self.d_model as u64;
        let embed = (self.vocab_size * self.d_model) as u64;
        embed + self.n_layers as u64 * per_layer + self.d_model as u64 + embed
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn llama_preset_total() {
        let g = ModelGeometry::llama3_8b();
        g.validate().unwrap();
        // shape sum written out independently
        let (d, kv, ff, v, l) = (4096u64, 1024u64, 14336u64, 128_256u64, 32u64);
        let layer = d * d + kv * d + kv * d + d * d + 3 * d * ff + 2 * d;
        assert_eq!(v * d + l * layer + d + v * d, 8_030_261_248);
        assert_eq!(g.total_base_params(), 8_030_261_248);
    }

    #[test]
    fn gqa_divisibility() {
        let mut g = ModelGeometry::toy(100);
        g.n_kv_heads = 3;
        assert!(g.validate().is_err());
        assert!(ModelGeometry::preset("gpt9", 10).is_err());
    }
}
