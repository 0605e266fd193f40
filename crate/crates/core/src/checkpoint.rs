//! Binary checkpoints for base models and adapted models.
//!
//! Layout: 4-byte magic, one version byte, a little-endian `u64` header
//! length, a JSON header, then every blob listed in the header as raw
//! little-endian `f64` in header order. Adapter factors are stored as
//! `<module>.lora_down` and `<module>.lora_up` next to the base weights.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::lora::{LoraAdapter, LoraConfig, ModelGeometry, TargetModule};
use crate::model::{AdaptedModel, LayerWeights, TransformerModel};
use crate::numerics::Matrix;

pub const MAGIC: &[u8; 4] = b"ALRA";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BlobInfo {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    geometry: ModelGeometry,
    lora: Option<LoraConfig>,
    vocab: Option<String>,
    blobs: Vec<BlobInfo>,
}

/// Decoded checkpoint contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub geometry: ModelGeometry,
    pub lora: Option<LoraConfig>,
    pub vocab: Option<Vocab>,
    pub blobs: BTreeMap<String, Matrix>,
}

fn encode(geometry: ModelGeometry, lora: Option<&LoraConfig>, vocab: Option<&Vocab>, blobs: &[(String, &Matrix)]) -> Vec<u8> {
    let header = Header {
        geometry,
        lora: lora.cloned(),
        vocab: vocab.map(Vocab::to_file_string),
        blobs: blobs.iter().map(|(n, m)| BlobInfo { name: n.clone(), rows: m.rows(), cols: m.cols() }).collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(13 + json.len() + blobs.iter().map(|(_, m)| m.len() * 8).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, m) in blobs {
        out.extend_from_slice(&m.to_le_bytes());
    }
    out
}

pub fn encode_model(model: &TransformerModel, vocab: Option<&Vocab>) -> Vec<u8> {
    let blobs: Vec<(String, &Matrix)> = model.named_weights();
    encode(model.geometry, None, vocab, &blobs)
}

pub fn encode_adapted(model: &AdaptedModel, vocab: Option<&Vocab>) -> Vec<u8> {
    let mut blobs = model.base.named_weights();
    for a in model.adapters.values() {
        blobs.push((format!("{}.lora_down", a.module), &a.down));
        blobs.push((format!("{}.lora_up", a.module), &a.up));
    }
    encode(model.base.geometry, Some(&model.config), vocab, &blobs)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 13 || &bytes[..4] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    if bytes[4] != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {} (expected {VERSION})", bytes[4])));
    }
    let len = u64::from_le_bytes(bytes[5..13].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(13..).unwrap_or_default();
    if len > body.len() {
        return Err(bad("truncated header"));
    }
    let header: Header = serde_json::from_slice(&body[..len])?;
    let mut data = &body[len..];
    let mut blobs = BTreeMap::new();
    for b in header.blobs {
        let n = b.rows * b.cols * 8;
        if data.len() < n {
            return Err(Error::Checkpoint(format!("truncated blob `{}`", b.name)));
        }
        let values = data[..n].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        data = &data[n..];
        if blobs.insert(b.name.clone(), Matrix::from_vec(b.rows, b.cols, values)?).is_some() {
            return Err(Error::Checkpoint(format!("duplicate blob `{}`", b.name)));
        }
    }
    if !data.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", data.len())));
    }
    let vocab = header.vocab.as_deref().map(Vocab::from_file_string).transpose()?;
    Ok(Checkpoint { geometry: header.geometry, lora: header.lora, vocab, blobs })
}

pub fn save(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Field-by-field differences, empty when the geometries agree.
pub fn geometry_diff(expected: &ModelGeometry, found: &ModelGeometry) -> Vec<String> {
    let e = serde_json::to_value(expected).expect("geometry serializes");
    let f = serde_json::to_value(found).expect("geometry serializes");
    let (e, f) = (e.as_object().expect("object"), f.as_object().expect("object"));
    e.iter()
        .filter(|(k, v)| f.get(*k) != Some(v))
        .map(|(k, v)| format!("{k}: model has {v}, checkpoint has {}", f.get(k).map_or("nothing".into(), |x| x.to_string())))
        .collect()
}

impl Checkpoint {
    fn take(&self, name: &str, shape: (usize, usize)) -> Result<Matrix> {
        let m = self.blobs.get(name).ok_or_else(|| Error::Checkpoint(format!("missing blob `{name}`")))?;
        if m.shape() != shape {
            return Err(Error::Checkpoint(format!("`{name}` is {:?}, geometry wants {shape:?}", m.shape())));
        }
        Ok(m.clone())
    }

    /// The stored base weights as an unfrozen model.
    pub fn base_model(&self) -> Result<TransformerModel> {
        let g = self.geometry;
        g.validate()?;
        let d = g.d_model;
        let layers = (0..g.n_layers)
            .map(|i| {
                let w = |m: TargetModule| self.take(&format!("layers.{i}.{m}"), g.module_shape(m));
                Ok(LayerWeights {
                    attn_norm: self.take(&format!("layers.{i}.attn_norm"), (1, d))?,
                    q_proj: w(TargetModule::QProj)?,
                    k_proj: w(TargetModule::KProj)?,
                    v_proj: w(TargetModule::VProj)?,
                    o_proj: w(TargetModule::OProj)?,
                    ffn_norm: self.take(&format!("layers.{i}.ffn_norm"), (1, d))?,
                    gate_proj: w(TargetModule::GateProj)?,
                    up_proj: w(TargetModule::UpProj)?,
                    down_proj: w(TargetModule::DownProj)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TransformerModel {
            geometry: g,
            embed: self.take("embed", (g.vocab_size, d))?,
            layers,
            final_norm: self.take("final_norm", (1, d))?,
            lm_head: self.take("lm_head", (g.vocab_size, d))?,
            frozen: false,
        })
    }

    /// Attaches the stored adapters to `base`. Fails with a field-level
    /// diagnostic when the checkpoint was written for another geometry.
    pub fn adapters_for(&self, mut base: TransformerModel) -> Result<AdaptedModel> {
        let diff = geometry_diff(&base.geometry, &self.geometry);
        if !diff.is_empty() {
            return Err(Error::Checkpoint(format!("geometry mismatch: {}", diff.join("; "))));
        }
        let config = self.lora.clone().ok_or_else(|| Error::Checkpoint("no adapter configuration".into()))?;
        let mut adapters = BTreeMap::new();
        for layer in 0..self.geometry.n_layers {
            for &m in &config.target_modules {
                let module = format!("layers.{layer}.{m}");
                let (d, k) = self.geometry.module_shape(m);
                let down = self.take(&format!("{module}.lora_down"), (config.rank, k))?;
                let up = self.take(&format!("{module}.lora_up"), (d, config.rank))?;
                adapters.insert((layer, m), LoraAdapter { module, host_shape: (d, k), down, up });
            }
        }
        base.frozen = true;
        let model = AdaptedModel { base, adapters, config };
        model.validate()?;
        Ok(model)
    }

    /// Base weights plus adapters, both from this checkpoint.
    pub fn adapted_model(&self) -> Result<AdaptedModel> {
        self.adapters_for(self.base_model()?)
    }
}
