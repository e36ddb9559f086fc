//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"ATCLCKPT"  u32 version  u32 header_len  header (JSON, header_len bytes)
//! f64 values of each tensor in header order, row-major
//! ```
//!
//! The header records the kind (`full` or `adapter`), the model config,
//! the adapter config, whether adapters were merged, the training seed,
//! the output vocabulary and a `{name, rows, cols}` table. An adapter
//! checkpoint holds only the `lora_a`/`lora_b` factors and is applied to a
//! base model with the same config.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::linear::LoraConfig;
use super::matrix::Matrix;
use super::transformer::{Model, ModelConfig};
use super::vocab::Vocab;
use super::ModelError;

pub const MAGIC: &[u8; 8] = b"ATCLCKPT";
pub const VERSION: u32 = 1;
const MAX_HEADER: usize = 16 << 20;
const MAX_POSITIONS: usize = 1 << 16;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("{0} trailing bytes after tensor data")]
    TrailingBytes(usize),
    #[error("bad header: {0}")]
    Header(String),
    #[error("tensor {name}: {msg}")]
    Tensor { name: String, msg: String },
    #[error("expected a {expected} checkpoint")]
    WrongKind { expected: &'static str },
    #[error("model has no adapters to save")]
    NoAdapters,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    Full,
    Adapter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    kind: CheckpointKind,
    model_config: ModelConfig,
    lora: Option<LoraConfig>,
    merged: bool,
    seed: u64,
    vocab: Option<Vocab>,
    tensors: Vec<TensorInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub model_config: ModelConfig,
    pub lora: Option<LoraConfig>,
    pub merged: bool,
    /// Seed of the training run that produced the weights.
    pub seed: u64,
    pub vocab: Option<Vocab>,
    pub tensors: Vec<(String, Matrix)>,
}

fn is_adapter_tensor(name: &str) -> bool {
    name.ends_with(".lora_a") || name.ends_with(".lora_b")
}

impl Checkpoint {
    pub fn full(model: &Model, seed: u64, vocab: Option<&Vocab>) -> Self {
        Checkpoint {
            kind: CheckpointKind::Full,
            model_config: model.config.clone(),
            lora: model.lora.clone(),
            merged: model.is_merged(),
            seed,
            vocab: vocab.cloned(),
            tensors: model.params().into_iter().map(|(n, p)| (n, p.value.clone())).collect(),
        }
    }

    /// Adapter factors only. The model must not be merged.
    pub fn adapter(model: &Model, seed: u64, vocab: Option<&Vocab>) -> Result<Self, CheckpointError> {
        let lora = model.lora.clone().filter(|_| model.has_adapters()).ok_or(CheckpointError::NoAdapters)?;
        if model.is_merged() {
            return Err(ModelError::InvalidConfig("unmerge adapters before saving them separately".into()).into());
        }
        Ok(Checkpoint {
            kind: CheckpointKind::Adapter,
            model_config: model.config.clone(),
            lora: Some(lora),
            merged: false,
            seed,
            vocab: vocab.cloned(),
            tensors: model
                .params()
                .into_iter()
                .filter(|(n, _)| is_adapter_tensor(n))
                .map(|(n, p)| (n, p.value.clone()))
                .collect(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            kind: self.kind,
            model_config: self.model_config.clone(),
            lora: self.lora.clone(),
            merged: self.merged,
            seed: self.seed,
            vocab: self.vocab.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, m)| TensorInfo { name: name.clone(), rows: m.rows(), cols: m.cols() })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + 8 * self.tensors.iter().map(|(_, m)| m.len()).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, m) in &self.tensors {
            m.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 8 || &bytes[..8] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let u32_at = |at: usize| -> Result<u32, CheckpointError> {
            bytes.get(at..at + 4).map(|b| u32::from_le_bytes(b.try_into().unwrap())).ok_or(CheckpointError::Truncated)
        };
        let version = u32_at(8)?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let header_len = u32_at(12)? as usize;
        if header_len > MAX_HEADER {
            return Err(CheckpointError::Header(format!("header of {header_len} bytes")));
        }
        let json = bytes.get(16..16 + header_len).ok_or(CheckpointError::Truncated)?;
        let header: Header = serde_json::from_slice(json).map_err(|e| CheckpointError::Header(e.to_string()))?;
        let mut data = &bytes[16 + header_len..];
        let mut tensors = Vec::with_capacity(header.tensors.len().min(4096));
        for t in header.tensors {
            let n = t
                .rows
                .checked_mul(t.cols)
                .filter(|n| n.checked_mul(8).is_some_and(|b| b <= data.len()))
                .ok_or(CheckpointError::Truncated)?;
            let (chunk, rest) = data.split_at(n * 8);
            data = rest;
            let values = chunk.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let m = Matrix::from_vec(t.rows, t.cols, values)
                .map_err(|e| CheckpointError::Tensor { name: t.name.clone(), msg: e.to_string() })?;
            tensors.push((t.name, m));
        }
        if !data.is_empty() {
            return Err(CheckpointError::TrailingBytes(data.len()));
        }
        Ok(Checkpoint {
            kind: header.kind,
            model_config: header.model_config,
            lora: header.lora,
            merged: header.merged,
            seed: header.seed,
            vocab: header.vocab,
            tensors,
        })
    }

    /// Rebuilds the model stored in a full checkpoint.
    pub fn into_model(self) -> Result<Model, CheckpointError> {
        if self.kind != CheckpointKind::Full {
            return Err(CheckpointError::WrongKind { expected: "full" });
        }
        self.check_allocation()?;
        let mut model = Model::new(self.model_config.clone())?;
        if let Some(lora) = &self.lora {
            model.inject_lora(lora, 0)?;
        }
        assign(&mut model, &self.tensors, |_| true)?;
        if self.merged {
            for (_, l) in model.linears_mut() {
                if let Some(ad) = &mut l.adapter {
                    ad.merged = true;
                    ad.enabled = false;
                }
            }
        }
        Ok(model)
    }

    /// Injects the stored adapters into `model` and loads their factors.
    pub fn apply_to(&self, model: &mut Model) -> Result<(), CheckpointError> {
        if self.kind != CheckpointKind::Adapter {
            return Err(CheckpointError::WrongKind { expected: "adapter" });
        }
        let mut ours = self.model_config.clone();
        ours.seed = model.config.seed;
        if ours != model.config {
            return Err(CheckpointError::Header("adapter was trained for a different model shape".into()));
        }
        let lora = self.lora.as_ref().ok_or_else(|| CheckpointError::Header("adapter checkpoint without lora".into()))?;
        model.inject_lora(lora, 0)?;
        assign(model, &self.tensors, is_adapter_tensor)
    }

    /// Refuses configs whose parameter count is not backed by tensor data,
    /// so a corrupt header cannot trigger a huge allocation.
    fn check_allocation(&self) -> Result<(), CheckpointError> {
        let c = &self.model_config;
        let too_big = || CheckpointError::Header("model config does not match tensor data".into());
        if c.max_len > MAX_POSITIONS {
            return Err(too_big());
        }
        let d = c.d_model;
        let enc = d.checked_mul(d).and_then(|dd| dd.checked_mul(4)).and_then(|a| a.checked_add(d.checked_mul(c.d_ff)?.checked_mul(2)?));
        let budget = (|| {
            let emb = c.vocab_in.checked_add(c.vocab_out)?.checked_mul(d)?;
            let per_enc = enc?;
            let per_dec = per_enc.checked_add(d.checked_mul(d)?.checked_mul(4)?)?;
            emb.checked_add(per_enc.checked_mul(c.n_enc_layers)?)?
                .checked_add(per_dec.checked_mul(c.n_dec_layers)?)?
                .checked_add(c.max_len.checked_mul(d)?)
        })()
        .ok_or_else(too_big)?;
        let available: usize = self.tensors.iter().map(|(_, m)| m.len()).sum();
        if budget > available.saturating_add(c.max_len.saturating_mul(d)) {
            return Err(too_big());
        }
        Ok(())
    }
}

fn assign(model: &mut Model, tensors: &[(String, Matrix)], wanted: impl Fn(&str) -> bool) -> Result<(), CheckpointError> {
    let mut slots: HashMap<String, &mut super::Param> =
        model.params_mut().into_iter().filter(|(n, _)| wanted(n)).collect();
    let expected = slots.len();
    let mut seen = std::collections::HashSet::new();
    for (name, m) in tensors {
        if !seen.insert(name.as_str()) {
            return Err(CheckpointError::Tensor { name: name.clone(), msg: "duplicate tensor".into() });
        }
        let p = slots
            .get_mut(name)
            .ok_or_else(|| CheckpointError::Tensor { name: name.clone(), msg: "not part of this model".into() })?;
        if p.value.shape() != m.shape() {
            return Err(CheckpointError::Tensor {
                name: name.clone(),
                msg: format!("shape {:?}, model expects {:?}", m.shape(), p.value.shape()),
            });
        }
        p.value = m.clone();
    }
    if seen.len() != expected {
        return Err(CheckpointError::Tensor {
            name: "*".into(),
            msg: format!("{} tensors supplied, model has {expected}", seen.len()),
        });
    }
    Ok(())
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    std::fs::write(path, ckpt.to_bytes()).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
    Checkpoint::from_bytes(&bytes)
}
