//! Model checkpoint files.
//!
//! Layout: the magic `OSDCKPT1`, a little-endian `u32` header length, a TOML
//! header, then every parameter tensor as little-endian `f64` in `params()`
//! order. The header carries the architecture, tensor shapes, training config,
//! seed, the frozen feature pipeline and a SHA-256 of the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::sha256_hex;
use crate::dvec::{DvecArch, DvecModel, TrainConfig};
use crate::error::{Error, Result};
use crate::nn::{ParamSet, ParamTensor};
use crate::signal::FeaturePipeline;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"OSDCKPT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    best_epoch: Option<usize>,
    known_class_ids: Vec<u32>,
    payload_values: usize,
    payload_sha256: String,
    arch: DvecArch,
    pipeline: FeaturePipeline,
    train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<toml::Table>,
    tensors: Vec<TensorEntry>,
}

/// A trained model with everything needed to apply it to raw records.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: DvecModel,
    pub pipeline: FeaturePipeline,
    pub train: TrainConfig,
    pub seed: u64,
    pub best_epoch: Option<usize>,
    pub provenance: Option<toml::Table>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params = self.model.params();
        let mut payload = Vec::with_capacity(8 * params.iter().map(|p| p.len()).sum::<usize>());
        for v in params.iter().flat_map(|p| p.values()) {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        let header = Header {
            format_version: CHECKPOINT_VERSION,
            seed: self.seed,
            best_epoch: self.best_epoch,
            known_class_ids: self.model.known_class_ids.clone(),
            payload_values: payload.len() / 8,
            payload_sha256: sha256_hex(&payload),
            arch: self.model.arch.clone(),
            pipeline: self.pipeline,
            train: self.train.clone(),
            provenance: self.provenance.clone(),
            tensors: params
                .iter()
                .map(|p| TensorEntry {
                    name: p.name().to_string(),
                    shape: p.shape().to_vec(),
                })
                .collect(),
        };
        let text = toml::to_string(&header)
            .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        let len = u32::try_from(text.len())
            .map_err(|_| Error::Format("checkpoint header too large".into()))?;
        let mut out = Vec::with_capacity(12 + text.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Format(format!("checkpoint: {m}"));
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(bad("missing OSDCKPT1 magic".into()));
        }
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let text = bytes
            .get(12..12 + len)
            .ok_or_else(|| bad(format!("header length {len} exceeds file size")))?;
        let text =
            std::str::from_utf8(text).map_err(|e| bad(format!("header is not UTF-8: {e}")))?;
        let header: Header = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        if header.format_version != CHECKPOINT_VERSION {
            return Err(bad(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                header.format_version
            )));
        }
        let payload = &bytes[12 + len..];
        if payload.len() != 8 * header.payload_values {
            return Err(bad(format!(
                "payload holds {} bytes, header declares {} values",
                payload.len(),
                header.payload_values
            )));
        }
        if sha256_hex(payload) != header.payload_sha256 {
            return Err(bad("payload checksum mismatch".into()));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for t in &header.tensors {
            let n = t.shape.iter().product();
            let v: Vec<f64> = values.by_ref().take(n).collect();
            if v.len() != n {
                return Err(bad(format!("payload ends inside tensor {}", t.name)));
            }
            tensors.push(ParamTensor::from_values(t.name.clone(), &t.shape, v)?);
        }
        if values.next().is_some() {
            return Err(bad("payload longer than the declared tensors".into()));
        }
        if header.pipeline.fusion.dim() != header.arch.input_dim {
            return Err(Error::shape(
                "checkpoint pipeline",
                header.arch.input_dim,
                header.pipeline.fusion.dim(),
            ));
        }
        let model = DvecModel::from_params(header.arch, header.known_class_ids, tensors)?;
        Ok(Checkpoint {
            model,
            pipeline: header.pipeline,
            train: header.train,
            seed: header.seed,
            best_epoch: header.best_epoch,
            provenance: header.provenance,
        })
    }

    /// Writes the checkpoint and returns the SHA-256 of the file.
    pub fn write(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes()?;
        fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        Ok(sha256_hex(&bytes))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn content_hash(&self) -> Result<String> {
        Ok(sha256_hex(&self.to_bytes()?))
    }
}
