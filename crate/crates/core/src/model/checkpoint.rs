//! Binary checkpoint: `TWLD`, a little-endian `u16` version, a `u32` header
//! length, the JSON header, little-endian `f32` payloads, and a CRC-32 over
//! header and payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Detector, DetectorConfig, RunningStats, Variant};
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};
use crate::scalar::Scalar;
use crate::textualizer::Vocabulary;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TWLD";
pub const CHECKPOINT_VERSION: u16 = 1;

const PREFIX_LEN: usize = 4 + 2 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TensorKind {
    Param,
    Buffer,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    kind: TensorKind,
    shape: Vec<usize>,
    /// Byte offset within the payload region.
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: DetectorConfig,
    vocabulary: Vocabulary,
    tensors: Vec<TensorEntry>,
}

const DETECTION_MEAN: &str = "detection_head.bn.running_mean";
const DETECTION_VAR: &str = "detection_head.bn.running_var";
const TABLE_MEAN: &str = "table_head.bn.running_mean";
const TABLE_VAR: &str = "table_head.bn.running_var";

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl<T: Scalar> Detector<T> {
    /// Serializes to bytes; values are stored as `f32`.
    pub fn to_checkpoint_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut payload: Vec<u8> = Vec::with_capacity(self.params.element_count() * 4);
        let mut push = |name: &str, kind, shape: &[usize], data: &[T]| {
            tensors.push(TensorEntry {
                name: name.to_string(),
                kind,
                shape: shape.to_vec(),
                offset: payload.len() as u64,
            });
            for v in data {
                payload.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
            }
        };
        for (_, name, t) in self.params.iter() {
            push(name, TensorKind::Param, t.shape(), t.data());
        }
        let d = self.config.embed_dim;
        push(DETECTION_MEAN, TensorKind::Buffer, &[d], &self.detection_stats.mean);
        push(DETECTION_VAR, TensorKind::Buffer, &[d], &self.detection_stats.var);
        if let Some(s) = &self.table_stats {
            push(TABLE_MEAN, TensorKind::Buffer, &[d], &s.mean);
            push(TABLE_VAR, TensorKind::Buffer, &[d], &s.var);
        }
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            vocabulary: self.vocab.clone(),
            tensors,
        })?;
        let header_len = u32::try_from(header.len()).map_err(|_| bad("header too large"))?;
        let mut out = Vec::with_capacity(PREFIX_LEN + header.len() + payload.len() + 4);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&header_len.to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        let crc = crc32fast::hash(&out[PREFIX_LEN..]);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PREFIX_LEN + 4 {
            return Err(bad("truncated file"));
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint (bad magic bytes)"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!(
                "format version {version} is not supported (expected {CHECKPOINT_VERSION})"
            )));
        }
        let header_len = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
        let body_end = bytes.len() - 4;
        if PREFIX_LEN + header_len > body_end {
            return Err(bad("truncated file"));
        }
        let stored = u32::from_le_bytes(bytes[body_end..].try_into().expect("4 bytes"));
        if crc32fast::hash(&bytes[PREFIX_LEN..body_end]) != stored {
            return Err(bad("checksum mismatch (file is corrupted or truncated)"));
        }
        let header: Header = serde_json::from_slice(&bytes[PREFIX_LEN..PREFIX_LEN + header_len])
            .map_err(|e| bad(format!("malformed header: {e}")))?;
        let payload = &bytes[PREFIX_LEN + header_len..body_end];

        let mut params = ParamStore::new();
        let mut buffers: Vec<(String, Vec<T>)> = Vec::new();
        let mut expected_offset = 0u64;
        for entry in &header.tensors {
            if entry.offset != expected_offset {
                return Err(bad(format!("tensor {} has unexpected offset {}", entry.name, entry.offset)));
            }
            let count: usize = entry.shape.iter().product();
            let start = entry.offset as usize;
            let end = start + count * 4;
            if end > payload.len() {
                return Err(bad(format!("tensor {} runs past the payload", entry.name)));
            }
            let data: Vec<T> = payload[start..end]
                .chunks_exact(4)
                .map(|c| T::lit(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
                .collect();
            expected_offset = end as u64;
            match entry.kind {
                TensorKind::Param => {
                    if params.find(&entry.name).is_some() {
                        return Err(bad(format!("duplicate tensor {}", entry.name)));
                    }
                    params.add(entry.name.clone(), Tensor::from_vec(&entry.shape, data));
                }
                TensorKind::Buffer => buffers.push((entry.name.clone(), data)),
            }
        }
        if expected_offset as usize != payload.len() {
            return Err(bad("payload length does not match the manifest"));
        }
        let mut take = |name: &str| {
            buffers
                .iter()
                .position(|(n, _)| n == name)
                .map(|i| buffers.swap_remove(i).1)
        };
        let detection_stats = RunningStats {
            mean: take(DETECTION_MEAN).ok_or_else(|| bad("missing detection running mean"))?,
            var: take(DETECTION_VAR).ok_or_else(|| bad("missing detection running variance"))?,
        };
        let table_stats = match (take(TABLE_MEAN), take(TABLE_VAR)) {
            (Some(mean), Some(var)) => Some(RunningStats { mean, var }),
            (None, None) => None,
            _ => return Err(bad("incomplete table-head running statistics")),
        };
        if let Some((name, _)) = buffers.first() {
            return Err(bad(format!("unknown buffer {name}")));
        }
        Detector::from_parts(header.config, header.vocabulary, params, detection_stats, table_stats)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_checkpoint_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
        Self::from_checkpoint_bytes(&bytes)
    }

    /// Loads and rejects checkpoints of another variant.
    pub fn load_variant(path: impl AsRef<Path>, variant: Variant) -> Result<Self> {
        let model = Self::load(path)?;
        if model.variant() != variant {
            return Err(bad(format!(
                "checkpoint holds a {} model, expected {variant}",
                model.variant()
            )));
        }
        Ok(model)
    }
}
