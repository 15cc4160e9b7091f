//! Single-file checkpoints:
//!
//! ```text
//! "MLVC" | u32 LE version | u64 LE header length | JSON header | payload
//! ```
//!
//! The header lists every tensor with its dtype, shape and byte range inside
//! the payload. Tensors are stored contiguously, little-endian, in header
//! order.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ParamSet};
use crate::tensor::{DType, Element, Tensor};
use crate::train::VCycleConfig;

pub const MAGIC: &[u8; 4] = b"MLVC";
pub const FORMAT_VERSION: u32 = 1;
/// Headers larger than this are rejected as corrupt.
const MAX_HEADER_BYTES: u64 = 64 << 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub byte_offset: u64,
    pub byte_len: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model_config: ModelConfig,
    pub vcycle_config: Option<VCycleConfig>,
    pub step: u64,
    pub level: usize,
    pub tensors: Vec<TensorEntry>,
}

/// Everything in a checkpoint except the tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub model_config: ModelConfig,
    pub vcycle_config: Option<VCycleConfig>,
    pub step: u64,
    pub level: usize,
}

/// Parameters as stored, in their stored element type.
#[derive(Clone, Debug, PartialEq)]
pub enum StoredParams {
    F32(ParamSet<f32>),
    F64(ParamSet<f64>),
}

impl StoredParams {
    pub fn dtype(&self) -> DType {
        match self {
            StoredParams::F32(_) => DType::F32,
            StoredParams::F64(_) => DType::F64,
        }
    }

    pub fn cast<T: Element>(&self) -> ParamSet<T> {
        match self {
            StoredParams::F32(p) => p.cast(),
            StoredParams::F64(p) => p.cast(),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            StoredParams::F32(p) => p.num_params(),
            StoredParams::F64(p) => p.num_params(),
        }
    }
}

pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: StoredParams,
}

/// Serializes a checkpoint to bytes.
pub fn encode_checkpoint<T: Element>(
    meta: &CheckpointMeta,
    params: &ParamSet<T>,
) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    let mut tensors = Vec::with_capacity(params.len());
    for (name, t) in params.iter() {
        let offset = payload.len() as u64;
        for &x in t.data() {
            x.write_le(&mut payload);
        }
        tensors.push(TensorEntry {
            name: name.clone(),
            dtype: T::DTYPE,
            shape: t.shape().to_vec(),
            byte_offset: offset,
            byte_len: payload.len() as u64 - offset,
        });
    }
    let header = CheckpointHeader {
        model_config: meta.model_config.clone(),
        vcycle_config: meta.vcycle_config.clone(),
        step: meta.step,
        level: meta.level,
        tensors,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn save_checkpoint<T: Element>(
    path: &Path,
    meta: &CheckpointMeta,
    params: &ParamSet<T>,
) -> Result<()> {
    let bytes = encode_checkpoint(meta, params)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    f.sync_all().map_err(|e| Error::io(path, e))
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn read_tensors<T: Element>(entries: &[TensorEntry], payload: &[u8]) -> Result<ParamSet<T>> {
    let mut params = ParamSet::new();
    for e in entries {
        let start = e.byte_offset as usize;
        let end = start + e.byte_len as usize;
        let data = payload[start..end]
            .chunks_exact(T::DTYPE.size_of())
            .map(T::read_le)
            .collect();
        if params.contains(&e.name) {
            return Err(bad(format!("duplicate tensor {:?}", e.name)));
        }
        params.insert(e.name.clone(), Tensor::new(e.shape.clone(), data)?);
    }
    Ok(params)
}

/// Parses and validates a checkpoint from bytes.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(bad("bad magic, not an MLVC checkpoint"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    if header_len > MAX_HEADER_BYTES || 16 + header_len > bytes.len() as u64 {
        return Err(bad(format!("header length {header_len} exceeds file")));
    }
    let header_end = 16 + header_len as usize;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..header_end])
        .map_err(|e| bad(format!("header is not valid JSON: {e}")))?;
    let payload = &bytes[header_end..];

    let mut expected_offset = 0u64;
    let dtype = header.tensors.first().map_or(DType::F64, |e| e.dtype);
    for e in &header.tensors {
        if e.dtype != dtype {
            return Err(bad("mixed element types are not supported"));
        }
        if e.byte_offset != expected_offset {
            return Err(bad(format!(
                "{}: offset {} is not contiguous (expected {expected_offset})",
                e.name, e.byte_offset
            )));
        }
        let numel = e
            .shape
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64));
        let want = numel.and_then(|n| n.checked_mul(e.dtype.size_of() as u64));
        if want != Some(e.byte_len) {
            return Err(bad(format!(
                "{}: byte_len {} does not match shape {:?}",
                e.name, e.byte_len, e.shape
            )));
        }
        expected_offset += e.byte_len;
    }
    if expected_offset != payload.len() as u64 {
        return Err(bad(format!(
            "payload holds {} bytes, header describes {expected_offset}",
            payload.len()
        )));
    }
    let params = match dtype {
        DType::F32 => StoredParams::F32(read_tensors(&header.tensors, payload)?),
        DType::F64 => StoredParams::F64(read_tensors(&header.tensors, payload)?),
    };
    Ok(Checkpoint {
        meta: CheckpointMeta {
            model_config: header.model_config,
            vcycle_config: header.vcycle_config,
            step: header.step,
            level: header.level,
        },
        params,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
