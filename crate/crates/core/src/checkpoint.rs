//! Checkpoint file: magic, `u32` little-endian header length, JSON header,
//! then the payload of little-endian `f64` arrays described by the header's
//! tensor table. The header carries the payload length and its SHA-256.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::arch::{ArchError, Model, ModelConfig};
use crate::data::ClassMap;
use crate::metrics::MetricsReport;
use crate::optim::{AdamW, AdamWConfig};
use crate::train::TrainConfig;

pub const MAGIC: &[u8; 8] = b"RDFMCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("not a checkpoint file")]
    Magic,
    #[error("unsupported checkpoint version {found} (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Arch(#[from] ArchError),
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the payload, in `f64` elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub step: u64,
}

/// Everything stored besides the arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub class_map: ClassMap,
    pub step: u64,
    pub metrics: Option<MetricsReport>,
    pub train: Option<TrainConfig>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    byte_order: String,
    model: ModelConfig,
    #[serde(flatten)]
    meta: CheckpointMeta,
    optimizer: Option<OptimizerState>,
    tensors: Vec<TensorEntry>,
    payload_len: usize,
    payload_sha256: String,
}

pub struct Loaded {
    pub model: Model,
    pub optimizer: Option<AdamW>,
    pub meta: CheckpointMeta,
}

fn moment_names(name: &str) -> (String, String) {
    (format!("opt.m.{name}"), format!("opt.v.{name}"))
}

pub fn to_bytes(model: &Model, optimizer: Option<&AdamW>, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    let mut push = |name: String, shape: &[usize], data: &[f64]| {
        tensors.push(TensorEntry {
            name,
            shape: shape.to_vec(),
            offset: payload.len() / 8,
        });
        data.iter().for_each(|v| payload.extend_from_slice(&v.to_le_bytes()));
    };
    for (name, t) in model.params() {
        push(name.clone(), t.shape(), &t.data());
    }
    if let Some(opt) = optimizer {
        if opt.m.len() != model.params().len() {
            return Err(CheckpointError::Format("optimizer does not match the model".into()));
        }
        for (i, (name, t)) in model.params().iter().enumerate() {
            let (m, v) = moment_names(name);
            push(m, t.shape(), &opt.m[i]);
            push(v, t.shape(), &opt.v[i]);
        }
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        byte_order: "little".into(),
        model: model.config().clone(),
        meta: meta.clone(),
        optimizer: optimizer.map(|o| OptimizerState {
            config: o.config,
            step: o.step,
        }),
        tensors,
        payload_len: payload.len(),
        payload_sha256: hex::encode(Sha256::digest(&payload)),
    };
    let json = serde_json::to_vec(&header).map_err(|e| CheckpointError::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(12 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Loaded> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(CheckpointError::Magic);
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let json = bytes
        .get(12..12 + header_len)
        .ok_or_else(|| CheckpointError::Integrity("header truncated".into()))?;
    let version: serde_json::Value = serde_json::from_slice(json).map_err(|e| CheckpointError::Format(e.to_string()))?;
    let found = version.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != FORMAT_VERSION {
        return Err(CheckpointError::Version { found });
    }
    let header: Header = serde_json::from_value(version).map_err(|e| CheckpointError::Format(e.to_string()))?;
    if header.byte_order != "little" {
        return Err(CheckpointError::Format(format!("byte order {:?}", header.byte_order)));
    }
    let payload = &bytes[12 + header_len..];
    if payload.len() != header.payload_len {
        return Err(CheckpointError::Integrity(format!(
            "payload is {} bytes, header says {}",
            payload.len(),
            header.payload_len
        )));
    }
    if hex::encode(Sha256::digest(payload)) != header.payload_sha256 {
        return Err(CheckpointError::Integrity("payload checksum mismatch".into()));
    }

    let read = |entry: &TensorEntry| -> Result<Vec<f64>> {
        let n: usize = entry.shape.iter().product();
        payload
            .get(entry.offset * 8..(entry.offset + n) * 8)
            .map(|b| b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
            .ok_or_else(|| CheckpointError::Integrity(format!("{} lies outside the payload", entry.name)))
    };
    let table: std::collections::HashMap<&str, &TensorEntry> =
        header.tensors.iter().map(|e| (e.name.as_str(), e)).collect();
    let lookup = |name: &str, shape: &[usize]| -> Result<Vec<f64>> {
        let entry = table
            .get(name)
            .ok_or_else(|| CheckpointError::Format(format!("missing tensor {name}")))?;
        if entry.shape != shape {
            return Err(CheckpointError::Format(format!(
                "{name} has shape {:?}, model expects {shape:?}",
                entry.shape
            )));
        }
        read(entry)
    };

    let model = Model::build(&header.model, 0)?;
    let mut expected = model.params().len();
    for (name, t) in model.params() {
        let data = lookup(name, t.shape())?;
        t.data_mut().copy_from_slice(&data);
    }
    let optimizer = match &header.optimizer {
        Some(state) => {
            let mut opt = AdamW::new(&model.param_tensors(), state.config);
            opt.step = state.step;
            for (i, (name, t)) in model.params().iter().enumerate() {
                let (m, v) = moment_names(name);
                opt.m[i] = lookup(&m, t.shape())?;
                opt.v[i] = lookup(&v, t.shape())?;
            }
            expected *= 3;
            Some(opt)
        }
        None => None,
    };
    if header.tensors.len() != expected {
        return Err(CheckpointError::Format(format!(
            "{} stored tensors, model and optimizer account for {expected}",
            header.tensors.len()
        )));
    }
    Ok(Loaded {
        model,
        optimizer,
        meta: header.meta,
    })
}

pub fn save_checkpoint(path: &Path, model: &Model, optimizer: Option<&AdamW>, meta: &CheckpointMeta) -> Result<()> {
    std::fs::write(path, to_bytes(model, optimizer, meta)?).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Loaded> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            class_map: ClassMap::simple(),
            step: 3,
            metrics: None,
            train: None,
        }
    }

    #[test]
    fn round_trip_parameters_and_moments() {
        let model = Model::build(&ModelConfig::micro(5), 4).unwrap();
        let p = model.param_tensors();
        let mut opt = AdamW::new(&p, AdamWConfig::default());
        opt.step = 9;
        opt.m[0][0] = 0.125;
        opt.v[2][1] = f64::MIN_POSITIVE;
        let loaded = from_bytes(&to_bytes(&model, Some(&opt), &meta()).unwrap()).unwrap();
        assert_eq!(loaded.meta, meta());
        for ((a, x), (b, y)) in model.params().iter().zip(loaded.model.params()) {
            assert_eq!(a, b);
            assert_eq!(x.to_vec(), y.to_vec());
        }
        let o = loaded.optimizer.unwrap();
        assert_eq!((o.step, o.m.clone(), o.v.clone()), (9, opt.m, opt.v));
        assert_eq!(loaded.model.count_params(), model.count_params());
    }

    #[test]
    fn corruption_detected() {
        let model = Model::build(&ModelConfig::micro(5), 4).unwrap();
        let bytes = to_bytes(&model, None, &meta()).unwrap();
        let mut flipped = bytes.clone();
        let last = flipped.len() - 5;
        flipped[last] ^= 0x40;
        assert!(matches!(from_bytes(&flipped), Err(CheckpointError::Integrity(_))));
        assert!(matches!(from_bytes(&bytes[..bytes.len() - 8]), Err(CheckpointError::Integrity(_))));
        assert!(matches!(from_bytes(b"nonsense-bytes"), Err(CheckpointError::Magic)));

        let text = String::from_utf8_lossy(&bytes[12..]).into_owned();
        let at = text.find("\"format_version\":1").unwrap();
        let mut bumped = bytes.clone();
        bumped[12 + at + 17] = b'7';
        assert!(matches!(from_bytes(&bumped), Err(CheckpointError::Version { found: 7 })));
    }
}
