//! MSA1 checkpoints: `"MSA1"`, a little-endian `u32` header length, a JSON
//! header, then every parameter as little-endian binary32 in declaration
//! order.
//!
//! Parameters are held in f64 during training; a checkpoint stores them
//! rounded to binary32.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use specalign_core::{AlignmentModel, ModelConfig};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MSA1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub tensors: Vec<TensorInfo>,
    /// Set for a model finetuned on a single adduct.
    #[serde(default)]
    pub adduct: Option<String>,
}

pub fn encode(model: &AlignmentModel, adduct: Option<&str>) -> Result<Vec<u8>> {
    let tensors = model.params.tensors();
    let header = CheckpointHeader {
        config: model.config.clone(),
        tensors: tensors
            .iter()
            .map(|(name, _, v)| TensorInfo {
                name: name.clone(),
                len: v.len(),
            })
            .collect(),
        adduct: adduct.map(String::from),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + json.len() + 4 * model.params.num_values());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, values) in &tensors {
        for &v in values.iter() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<(AlignmentModel, CheckpointHeader)> {
    let bad = |detail: String| Error::BadHeader {
        path: path.into(),
        detail,
    };
    if bytes.len() < 8 {
        return Err(Error::TruncatedFile {
            path: path.into(),
            expected: 8,
            found: bytes.len() as u64,
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            path: path.into(),
            found: bytes[..4].try_into().unwrap(),
            expected: "MSA1",
        });
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = 8 + hlen;
    if bytes.len() < body {
        return Err(Error::TruncatedFile {
            path: path.into(),
            expected: body as u64,
            found: bytes.len() as u64,
        });
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[8..body]).map_err(|source| {
        Error::Json {
            path: path.into(),
            line: 1,
            source,
        }
    })?;
    let mut model = AlignmentModel::new(header.config.clone())?;
    let layout: Vec<(String, usize)> = model
        .params
        .tensors()
        .into_iter()
        .map(|(n, _, v)| (n, v.len()))
        .collect();
    let stored: Vec<(String, usize)> = header
        .tensors
        .iter()
        .map(|t| (t.name.clone(), t.len))
        .collect();
    if layout != stored {
        return Err(bad("tensor layout does not match the configuration".into()));
    }
    let total: usize = layout.iter().map(|t| t.1).sum();
    let expected = body as u64 + 4 * total as u64;
    if (bytes.len() as u64) < expected {
        return Err(Error::TruncatedFile {
            path: path.into(),
            expected,
            found: bytes.len() as u64,
        });
    }
    if (bytes.len() as u64) > expected {
        return Err(Error::TrailingBytes {
            path: path.into(),
            trailing: bytes.len() as u64 - expected,
        });
    }
    let mut values = bytes[body..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())));
    for (_, tensor) in model.params.tensors_mut() {
        for slot in tensor.iter_mut() {
            *slot = values.next().expect("length checked");
        }
    }
    if let Some(name) = model
        .params
        .tensors()
        .into_iter()
        .find(|t| t.2.iter().any(|v| !v.is_finite()))
        .map(|t| t.0)
    {
        return Err(bad(format!("non-finite values in {name}")));
    }
    Ok((model, header))
}

pub fn save_checkpoint(model: &AlignmentModel, adduct: Option<&str>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(model, adduct)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(AlignmentModel, CheckpointHeader)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
