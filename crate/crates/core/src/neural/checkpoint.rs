//! Binary checkpoints: 8-byte magic, u64 LE header length, JSON header with
//! the tensor table, then the f32 LE payloads.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DANN\0\0\0\x01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset from the start of the payload section.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: String,
    pub hyperparameters: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    tensors: BTreeMap<String, Tensor<f32>>,
}

pub fn encode_checkpoint<T: Scalar>(
    model: &str,
    hyperparameters: serde_json::Value,
    tensors: &[(String, &Tensor<T>)],
) -> Result<Vec<u8>> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut payload = Vec::new();
    for (name, t) in tensors {
        if !t.all_finite() {
            return Err(Error::NonFinite(format!("checkpoint tensor {name}")));
        }
        entries.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset: payload.len() as u64,
        });
        for &v in t.data() {
            payload.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
        }
    }
    let header = CheckpointHeader {
        model: model.to_string(),
        hyperparameters,
        tensors: entries,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + payload.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

impl Checkpoint {
    pub fn decode(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |r: &str| Error::format(origin, r.to_string());
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("bad checkpoint magic"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header_end = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[16..header_end])?;
        let payload = &bytes[header_end..];
        let mut tensors = BTreeMap::new();
        for e in &header.tensors {
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start + n * 4;
            if end > payload.len() {
                return Err(bad(&format!("tensor {} out of bounds", e.name)));
            }
            let data: Vec<f32> = payload[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(bad(&format!("tensor {} has non-finite values", e.name)));
            }
            tensors.insert(e.name.clone(), Tensor::from_vec(&e.shape, data)?);
        }
        Ok(Checkpoint { header, tensors })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }

    pub fn expect_model(&self, name: &str) -> Result<()> {
        if self.header.model == name {
            Ok(())
        } else {
            Err(Error::Argument(format!("checkpoint holds model {:?}, expected {name:?}", self.header.model)))
        }
    }

    /// Copy the named tensor into `dst`, checking its shape.
    pub fn load_into<T: Scalar>(&self, name: &str, dst: &mut Tensor<T>) -> Result<()> {
        let src = self
            .tensors
            .get(name)
            .ok_or_else(|| Error::Argument(format!("checkpoint is missing tensor {name}")))?;
        if src.shape() != dst.shape() {
            return Err(Error::Shape {
                context: format!("checkpoint tensor {name}"),
                expected: dst.shape().to_vec(),
                actual: src.shape().to_vec(),
            });
        }
        *dst = src.cast();
        Ok(())
    }

    pub fn tensor_names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }
}
