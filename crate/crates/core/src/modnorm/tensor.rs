//! Minimal tensor file: `b"GKTENSOR" | rank u32 | rank × u64 dims | f64 payload`,
//! all little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 8] = b"GKTENSOR";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u64>,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * (self.dims.len() + self.values.len()));
        out.extend_from_slice(TENSOR_MAGIC);
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != TENSOR_MAGIC {
            return Err(Error::Corrupt("not a tensor file".into()));
        }
        let rank = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let header = 12 + 8 * rank;
        if bytes.len() < header {
            return Err(Error::Corrupt(format!("tensor header truncated (rank {rank})")));
        }
        let dims: Vec<u64> = bytes[12..header]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let count = dims
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Corrupt("tensor dims overflow".into()))?;
        let payload = &bytes[header..];
        if payload.len() as u64 != count * 8 {
            return Err(Error::Corrupt(format!(
                "tensor {dims:?} needs {} payload bytes, found {}",
                count * 8,
                payload.len()
            )));
        }
        let values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Self { dims, values })
    }
}

pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    fs::write(path, tensor.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    Tensor::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
