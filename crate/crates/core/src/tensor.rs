//! Batches of images as `N x C x H x W` tensors with values in `[0, 1]`.
//!
//! File layout: the magic bytes `RCT1`, then `N`, `C`, `H`, `W` as
//! little-endian `u32`, then `N*C*H*W` little-endian `f32` in row-major
//! `N -> C -> H -> W` order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RCT1";

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensorSet {
    dims: [usize; 4],
    values: Vec<f32>,
}

impl ImageTensorSet {
    pub fn new(dims: [usize; 4], values: Vec<f32>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::contract(format!(
                "tensor dims {dims:?} must be positive"
            )));
        }
        let expected = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::contract("tensor size overflows"))?;
        if values.len() != expected {
            return Err(Error::contract(format!(
                "{} values for dims {dims:?} ({expected} expected)",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::domain(format!("tensor value {v} outside [0, 1]")));
        }
        Ok(Self { dims, values })
    }

    /// `[N, C, H, W]`.
    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Number of `H x W` planes (`N * C`).
    pub fn plane_count(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    pub fn planes(&self) -> std::slice::ChunksExact<'_, f32> {
        self.values.chunks_exact(self.dims[2] * self.dims[3])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 4 * self.values.len());
        out.extend_from_slice(MAGIC);
        for d in self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], source: &str) -> Result<Self> {
        let err = |message: String| Error::Parse {
            path: source.to_string(),
            line: 0,
            message,
        };
        if bytes.len() < 20 || &bytes[..4] != MAGIC {
            return Err(err("missing RCT1 header".into()));
        }
        let mut dims = [0usize; 4];
        for (i, d) in dims.iter_mut().enumerate() {
            let raw: [u8; 4] = bytes[4 + 4 * i..8 + 4 * i]
                .try_into()
                .expect("4-byte slice");
            *d = u32::from_le_bytes(raw) as usize;
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| err("tensor size overflows".into()))?;
        let body = &bytes[20..];
        if Some(body.len()) != count.checked_mul(4) {
            return Err(err(format!(
                "payload of {} bytes does not match dims {dims:?}",
                body.len()
            )));
        }
        let values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
            .collect();
        Self::new(dims, values).map_err(|e| err(e.to_string()))
    }
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<ImageTensorSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    ImageTensorSet::from_bytes(&bytes, &path.display().to_string())
}

pub fn write_tensor(tensor: &ImageTensorSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, tensor.to_bytes()).map_err(|e| Error::io(path, e))
}
