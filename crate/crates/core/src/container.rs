//! `MRW1` weight containers.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        4 bytes  "MRW1"
//! count        u32      number of entries
//! entry * count:
//!   name_len   u16
//!   name       name_len bytes, UTF-8
//!   dtype      u8       0 = f32 tensor, 1 = UTF-8 metadata string
//!   rank       u8       >= 1
//!   dims       rank * u32, each >= 1
//!   payload    product(dims) * 4 bytes (f32) or product(dims) bytes (string)
//! ```
//!
//! Metadata strings are stored as rank-1 entries of dtype 1 whose single
//! dimension is the byte length. Tensor and metadata names share one
//! namespace.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MRW1";
const DTYPE_F32: u8 = 0;
const DTYPE_STR: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ContainerError {
    #[error("bad magic: expected \"MRW1\"")]
    BadMagic,
    #[error("truncated data while reading {0}")]
    TruncatedTensor(String),
    #[error("duplicate entry name {0:?}")]
    DuplicateName(String),
    #[error("entry {name:?}: {reason}")]
    InvalidEntry { name: String, reason: &'static str },
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightContainer {
    tensors: BTreeMap<String, Tensor>,
    metadata: BTreeMap<String, String>,
}

impl WeightContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_tensor(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<(), ContainerError> {
        let name = name.into();
        self.check_new_name(&name)?;
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn insert_metadata(&mut self, key: impl Into<String>, value: impl Into<String>) -> Result<(), ContainerError> {
        let key = key.into();
        self.check_new_name(&key)?;
        self.metadata.insert(key, value.into());
        Ok(())
    }

    fn check_new_name(&self, name: &str) -> Result<(), ContainerError> {
        if name.is_empty() || name.len() > u16::MAX as usize {
            return Err(ContainerError::InvalidEntry {
                name: name.into(),
                reason: "name must be 1..=65535 bytes",
            });
        }
        if self.tensors.contains_key(name) || self.metadata.contains_key(name) {
            return Err(ContainerError::DuplicateName(name.into()));
        }
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn metadata(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn metadata_entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.metadata.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Serialises metadata first, then tensors, each in name order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&((self.tensors.len() + self.metadata.len()) as u32).to_le_bytes());
        for (name, value) in &self.metadata {
            write_header(&mut out, name, DTYPE_STR, &[value.len()]);
            out.extend_from_slice(value.as_bytes());
        }
        for (name, t) in &self.tensors {
            write_header(&mut out, name, DTYPE_F32, t.shape());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(ContainerError::BadMagic);
        }
        let mut r = Reader { bytes, pos: 4 };
        let count = r.u32("entry count")?;
        let mut c = WeightContainer::new();
        for _ in 0..count {
            let name_len = r.u16("name length")? as usize;
            let name = core::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|_| ContainerError::InvalidEntry {
                    name: String::new(),
                    reason: "name is not UTF-8",
                })?
                .into();
            let dtype = r.u8("dtype")?;
            let rank = r.u8("rank")? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32("dims")? as usize);
            }
            if rank == 0 || dims.contains(&0) {
                return Err(ContainerError::InvalidEntry { name, reason: "rank and all dimensions must be >= 1" });
            }
            let n = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| ContainerError::TruncatedTensor(name.clone()))?;
            match dtype {
                DTYPE_F32 => {
                    let nbytes = n.checked_mul(4).ok_or_else(|| ContainerError::TruncatedTensor(name.clone()))?;
                    let raw = r.take(nbytes, &name)?;
                    let data = raw
                        .chunks_exact(4)
                        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                        .collect();
                    let t = Tensor::new(dims, data).expect("length checked above");
                    c.insert_tensor(name, t)?;
                }
                DTYPE_STR => {
                    if rank != 1 {
                        return Err(ContainerError::InvalidEntry { name, reason: "metadata entries have rank 1" });
                    }
                    let raw = r.take(n, &name)?;
                    let value: String = core::str::from_utf8(raw)
                        .map_err(|_| ContainerError::InvalidEntry { name: name.clone(), reason: "metadata is not UTF-8" })?
                        .into();
                    c.insert_metadata(name, value)?;
                }
                _ => return Err(ContainerError::InvalidEntry { name, reason: "unsupported dtype" }),
            }
        }
        if r.pos != bytes.len() {
            return Err(ContainerError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(c)
    }
}

fn write_header(out: &mut Vec<u8>, name: &str, dtype: u8, dims: &[usize]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(dtype);
    out.push(dims.len() as u8);
    for d in dims {
        out.extend_from_slice(&(*d as u32).to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ContainerError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(ContainerError::TruncatedTensor(what.into()));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, ContainerError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, ContainerError> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32, ContainerError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
