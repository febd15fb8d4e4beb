//! Binary weight file.
//!
//! ```text
//! "LGMW" | version u32 | count u32 | count x (name_len u16 | name | ndim u8 | dims u32... | f32 payload)
//! ```
//!
//! All integers and floats are little-endian.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Result, WeightFileError};
use crate::param::Module;
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: [u8; 4] = *b"LGMW";
pub const VERSION: u32 = 1;

/// Ordered, uniquely named `f32` tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    entries: Vec<(String, Tensor<f32>)>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<f32>) -> Result<(), WeightFileError> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(WeightFileError::DuplicateName(name));
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn entries(&self) -> &[(String, Tensor<f32>)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Snapshot of every parameter and buffer of `module`.
    pub fn from_module<T: Scalar, M: Module<T> + ?Sized>(module: &M) -> Self {
        Self { entries: module.named_params().into_iter().map(|(n, p)| (n, p.value.cast())).collect() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.ndim() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WeightFileError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(WeightFileError::BadMagic { found: magic });
        }
        let version = r.u32("format version")?;
        if version != VERSION {
            return Err(WeightFileError::UnsupportedVersion(version));
        }
        let count = r.u32("tensor count")?;
        let mut store = WeightStore::new();
        for i in 0..count {
            let len = u16::from_le_bytes(r.take(2, &format!("name length of tensor {i}"))?.try_into().unwrap());
            let name = std::str::from_utf8(r.take(len as usize, &format!("name of tensor {i}"))?)
                .map_err(|_| WeightFileError::InvalidName)?
                .to_string();
            let ndim = r.take(1, &format!("rank of '{name}'"))?[0];
            let mut shape = Vec::with_capacity(ndim as usize);
            for _ in 0..ndim {
                shape.push(r.u32(&format!("shape of '{name}'"))? as usize);
            }
            let numel: usize = shape.iter().product();
            let payload = r.take(numel * 4, &format!("payload of '{name}'"))?;
            let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            let tensor = Tensor::new(shape, data).expect("payload length matches shape");
            store.insert(name, tensor)?;
        }
        if r.pos != bytes.len() {
            return Err(WeightFileError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Ok(Self::from_bytes(&bytes)?)
    }

    /// Copies every entry into `module`. Names and shapes must match exactly;
    /// on any mismatch nothing is written and every offender is listed.
    pub fn apply_to<T: Scalar, M: Module<T> + ?Sized>(&self, module: &mut M) -> Result<(), WeightFileError> {
        let mut offenders = Vec::new();
        let mut seen = HashSet::new();
        {
            for (name, p) in module.named_params() {
                seen.insert(name.clone());
                match self.get(&name) {
                    None => offenders.push(format!("missing tensor '{name}'")),
                    Some(t) if t.shape() != p.value.shape() => offenders.push(format!(
                        "shape mismatch for '{name}': file {:?}, model {:?}",
                        t.shape(),
                        p.value.shape()
                    )),
                    Some(_) => {}
                }
            }
        }
        for (name, _) in &self.entries {
            if !seen.contains(name) {
                offenders.push(format!("unexpected tensor '{name}'"));
            }
        }
        if !offenders.is_empty() {
            return Err(WeightFileError::Conflict { offenders });
        }
        for (name, p) in module.named_params_mut() {
            p.value = self.get(&name).expect("checked above").cast();
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, context: &str) -> Result<&'a [u8], WeightFileError> {
        if self.bytes.len() - self.pos < n {
            return Err(WeightFileError::Truncated { context: context.to_string() });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, context: &str) -> Result<u32, WeightFileError> {
        Ok(u32::from_le_bytes(self.take(4, context)?.try_into().unwrap()))
    }
}

/// Writes every parameter and buffer of `module`.
pub fn save_weights<T: Scalar, M: Module<T> + ?Sized>(module: &M, path: impl AsRef<Path>) -> Result<()> {
    WeightStore::from_module(module).save(path)
}

/// Reads a weight file into `module`, leaving it untouched on any error.
pub fn load_weights<T: Scalar, M: Module<T> + ?Sized>(module: &mut M, path: impl AsRef<Path>) -> Result<()> {
    let store = WeightStore::load(path)?;
    store.apply_to(module)?;
    Ok(())
}
