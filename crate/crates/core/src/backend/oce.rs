//! `OCE1` embedding tables.
//!
//! Binary layout: the magic bytes `OCE1`, a little-endian `u32` row count, a
//! little-endian `u32` dimension, then `count * dim` little-endian `f32`
//! values in row-major order. Row keys live in a sidecar JSON array next to
//! the table, at `<table path>.keys.json`.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"OCE1";

/// Path of the key sidecar for a table file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".keys.json");
    PathBuf::from(s)
}

/// Keyed rows of equal dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    keys: Vec<String>,
    data: Vec<f32>,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            keys: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn from_rows(dim: usize, keys: Vec<String>, data: Vec<f32>) -> Result<Self> {
        if data.len() != keys.len() * dim {
            return Err(Error::InvalidInput(format!(
                "{} values for {} rows of dim {dim}",
                data.len(),
                keys.len()
            )));
        }
        let mut index = HashMap::with_capacity(keys.len());
        for (i, k) in keys.iter().enumerate() {
            if index.insert(k.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!(
                    "duplicate embedding key {k:?}"
                )));
            }
        }
        Ok(Self {
            dim,
            keys,
            data,
            index,
        })
    }

    pub fn push(&mut self, key: impl Into<String>, row: &[f32]) -> Result<()> {
        let key = key.into();
        if row.len() != self.dim {
            return Err(Error::InvalidInput(format!(
                "row dim {} != table dim {}",
                row.len(),
                self.dim
            )));
        }
        if self.index.contains_key(&key) {
            return Err(Error::InvalidInput(format!(
                "duplicate embedding key {key:?}"
            )));
        }
        self.index.insert(key.clone(), self.keys.len());
        self.keys.push(key);
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, key: &str) -> Option<&[f32]> {
        self.index.get(key).map(|&i| self.row(i))
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        (0..self.len()).map(|i| self.row(i))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.keys.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parse the binary part; keys must be supplied separately.
    pub fn from_bytes(bytes: &[u8], keys: Vec<String>, path: &Path) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(Error::format(path, "missing OCE1 header"));
        }
        let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = &bytes[12..];
        if body.len() != count * dim * 4 {
            return Err(Error::format(
                path,
                format!(
                    "expected {} payload bytes, found {}",
                    count * dim * 4,
                    body.len()
                ),
            ));
        }
        if keys.len() != count {
            return Err(Error::format(
                path,
                format!("{} keys for {count} rows", keys.len()),
            ));
        }
        let data = body
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Self::from_rows(dim, keys, data).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let side = sidecar_path(path);
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let keys: Vec<String> = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: side.clone(),
            source,
        })?;
        Self::from_bytes(&bytes, keys, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))?;
        let side = sidecar_path(path);
        let text = serde_json::to_string(&self.keys).expect("strings serialize");
        fs::write(&side, text).map_err(|e| Error::io(&side, e))
    }
}
