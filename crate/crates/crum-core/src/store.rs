//! Named-tensor checkpoint container with a metadata header.
//!
//! JSON payload; floating-point values are serialized with shortest-exact
//! formatting, so `load(save(p))` reproduces every tensor bit for bit.

use crate::error::{CrumError, Result};
use crate::scalar::Scalar;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

const STORE_FORMAT: &str = "crum-params";
const STORE_VERSION: u32 = 1;

/// Header identifying what produced a checkpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreMeta {
    /// Pipeline stage that wrote the checkpoint.
    pub stage: String,
    /// Hash of the run configuration the checkpoint belongs to.
    pub config_hash: String,
    /// Master seed of the run.
    pub seed: u64,
    /// Unix timestamp (seconds) of the write; informational only.
    pub timestamp: u64,
    /// Free-form extras (architecture flags, epoch counts).
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

/// One named tensor with its shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Serialize", deserialize = "S: Deserialize<'de>"))]
pub struct NamedTensor<S: Scalar> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Row-major values, `rows * cols` entries.
    pub data: Vec<S>,
}

/// Serializable set of named tensors plus run metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Serialize", deserialize = "S: Deserialize<'de>"))]
pub struct ParameterStore<S: Scalar> {
    format: String,
    version: u32,
    pub meta: StoreMeta,
    pub tensors: Vec<NamedTensor<S>>,
}

impl<S: Scalar> ParameterStore<S> {
    pub fn new(meta: StoreMeta) -> Self {
        ParameterStore {
            format: STORE_FORMAT.to_string(),
            version: STORE_VERSION,
            meta,
            tensors: Vec::new(),
        }
    }

    /// Adds a tensor under a unique name.
    pub fn insert(&mut self, name: &str, tensor: &Array2<S>) -> Result<()> {
        if self.tensors.iter().any(|t| t.name == name) {
            return Err(CrumError::Schema(format!("duplicate tensor name '{name}'")));
        }
        self.tensors.push(NamedTensor {
            name: name.to_string(),
            rows: tensor.nrows(),
            cols: tensor.ncols(),
            data: tensor.iter().cloned().collect(),
        });
        Ok(())
    }

    /// Retrieves a tensor by name.
    pub fn get(&self, name: &str) -> Result<Array2<S>> {
        let t = self
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| CrumError::Schema(format!("missing tensor '{name}'")))?;
        Array2::from_shape_vec((t.rows, t.cols), t.data.clone())
            .map_err(|e| CrumError::Schema(format!("tensor '{name}' shape mismatch: {e}")))
    }

    /// Names in insertion order.
    pub fn names(&self) -> Vec<&str> {
        self.tensors.iter().map(|t| t.name.as_str()).collect()
    }

    /// Writes the store as JSON.
    pub fn save(&self, path: &Path) -> Result<()>
    where
        S: Serialize,
    {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    /// Reads a store, optionally enforcing that it belongs to the given
    /// config hash. Passing `None` overrides the check.
    pub fn load(path: &Path, expected_config_hash: Option<&str>) -> Result<Self>
    where
        S: for<'de> Deserialize<'de>,
    {
        let text = std::fs::read_to_string(path)?;
        let store: ParameterStore<S> = serde_json::from_str(&text)?;
        if store.format != STORE_FORMAT || store.version != STORE_VERSION {
            return Err(CrumError::Schema(format!(
                "expected {STORE_FORMAT} v{STORE_VERSION}, found '{}' v{}",
                store.format, store.version
            )));
        }
        for t in &store.tensors {
            if t.data.len() != t.rows * t.cols {
                return Err(CrumError::Schema(format!(
                    "tensor '{}' declares {}x{} but holds {} values",
                    t.name,
                    t.rows,
                    t.cols,
                    t.data.len()
                )));
            }
        }
        if let Some(expected) = expected_config_hash {
            if store.meta.config_hash != expected {
                return Err(CrumError::Config(format!(
                    "checkpoint at {} belongs to config {} but the run expects {}",
                    path.display(),
                    store.meta.config_hash,
                    expected
                )));
            }
        }
        Ok(store)
    }
}

/// Current Unix time in seconds for checkpoint headers.
pub fn unix_timestamp() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
