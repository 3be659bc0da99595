//! Versioned JSON container for model parameters.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::adam::AdamState;
use super::params::ParamStore;
use super::tensor::Tensor;
use super::NnError;
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub kind: String,
    pub scalar: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub rng_seed: u64,
    pub params: Vec<NamedTensor>,
    #[serde(default)]
    pub optimizer: Option<AdamState>,
    /// Model-specific attachments (tokenizer vocabulary, label map, feature
    /// transform parameters, training history).
    #[serde(default)]
    pub extras: BTreeMap<String, serde_json::Value>,
}

/// Hex SHA-256 of the canonical JSON encoding of `config`.
pub fn config_hash<C: Serialize>(config: &C) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    hex_digest(&bytes)
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn from_store<T: Scalar, C: Serialize>(kind: &str, config: &C, rng_seed: u64, store: &ParamStore<T>) -> Self {
        let params = store
            .names()
            .iter()
            .zip(store.tensors())
            .map(|(name, t)| NamedTensor { name: name.clone(), shape: t.shape().to_vec(), data: t.to_f64_vec() })
            .collect();
        Self {
            format_version: CHECKPOINT_FORMAT,
            kind: kind.to_string(),
            scalar: T::TAG.to_string(),
            config: serde_json::to_value(config).expect("config serializes"),
            config_hash: config_hash(config),
            rng_seed,
            params,
            optimizer: None,
            extras: BTreeMap::new(),
        }
    }

    /// Copies parameters into a store built from the same config. Names and
    /// shapes must match one-to-one.
    pub fn load_into<T: Scalar>(&self, store: &mut ParamStore<T>) -> Result<(), NnError> {
        if self.params.len() != store.len() {
            return Err(NnError::Checkpoint(format!(
                "checkpoint has {} tensors, model expects {}",
                self.params.len(),
                store.len()
            )));
        }
        let names = store.names().to_vec();
        for (k, (nt, name)) in self.params.iter().zip(names).enumerate() {
            let target = &mut store.tensors_mut()[k];
            if nt.name != name || nt.shape != target.shape() {
                return Err(NnError::Checkpoint(format!(
                    "tensor {k}: checkpoint {} {:?} vs model {} {:?}",
                    nt.name,
                    nt.shape,
                    name,
                    target.shape()
                )));
            }
            *target = Tensor::from_f64(&nt.shape, &nt.data)?;
        }
        Ok(())
    }

    pub fn verify<C: Serialize>(&self, kind: &str, config: &C) -> Result<(), NnError> {
        if self.format_version != CHECKPOINT_FORMAT {
            return Err(NnError::Checkpoint(format!("unsupported format version {}", self.format_version)));
        }
        if self.kind != kind {
            return Err(NnError::Checkpoint(format!("expected a {kind} checkpoint, found {}", self.kind)));
        }
        let expected = config_hash(config);
        if self.config_hash != expected {
            return Err(NnError::ConfigHashMismatch { expected, found: self.config_hash.clone() });
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let bytes = std::fs::read(path)?;
        let ck: Checkpoint = serde_json::from_slice(&bytes)?;
        Ok(ck)
    }

    /// Hash of the serialized checkpoint, for provenance records.
    pub fn file_hash(path: &Path) -> Result<String, NnError> {
        Ok(hex_digest(&std::fs::read(path)?))
    }
}
