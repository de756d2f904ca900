//! Flat parameter storage shared by all networks.
//!
//! Networks allocate parameters once at construction and refer to them by
//! `ParamId`. Freezing is a per-parameter flag; frozen parameters still let
//! gradients flow through their ops but never receive weight gradients and
//! are skipped by the optimizer.

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Default)]
pub struct ParamStore {
    vals: Vec<ArrayD<f64>>,
    trainable: Vec<bool>,
    names: Vec<String>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<f64>) -> ParamId {
        self.vals.push(value);
        self.trainable.push(true);
        self.names.push(name.into());
        ParamId(self.vals.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &ArrayD<f64> {
        &self.vals[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ArrayD<f64> {
        &mut self.vals[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.trainable[id.0]
    }

    pub fn set_trainable(&mut self, id: ParamId, on: bool) {
        self.trainable[id.0] = on;
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.vals.len()).map(ParamId)
    }

    pub fn id_by_name(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn num_scalars(&self, ids: &[ParamId]) -> usize {
        ids.iter().map(|id| self.get(*id).len()).sum()
    }

    /// SHA-256 over the little-endian bytes of the listed parameters, in order.
    pub fn fingerprint(&self, ids: &[ParamId]) -> String {
        let mut hasher = Sha256::new();
        for id in ids {
            for v in self.get(*id).iter() {
                hasher.update(v.to_le_bytes());
            }
        }
        hex_string(&hasher.finalize())
    }

    pub fn to_blob(&self) -> ParamBlob {
        ParamBlob {
            params: self
                .vals
                .iter()
                .zip(&self.names)
                .map(|(v, n)| ParamEntry {
                    name: n.clone(),
                    shape: v.shape().to_vec(),
                    data: v.iter().copied().collect(),
                })
                .collect(),
        }
    }

    pub fn load_blob(&mut self, blob: &ParamBlob) -> Result<(), String> {
        if blob.params.len() != self.vals.len() {
            return Err(format!(
                "parameter count mismatch: checkpoint has {}, model has {}",
                blob.params.len(),
                self.vals.len()
            ));
        }
        for (i, entry) in blob.params.iter().enumerate() {
            if entry.shape != self.vals[i].shape() {
                return Err(format!(
                    "shape mismatch for {}: checkpoint {:?}, model {:?}",
                    entry.name,
                    entry.shape,
                    self.vals[i].shape()
                ));
            }
            self.vals[i] = ArrayD::from_shape_vec(entry.shape.clone(), entry.data.clone())
                .map_err(|e| e.to_string())?;
        }
        Ok(())
    }
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Serializable parameter container for checkpoints.
#[derive(Serialize, Deserialize)]
pub struct ParamBlob {
    pub params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}
