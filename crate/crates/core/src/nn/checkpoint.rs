//! JSON checkpoint container: parameter name → shape, data and optimizer
//! moments, plus a free-form `model` header supplied by the owner.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::param::{Param, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: serde_json::Value,
    pub optimizer_steps: u64,
    /// Sorted by name so the serialized form is stable.
    pub params: BTreeMap<String, ParamRecord>,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, model: serde_json::Value, optimizer_steps: u64) -> Self {
        let params = store
            .iter()
            .map(|(_, p)| {
                (
                    p.name.clone(),
                    ParamRecord {
                        shape: p.value.shape().to_vec(),
                        data: p.value.data().to_vec(),
                        m: p.m.data().to_vec(),
                        v: p.v.data().to_vec(),
                        steps: p.steps,
                    },
                )
            })
            .collect();
        Self {
            version: CHECKPOINT_VERSION,
            model,
            optimizer_steps,
            params,
        }
    }

    /// Copies values and moments into `store`, which must contain exactly the
    /// same parameter names and shapes.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        if self.params.len() != store.len() {
            return Err(Error::ModelMismatch(format!(
                "checkpoint has {} parameters, model has {}",
                self.params.len(),
                store.len()
            )));
        }
        for (_, p) in store.iter_mut() {
            let rec = self.params.get(&p.name).ok_or_else(|| {
                Error::ModelMismatch(format!("parameter {} missing from checkpoint", p.name))
            })?;
            if rec.shape != p.value.shape() {
                return Err(Error::ModelMismatch(format!(
                    "parameter {} has shape {:?} in checkpoint, {:?} in model",
                    p.name,
                    rec.shape,
                    p.value.shape()
                )));
            }
            let restored = Param {
                name: p.name.clone(),
                value: Tensor::new(rec.shape.clone(), rec.data.clone())?,
                grad: Tensor::zeros(&rec.shape),
                m: Tensor::new(rec.shape.clone(), rec.m.clone())?,
                v: Tensor::new(rec.shape.clone(), rec.v.clone())?,
                steps: rec.steps,
            };
            *p = restored;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::ModelMismatch(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }
}
