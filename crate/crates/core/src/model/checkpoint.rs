//! Self-describing JSON checkpoint: config plus named tensors.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{init_params, ModelConfig, ModelParams, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: &str = "introspect-v1";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: String,
    pub config: ModelConfig,
    pub tensors: Vec<NamedTensor>,
    /// Free-form run metadata (policy mode, temperature bounds, update index).
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl Checkpoint {
    pub fn from_params(params: &ModelParams) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION.to_string(),
            config: params.config.clone(),
            tensors: params
                .tensors()
                .into_iter()
                .map(|(name, _, t)| NamedTensor {
                    name,
                    shape: t.shape.clone(),
                    data: t.data.clone(),
                })
                .collect(),
            metadata: BTreeMap::new(),
        }
    }

    /// Rebuilds parameters, checking every tensor name, shape and value.
    pub fn to_params(&self) -> Result<ModelParams> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version '{}'",
                self.version
            )));
        }
        let mut params = init_params(&self.config, 0)?;
        let mut by_name: BTreeMap<&str, &NamedTensor> = BTreeMap::new();
        for t in &self.tensors {
            if by_name.insert(t.name.as_str(), t).is_some() {
                return Err(Error::Format(format!("duplicate tensor '{}'", t.name)));
            }
        }
        let expected = params.tensors().len();
        if by_name.len() != expected {
            return Err(Error::Format(format!(
                "checkpoint has {} tensors, config implies {expected}",
                by_name.len()
            )));
        }
        for (name, _, dst) in params.tensors_mut() {
            let src = by_name
                .get(name.as_str())
                .ok_or_else(|| Error::Format(format!("missing tensor '{name}'")))?;
            if src.shape != dst.shape || src.data.len() != dst.data.len() {
                return Err(Error::Format(format!(
                    "tensor '{name}' has shape {:?}/{} values, expected {:?}",
                    src.shape,
                    src.data.len(),
                    dst.shape
                )));
            }
            if src.data.iter().any(|x| !x.is_finite()) {
                return Err(Error::Format(format!("tensor '{name}' has non-finite values")));
            }
            *dst = Tensor {
                shape: src.shape.clone(),
                data: src.data.clone(),
            };
        }
        Ok(params)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, ckpt.to_json()?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_json(&std::fs::read_to_string(path)?)
}
