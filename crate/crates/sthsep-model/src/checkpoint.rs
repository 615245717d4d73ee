//! Checkpoint format: a single JSON document holding the config and every
//! parameter tensor. serde_json emits the shortest digits that parse back
//! to the same f64, so a save/load cycle reproduces values exactly.
//! Frozen flags are not stored; they are re-derived from the config.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sthsep_core::TensorF;

use crate::config::ModelConfig;
use crate::error::{ModelError, ModelResult};
use crate::model::Model;

pub const CHECKPOINT_MAGIC: &str = "STHSEP1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub magic: String,
    pub config: ModelConfig,
    pub params: Vec<ParamEntry>,
}

impl Checkpoint {
    pub fn from_model(model: &Model) -> Checkpoint {
        let params = model
            .store
            .iter()
            .map(|(name, entry)| ParamEntry {
                name: name.to_string(),
                shape: entry.value.shape().to_vec(),
                data: entry.value.data().to_vec(),
            })
            .collect();
        Checkpoint {
            magic: CHECKPOINT_MAGIC.to_string(),
            config: model.config().clone(),
            params,
        }
    }

    pub fn into_model(self) -> ModelResult<Model> {
        if self.magic != CHECKPOINT_MAGIC {
            return Err(ModelError::BadMagic(self.magic));
        }
        let mut params = Vec::with_capacity(self.params.len());
        for p in self.params {
            let tensor = TensorF::new(p.shape, p.data).map_err(|e| {
                ModelError::CheckpointParse(format!("parameter `{}`: {e}", p.name))
            })?;
            params.push((p.name, tensor));
        }
        Model::from_parts(self.config, params)
    }
}

pub fn save_checkpoint(model: &Model, path: &Path) -> ModelResult<()> {
    let ckpt = Checkpoint::from_model(model);
    let text = serde_json::to_string(&ckpt)
        .map_err(|e| ModelError::CheckpointParse(e.to_string()))?;
    fs::write(path, text).map_err(|source| ModelError::CheckpointIo {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> ModelResult<Model> {
    let text = fs::read_to_string(path).map_err(|source| ModelError::CheckpointIo {
        path: path.display().to_string(),
        source,
    })?;
    let ckpt: Checkpoint =
        serde_json::from_str(&text).map_err(|e| ModelError::CheckpointParse(e.to_string()))?;
    ckpt.into_model()
}
