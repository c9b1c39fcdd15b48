//! Versioned JSON checkpoints of the flat parameter vector.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{Architecture, ModelParams, ParamVector};
use super::ModelError;

pub const CHECKPOINT_FORMAT: &str = "phishbowl-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub arch: Architecture,
    /// Federated round or training epoch at which the snapshot was taken.
    pub step: usize,
    pub params: ParamVector,
}

impl Checkpoint {
    pub fn new(params: &ModelParams, step: usize) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            arch: *params.arch(),
            step,
            params: params.flatten(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let json = serde_json::to_vec(self).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        fs::write(path, json).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))
    }

    /// Loads a checkpoint and refuses it unless it was written for `expected`.
    pub fn load(path: &Path, expected: &Architecture) -> Result<ModelParams, ModelError> {
        let bytes =
            fs::read(path).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
        let ck: Checkpoint =
            serde_json::from_slice(&bytes).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        ck.into_params(expected)
    }

    pub fn into_params(self, expected: &Architecture) -> Result<ModelParams, ModelError> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        if self.arch != *expected {
            return Err(ModelError::ArchitectureMismatch {
                expected: *expected,
                found: self.arch,
            });
        }
        ModelParams::unflatten(self.arch, self.params)
    }
}
