use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::config::ModelConfig;
use super::params::Parameters;
use super::train::TrainingMeta;

/// Where an edited checkpoint came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditProvenance {
    pub method: String,
    pub case_id: String,
    pub layer: usize,
    /// Method-specific settings and diagnostics.
    #[serde(default)]
    pub details: serde_json::Value,
}

/// A model on disk: one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub parameters: Parameters,
    pub seed: u64,
    pub training_meta: TrainingMeta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edit: Option<EditProvenance>,
}

impl Checkpoint {
    pub fn new(config: ModelConfig, parameters: Parameters, seed: u64, training_meta: TrainingMeta) -> Self {
        Self {
            config,
            parameters,
            seed,
            training_meta,
            edit: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.parameters.validate(&self.config)
    }

    pub fn to_json(&self) -> Result<String> {
        if !self.parameters.is_finite() {
            return Err(Error::NonFinite("checkpoint parameters"));
        }
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Self = serde_json::from_str(text)?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
