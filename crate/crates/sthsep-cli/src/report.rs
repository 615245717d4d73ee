//! Machine-readable run reports with a stable schema.

use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sthsep_model::ModelConfig;

use crate::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub mae: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSet {
    pub val: SplitMetrics,
    pub test: SplitMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub schema_version: u32,
    pub seed: u64,
    pub config: ModelConfig,
    pub splits: SplitSet,
    pub runtime_s: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub predictions_path: Option<String>,
}

impl ForecastReport {
    pub fn write(&self, path: &Path) -> CliResult<()> {
        let json = serde_json::to_string_pretty(self)
            .context("serialize report")
            .map_err(CliError::runtime)?;
        std::fs::write(path, json + "\n")
            .with_context(|| format!("cannot write {}", path.display()))
            .map_err(CliError::runtime)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read {}", path.display()))
            .map_err(CliError::parse)?;
        serde_json::from_str(&text)
            .with_context(|| format!("{} is not a valid report", path.display()))
            .map_err(CliError::parse)
    }
}
