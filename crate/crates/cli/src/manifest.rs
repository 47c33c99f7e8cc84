use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use ortho_hydra_core::harness::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const TOOL: &str = "ortho-hydra";

/// Everything needed to reproduce a run. Feeding a manifest back to
/// `run --config` repeats the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: TrainConfig,
    pub overrides: Vec<String>,
    pub seed: u64,
    /// Output role → file name inside the run directory.
    pub outputs: BTreeMap<String, String>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub warnings: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: TrainConfig, overrides: Vec<String>) -> Self {
        Self {
            tool: TOOL.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed: config.seed,
            config,
            overrides,
            outputs: BTreeMap::new(),
            started_unix: unix_now(),
            finished_unix: 0,
            warnings: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest is serializable");
        std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::ConfigParse(e.to_string()))
    }
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}
