use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sess_core::io::write_json;

use crate::CliError;

/// Written before any heavy work; enough to rerun the command exactly.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub seeds: Vec<u64>,
    pub artifacts: Vec<PathBuf>,
    pub tool_version: String,
    pub timestamp: String,
}

impl RunManifest {
    pub fn new(command: &str, config: &impl Serialize, seeds: Vec<u64>, artifacts: Vec<PathBuf>) -> Self {
        RunManifest {
            command: command.to_string(),
            config: serde_json::to_value(config).unwrap_or(Value::Null),
            seeds,
            artifacts,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        write_json(&dir.join("manifest.json"), self).map_err(CliError::from)
    }
}
