//! `manifest.json`: everything needed to repeat an invocation.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: String,
    pub started_unix_secs: u64,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Fully resolved configuration; `--config` accepts this file as is.
    pub config: serde_json::Value,
    /// Sweep dimensions for lodo and ablate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<serde_json::Value>,
}

impl RunManifest {
    pub fn new(command: &str, config: &impl Serialize, seed: Option<u64>) -> Result<Self, CliError> {
        let started_unix_secs = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Ok(RunManifest {
            command: command.into(),
            argv: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION").into(),
            started_unix_secs,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            config: serde_json::to_value(config).map_err(caudg_core::Error::from)?,
            sweep: None,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))?;
        let path = dir.join(MANIFEST_FILE);
        let mut json = serde_json::to_vec_pretty(self).map_err(caudg_core::Error::from)?;
        json.push(b'\n');
        std::fs::write(&path, json).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}
