//! One manifest per run: enough to replay the command exactly.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use dera_core::{Error, Result};

pub const FILE_NAME: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    /// Arguments after the program name, as parsed.
    pub args: Vec<String>,
    pub config_paths: Vec<String>,
    /// `DERA_` overrides in effect, keys lowercased.
    pub overrides: BTreeMap<String, String>,
    pub seed: u64,
    pub outputs: Vec<String>,
    /// Model parameter values after files and overrides were applied.
    pub resolved: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(dir.join(FILE_NAME), text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = crate::config::read_text(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}
