use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to reproduce a run. Contains no timestamps or host
/// details, so identical runs write identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub inputs: Vec<String>,
    pub config_file: Option<String>,
    /// Keys set on the command line, in the order given.
    pub overrides: Vec<(String, String)>,
    /// Effective value of every config key.
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub out_dir: String,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        write_json(&dir.join(MANIFEST_FILE), self)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Failed(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(CliError::io(format!("writing {}", path.display())))
}
