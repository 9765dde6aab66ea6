//! Provenance record written next to every artifact set.

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

pub const MANIFEST_FILE: &str = "run.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_digest: String,
    pub code_version: String,
    pub dataset_digest: Option<String>,
    /// Seconds since the Unix epoch.
    pub started: u64,
    pub finished: u64,
    /// Paths relative to the manifest's directory.
    pub artifacts: Vec<PathBuf>,
}

pub fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, config_digest: String, dataset_digest: Option<String>) -> Self {
        Self {
            command: command.to_string(),
            config_digest,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            dataset_digest,
            started: now(),
            finished: 0,
            artifacts: Vec::new(),
        }
    }

    /// Stamps the end time and writes `dir/run.json` atomically.
    pub fn finish(mut self, dir: &Path) -> Result<Self> {
        self.finished = now();
        self.artifacts.sort();
        self.artifacts.dedup();
        let json = serde_json::to_string_pretty(&self)? + "\n";
        write_atomic(&dir.join(MANIFEST_FILE), json.as_bytes())?;
        Ok(self)
    }
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}
