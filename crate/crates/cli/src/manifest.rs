use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::ResolvedConfig;
use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RUN_MANIFEST_FORMAT: u32 = 1;

/// Written once per output directory. `config` reproduces the run exactly;
/// only the timing fields vary between reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub format: u32,
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: ResolvedConfig,
    /// Command-specific seeds (evaluation seeds, policy list, and so on).
    #[serde(default)]
    pub seeds: serde_json::Value,
    pub artifacts: Vec<String>,
    #[serde(default)]
    pub details: serde_json::Value,
    pub started_unix_s: u64,
    pub wall_clock_s: f64,
}

pub struct Clock {
    started: SystemTime,
}

impl Clock {
    pub fn start() -> Self {
        Self {
            started: SystemTime::now(),
        }
    }

    pub fn manifest(
        &self,
        command: &str,
        config: &ResolvedConfig,
        seeds: serde_json::Value,
        artifacts: Vec<String>,
        details: serde_json::Value,
    ) -> RunManifest {
        RunManifest {
            format: RUN_MANIFEST_FORMAT,
            tool: "uwsn".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config: config.clone(),
            seeds,
            artifacts,
            details,
            started_unix_s: self.started.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            wall_clock_s: self.started.elapsed().map(|d| d.as_secs_f64()).unwrap_or(0.0),
        }
    }
}

pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<(), CliError> {
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest).map_err(|e| CliError::artifact(path.display(), e))?;
    fs::write(&path, text + "\n").map_err(|e| CliError::artifact(path.display(), e))
}
