use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const FORMAT_VERSION: u32 = 1;

/// Provenance record written next to every artifact set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub software_version: String,
    pub command: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub artifacts: Vec<PathBuf>,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completed_runs: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub failed_runs: BTreeMap<usize, String>,
    /// False while a multi-run command is still in progress.
    pub finished: bool,
}

pub struct ManifestBuilder {
    pub manifest: RunManifest,
    clock: Instant,
}

impl ManifestBuilder {
    pub fn start(config: impl Serialize) -> Self {
        let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        Self {
            manifest: RunManifest {
                format_version: FORMAT_VERSION,
                software_version: env!("CARGO_PKG_VERSION").to_string(),
                command: std::env::args().collect(),
                config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
                seeds: BTreeMap::new(),
                artifacts: Vec::new(),
                started_unix,
                wall_clock_seconds: 0.0,
                completed_runs: None,
                failed_runs: BTreeMap::new(),
                finished: false,
            },
            clock: Instant::now(),
        }
    }

    pub fn seed(&mut self, name: &str, seed: u64) -> &mut Self {
        self.manifest.seeds.insert(name.to_string(), seed);
        self
    }

    pub fn artifact(&mut self, path: impl AsRef<Path>) -> &mut Self {
        self.manifest.artifacts.push(path.as_ref().to_path_buf());
        self
    }

    pub fn write(&mut self, path: &Path, finished: bool) -> Result<(), CliError> {
        self.manifest.wall_clock_seconds = self.clock.elapsed().as_secs_f64();
        self.manifest.finished = finished;
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        std::fs::write(path, text).map_err(|e| CliError::io(path, e))
    }
}
