//! Run manifests: what was run, with which settings, producing which files.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use waferseg_core::{Error, Result};

use crate::config::RunConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Command line as invoked.
    pub command: Vec<String>,
    pub tool_version: String,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    /// Seconds since the Unix epoch when the run started.
    pub started_unix: u64,
    pub elapsed_seconds: f64,
    pub config: RunConfig,
}

/// Collects inputs and outputs while a command runs.
pub struct ManifestBuilder {
    command: Vec<String>,
    config: RunConfig,
    inputs: Vec<String>,
    outputs: Vec<String>,
    started_unix: u64,
    clock: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &[String], config: &RunConfig) -> Self {
        Self {
            command: command.to_vec(),
            config: config.clone(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            clock: Instant::now(),
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.display().to_string());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn outputs(&self) -> Vec<PathBuf> {
        self.outputs.iter().map(PathBuf::from).collect()
    }

    pub fn finish(self) -> RunManifest {
        RunManifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.config.seed,
            inputs: self.inputs,
            outputs: self.outputs,
            started_unix: self.started_unix,
            elapsed_seconds: self.clock.elapsed().as_secs_f64(),
            config: self.config,
        }
    }

    /// Writes the manifest to `path`, listing it among its own outputs.
    pub fn write(mut self, path: &Path) -> Result<PathBuf> {
        self.output(path);
        std::fs::write(path, self.finish().to_toml())?;
        Ok(path.to_path_buf())
    }
}

impl RunManifest {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serialises")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::format(format!("invalid manifest: {e}")))
    }
}
