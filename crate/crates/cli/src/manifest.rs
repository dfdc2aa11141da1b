//! Run provenance: every run writes a manifest next to its outputs with the
//! fully resolved configuration, so any output can be regenerated exactly
//! (timestamps excluded).

use std::path::{Path, PathBuf};

use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    pub master_seed: u64,
    pub tool_version: String,
    pub started_utc: String,
    pub finished_utc: String,
    pub outputs: Vec<String>,
}

pub struct ManifestBuilder {
    subcommand: String,
    started: chrono::DateTime<chrono::Utc>,
    outputs: Vec<PathBuf>,
}

impl ManifestBuilder {
    pub fn start(subcommand: &str) -> Self {
        ManifestBuilder {
            subcommand: subcommand.to_string(),
            started: chrono::Utc::now(),
            outputs: Vec::new(),
        }
    }

    /// Record an output file written by the run.
    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Write the manifest into `dir` as `manifest.json`.
    pub fn finish(
        self,
        dir: &Path,
        config: serde_json::Value,
        master_seed: u64,
    ) -> anyhow::Result<PathBuf> {
        let manifest = RunManifest {
            subcommand: self.subcommand,
            config,
            master_seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_utc: self.started.to_rfc3339(),
            finished_utc: chrono::Utc::now().to_rfc3339(),
            outputs: self
                .outputs
                .iter()
                .map(|p| p.display().to_string())
                .collect(),
        };
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(path)
    }
}
