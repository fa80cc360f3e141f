//! Run manifests: enough to reproduce a run (config hash, seed, version)
//! and to audit it (timestamps, outputs).

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const TOOL_NAME: &str = "radlabel";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub config_hash: String,
    pub seed: u64,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: Vec<String>,
}

pub struct RunTracker {
    subcommand: String,
    config_hash: String,
    seed: u64,
    started_at: chrono::DateTime<chrono::Utc>,
    outputs: Vec<PathBuf>,
}

impl RunTracker {
    /// `effective` should capture the merged config and resolved arguments;
    /// its canonical JSON is hashed.
    pub fn new(
        subcommand: &str,
        effective: &impl Serialize,
        seed: u64,
    ) -> anyhow::Result<Self> {
        let canonical = serde_json::to_string(effective)?;
        let digest = Sha256::digest(canonical.as_bytes());
        Ok(RunTracker {
            subcommand: subcommand.to_string(),
            config_hash: format!("sha256:{}", hex::encode(digest)),
            seed,
            started_at: chrono::Utc::now(),
            outputs: Vec::new(),
        })
    }

    pub fn record_output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    /// Writes `<primary>.manifest.json` next to the primary output (or
    /// `manifest.json` inside it when the primary is a directory).
    pub fn finish(self, primary: &Path) -> anyhow::Result<PathBuf> {
        let manifest = Manifest {
            tool: TOOL_NAME,
            version: TOOL_VERSION,
            subcommand: self.subcommand,
            config_hash: self.config_hash,
            seed: self.seed,
            started_at: self.started_at.to_rfc3339(),
            finished_at: chrono::Utc::now().to_rfc3339(),
            outputs: self
                .outputs
                .iter()
                .map(|p| p.display().to_string())
                .collect(),
        };
        let path = if primary.is_dir() {
            primary.join("manifest.json")
        } else {
            let mut name = primary
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".to_string());
            name.push_str(".manifest.json");
            primary.with_file_name(name)
        };
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lands_next_to_the_primary_output() {
        let dir = tempfile::tempdir().unwrap();
        let primary = dir.path().join("labels.jsonl");
        std::fs::write(&primary, "").unwrap();
        let mut tracker = RunTracker::new("label", &serde_json::json!({"a": 1}), 7).unwrap();
        tracker.record_output(&primary);
        let path = tracker.finish(&primary).unwrap();
        assert_eq!(path, dir.path().join("labels.jsonl.manifest.json"));
        let text = std::fs::read_to_string(path).unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["tool"], "radlabel");
        assert_eq!(value["seed"], 7);
        assert!(value["config_hash"].as_str().unwrap().starts_with("sha256:"));
    }

    #[test]
    fn config_hash_is_stable_for_identical_inputs() {
        let a = RunTracker::new("split", &serde_json::json!({"seed": 1}), 1).unwrap();
        let b = RunTracker::new("split", &serde_json::json!({"seed": 1}), 1).unwrap();
        assert_eq!(a.config_hash, b.config_hash);
        let c = RunTracker::new("split", &serde_json::json!({"seed": 2}), 2).unwrap();
        assert_ne!(a.config_hash, c.config_hash);
    }
}
