//! Run manifests: what a command produced, where, and with which config.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

#[derive(Debug, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StageEntry {
    pub name: String,
    pub wall_clock_seconds: f64,
    pub artifacts: Vec<ArtifactEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub stages: Vec<StageEntry>,
}

pub struct ManifestBuilder {
    out_dir: PathBuf,
    manifest: RunManifest,
    stage_start: Instant,
}

impl ManifestBuilder {
    pub fn new<C: Serialize>(out_dir: &Path, config: &C) -> Result<Self> {
        let config_bytes = serde_json::to_vec(config)?;
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            manifest: RunManifest {
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                config_hash: hex::encode(Sha256::digest(&config_bytes)),
                stages: Vec::new(),
            },
            stage_start: Instant::now(),
        })
    }

    /// Record a finished stage and the artifacts it wrote (paths relative to
    /// the output directory).
    pub fn stage(&mut self, name: &str, artifacts: &[PathBuf]) -> Result<()> {
        let mut entries = Vec::with_capacity(artifacts.len());
        for path in artifacts {
            let bytes = std::fs::read(path)?;
            let rel = path
                .strip_prefix(&self.out_dir)
                .unwrap_or(path)
                .to_string_lossy()
                .to_string();
            entries.push(ArtifactEntry {
                path: rel,
                sha256: hex::encode(Sha256::digest(&bytes)),
            });
        }
        self.manifest.stages.push(StageEntry {
            name: name.to_string(),
            wall_clock_seconds: self.stage_start.elapsed().as_secs_f64(),
            artifacts: entries,
        });
        self.stage_start = Instant::now();
        Ok(())
    }

    pub fn write(self) -> Result<()> {
        ccg_core::io::write_json_atomic(&self.out_dir.join("manifest.json"), &self.manifest)?;
        Ok(())
    }
}

/// Verify that every artifact named by a manifest exists and hashes to its
/// recorded digest.
pub fn verify_manifest(out_dir: &Path) -> Result<Vec<String>> {
    let manifest: RunManifest =
        serde_json::from_reader(std::fs::File::open(out_dir.join("manifest.json"))?)?;
    let mut problems = Vec::new();
    for stage in &manifest.stages {
        for artifact in &stage.artifacts {
            let path = out_dir.join(&artifact.path);
            match std::fs::read(&path) {
                Err(_) => problems.push(format!("{} missing", artifact.path)),
                Ok(bytes) => {
                    if hex::encode(Sha256::digest(&bytes)) != artifact.sha256 {
                        problems.push(format!("{} hash mismatch", artifact.path));
                    }
                }
            }
        }
    }
    Ok(problems)
}
