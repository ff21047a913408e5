//! Run manifests and the single artifact writer of a run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::hex;
use crate::{Error, Result};

/// Name of the marker left in the output directory when a stage aborts.
pub const FAILED_MARKER: &str = "FAILED";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputRecord {
    /// Path relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageStatus {
    /// Completed; no audit attached.
    Done,
    Passed,
    AuditFailed,
    Aborted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub seconds: f64,
    pub status: StageStatus,
}

/// A solver residual or step statistic reported by a stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub stage: String,
    pub name: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub config_hash: String,
    pub tool_version: String,
    pub calibration_version: String,
    pub seed: u64,
    pub threads: usize,
    pub stages: Vec<StageRecord>,
    pub residuals: Vec<Residual>,
    pub flags: Vec<String>,
    pub outputs: Vec<OutputRecord>,
    /// Every audit passed and no stage aborted.
    pub pass: bool,
    /// `stage: diagnostics` of the aborting stage.
    pub failed: Option<String>,
}

impl RunManifest {
    pub fn output(&self, path: &str) -> Option<&OutputRecord> {
        self.outputs.iter().find(|o| o.path == path)
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Owns the output directory of one run; every file goes through here and is
/// hashed on the way out.
#[derive(Debug)]
pub struct ArtifactWriter {
    root: PathBuf,
    outputs: Vec<OutputRecord>,
}

impl ArtifactWriter {
    /// Creates `root` (and parents) and clears a stale failure marker.
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root)
            .map_err(|e| Error::Config(vec![format!("output: cannot create {}: {e}", root.display())]))?;
        let probe = root.join(".heatlab-write-test");
        std::fs::write(&probe, b"")
            .and_then(|_| std::fs::remove_file(&probe))
            .map_err(|e| Error::Config(vec![format!("output: {} is not writable: {e}", root.display())]))?;
        let marker = root.join(FAILED_MARKER);
        if marker.exists() {
            std::fs::remove_file(marker)?;
        }
        Ok(Self {
            root: root.to_path_buf(),
            outputs: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes)?;
        let record = OutputRecord {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        };
        match self.outputs.iter_mut().find(|o| o.path == name) {
            Some(o) => *o = record,
            None => self.outputs.push(record),
        }
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Registers a file produced by another writer routine (the binary
    /// environment format) under the same hashing.
    pub fn register(&mut self, name: &str) -> Result<()> {
        let bytes = std::fs::read(self.root.join(name))?;
        self.outputs.retain(|o| o.path != name);
        self.outputs.push(OutputRecord {
            path: name.to_string(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    pub fn outputs(&self) -> &[OutputRecord] {
        &self.outputs
    }

    pub fn mark_failed(&self, message: &str) -> Result<()> {
        std::fs::write(self.root.join(FAILED_MARKER), format!("{message}\n"))?;
        Ok(())
    }

    /// Writes `manifest.json`; it is not listed among its own outputs.
    pub fn finish(&self, manifest: &RunManifest) -> Result<()> {
        let mut text = serde_json::to_string_pretty(manifest)?;
        text.push('\n');
        std::fs::write(self.root.join(MANIFEST_FILE), text)?;
        Ok(())
    }
}
