use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use rotmatch::tensor::checkpoint::write_atomic;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::hex;

pub const MANIFEST_FILE: &str = "run.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileHash {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
        Ok(Self {
            path: path.to_path_buf(),
            sha256: hex(&Sha256::digest(bytes)),
        })
    }
}

/// Provenance record written into every output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub config_hash: String,
    pub seed: u64,
    pub consumed: Vec<FileHash>,
    pub produced: Vec<FileHash>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

pub fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

impl RunManifest {
    pub fn start(command: Vec<String>, config_hash: String, seed: u64) -> Self {
        let t = now_ms();
        Self {
            command,
            config_hash,
            seed,
            consumed: Vec::new(),
            produced: Vec::new(),
            started_unix_ms: t,
            finished_unix_ms: t,
        }
    }

    pub fn consume(&mut self, path: &Path) -> Result<()> {
        self.consumed.push(FileHash::of(path)?);
        Ok(())
    }

    pub fn produce(&mut self, path: &Path) -> Result<()> {
        self.produced.push(FileHash::of(path)?);
        Ok(())
    }

    /// Stamps the finish time and writes `run.json` into `dir`, replacing any
    /// earlier manifest there.
    pub fn finish(mut self, dir: &Path) -> Result<Self> {
        self.finished_unix_ms = now_ms();
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_atomic(&dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&self)?.as_bytes())?;
        Ok(self)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let bytes = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}
