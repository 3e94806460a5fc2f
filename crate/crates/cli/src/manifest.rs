//! Per-stage run manifests: configuration hash, seed, and fingerprints of
//! every input and output. Timestamps appear only here.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use postocr::bpe::fnv1a64;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub fnv1a64: String,
    pub bytes: u64,
}

impl FileRecord {
    pub fn of(path: &Path) -> anyhow::Result<Self> {
        let data = std::fs::read(path).with_context(|| format!("fingerprinting {}", path.display()))?;
        Ok(Self {
            path: path.to_path_buf(),
            fnv1a64: format!("{:016x}", fnv1a64(&data)),
            bytes: data.len() as u64,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub stage: String,
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    pub fn start(stage: &str, config_hash: String, seed: u64) -> Self {
        Self {
            stage: stage.to_owned(),
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            config_hash,
            seed,
            started_unix: now(),
            finished_unix: 0,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        self.inputs.push(FileRecord::of(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> anyhow::Result<()> {
        self.outputs.push(FileRecord::of(path)?);
        Ok(())
    }

    /// Writes `<dir>/<stage>.json`.
    pub fn finish(mut self, dir: &Path) -> anyhow::Result<PathBuf> {
        self.finished_unix = now();
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("{}.json", self.stage));
        std::fs::write(&path, serde_json::to_string_pretty(&self)? + "\n")?;
        Ok(path)
    }
}
