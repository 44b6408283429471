use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub status: StageStatus,
    pub stage_hash: String,
    pub seed: u64,
    pub elapsed_ms: u64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Append-only stage log of one run directory.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub path: PathBuf,
    pub records: Vec<StageRecord>,
    pub executed: Vec<String>,
    pub skipped: Vec<String>,
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).ctx(format!("read {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).ctx(format!("create {}", dir.display()))?;
        let path = dir.join(MANIFEST_FILE);
        let mut records = Vec::new();
        if path.exists() {
            let text = std::fs::read_to_string(&path).ctx(format!("read {}", path.display()))?;
            for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                records.push(
                    serde_json::from_str(line)
                        .map_err(|e| Error::Format(format!("{} line {}: {e}", path.display(), n + 1)))?,
                );
            }
        }
        Ok(Self {
            path,
            records,
            executed: Vec::new(),
            skipped: Vec::new(),
        })
    }

    fn dir(&self) -> &Path {
        self.path.parent().unwrap_or(Path::new("."))
    }

    fn rel(&self, p: &Path) -> String {
        p.strip_prefix(self.dir()).unwrap_or(p).to_string_lossy().into_owned()
    }

    fn abs(&self, s: &str) -> PathBuf {
        let p = Path::new(s);
        if p.is_absolute() {
            p.into()
        } else {
            self.dir().join(p)
        }
    }

    fn digests(&self, paths: &[PathBuf]) -> Result<Vec<FileDigest>> {
        paths
            .iter()
            .map(|p| {
                Ok(FileDigest {
                    path: self.rel(p),
                    sha256: file_digest(p)?,
                })
            })
            .collect()
    }

    pub fn last(&self, stage: &str) -> Option<&StageRecord> {
        self.records.iter().rev().find(|r| r.stage == stage)
    }

    /// True when the latest record of `stage` completed under `hash` and
    /// its recorded inputs and outputs still hash the same on disk.
    pub fn is_current(&self, stage: &str, hash: &str, inputs: &[PathBuf]) -> bool {
        let Some(r) = self.last(stage) else { return false };
        if r.status != StageStatus::Completed || r.stage_hash != hash {
            return false;
        }
        let now: Vec<String> = inputs.iter().map(|p| self.rel(p)).collect();
        let then: Vec<&str> = r.inputs.iter().map(|d| d.path.as_str()).collect();
        if now != then {
            return false;
        }
        r.inputs
            .iter()
            .chain(&r.outputs)
            .all(|d| file_digest(&self.abs(&d.path)).is_ok_and(|h| h == d.sha256))
    }

    fn append(&mut self, rec: StageRecord) -> Result<()> {
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .ctx(format!("open {}", self.path.display()))?;
        let mut line = serde_json::to_string(&rec)?;
        line.push('\n');
        f.write_all(line.as_bytes()).ctx(format!("append {}", self.path.display()))?;
        self.records.push(rec);
        Ok(())
    }

    /// Runs `body` unless the stage is current; `body` returns the files it
    /// wrote. Failures are recorded before the error is passed on.
    pub fn run(
        &mut self,
        stage: &str,
        hash: &str,
        seed: u64,
        inputs: &[PathBuf],
        force: bool,
        body: impl FnOnce() -> Result<Vec<PathBuf>>,
    ) -> Result<bool> {
        if !force && self.is_current(stage, hash, inputs) {
            self.skipped.push(stage.into());
            return Ok(false);
        }
        let t0 = Instant::now();
        let input_digests = self.digests(inputs)?;
        let result = body();
        let elapsed_ms = t0.elapsed().as_millis() as u64;
        match result {
            Ok(outputs) => {
                let outputs = self.digests(&outputs)?;
                self.append(StageRecord {
                    stage: stage.into(),
                    status: StageStatus::Completed,
                    stage_hash: hash.into(),
                    seed,
                    elapsed_ms,
                    inputs: input_digests,
                    outputs,
                    error: None,
                })?;
                self.executed.push(stage.into());
                Ok(true)
            }
            Err(e) => {
                self.append(StageRecord {
                    stage: stage.into(),
                    status: StageStatus::Failed,
                    stage_hash: hash.into(),
                    seed,
                    elapsed_ms,
                    inputs: input_digests,
                    outputs: Vec::new(),
                    error: Some(e.to_string()),
                })?;
                Err(e)
            }
        }
    }
}
