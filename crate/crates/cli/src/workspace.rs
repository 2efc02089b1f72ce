//! Versioned stage directories and run manifests.
//!
//! Every run of a stage writes into a fresh `v0001`, `v0002`, ... directory
//! under `<workspace>/<stage>[/<key>...]`. `run.json` is written last, so a
//! directory without it is an interrupted run and is never read downstream.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;

pub const MANIFEST_FILE: &str = "run.json";

/// A missing upstream output or a failed check. Reported with exit code 1.
#[derive(Debug)]
pub struct ValidationFailure(pub String);

impl fmt::Display for ValidationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ValidationFailure {}

pub fn validation_failure(msg: impl Into<String>) -> anyhow::Error {
    ValidationFailure(msg.into()).into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub version: u32,
    pub tool_version: String,
    pub created_unix: u64,
    pub seed: u64,
    pub config_sha256: String,
    pub config: serde_json::Value,
    /// Input files read by the run, relative to the workspace, with hashes.
    pub inputs: BTreeMap<String, String>,
    /// Files written by the run, relative to the run directory, with hashes.
    pub outputs: BTreeMap<String, String>,
    pub summary: serde_json::Value,
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn config_hash(config: &Config) -> anyhow::Result<String> {
    let json = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(&json)))
}

#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    fn stage_dir(&self, stage: &[&str]) -> PathBuf {
        stage.iter().fold(self.root.clone(), |p, s| p.join(s))
    }

    /// Completed versions of a stage, oldest first.
    pub fn versions(&self, stage: &[&str]) -> Vec<(u32, PathBuf)> {
        let dir = self.stage_dir(stage);
        let Ok(entries) = std::fs::read_dir(&dir) else {
            return Vec::new();
        };
        let mut out: Vec<(u32, PathBuf)> = entries
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().to_string_lossy().to_string();
                let n: u32 = name.strip_prefix('v')?.parse().ok()?;
                e.path().join(MANIFEST_FILE).is_file().then(|| (n, e.path()))
            })
            .collect();
        out.sort();
        out
    }

    /// Newest completed version of `stage` that contains `file`.
    pub fn latest_with(&self, stage: &[&str], file: &str) -> Option<PathBuf> {
        self.versions(stage)
            .into_iter()
            .rev()
            .map(|(_, p)| p)
            .find(|p| p.join(file).exists())
    }

    /// Like `latest_with`, but a missing output is a validation failure that
    /// names the command to run first.
    pub fn require(&self, stage: &[&str], file: &str, hint: &str) -> anyhow::Result<PathBuf> {
        self.latest_with(stage, file).ok_or_else(|| {
            validation_failure(format!(
                "missing {} output in {}: run `{hint}` first",
                stage.join("/"),
                self.stage_dir(stage).display()
            ))
        })
    }

    /// Claim the next version directory of `stage`.
    pub fn begin(&self, stage: &[&str]) -> anyhow::Result<Run> {
        let dir = self.stage_dir(stage);
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut next = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_string_lossy().strip_prefix('v')?.parse::<u32>().ok())
            .max()
            .unwrap_or(0)
            + 1;
        loop {
            let path = dir.join(format!("v{next:04}"));
            match std::fs::create_dir(&path) {
                Ok(()) => {
                    return Ok(Run {
                        stage: stage.join("/"),
                        version: next,
                        dir: path,
                        workspace: self.root.clone(),
                        inputs: Vec::new(),
                    })
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => next += 1,
                Err(e) => return Err(e).with_context(|| format!("creating {}", path.display())),
            }
        }
    }
}

/// A stage run in progress.
#[derive(Debug)]
pub struct Run {
    pub stage: String,
    pub version: u32,
    pub dir: PathBuf,
    workspace: PathBuf,
    inputs: Vec<PathBuf>,
}

impl Run {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Record an input file; returns it for convenience.
    pub fn input(&mut self, path: PathBuf) -> PathBuf {
        self.inputs.push(path.clone());
        path
    }

    /// Hash inputs and outputs and write `run.json`.
    pub fn finish(self, config: &Config, summary: serde_json::Value) -> anyhow::Result<PathBuf> {
        let mut inputs = BTreeMap::new();
        for p in &self.inputs {
            let key = p.strip_prefix(&self.workspace).unwrap_or(p).to_string_lossy().to_string();
            inputs.insert(key, sha256_file(p)?);
        }
        let mut outputs = BTreeMap::new();
        for entry in walkdir::WalkDir::new(&self.dir).sort_by_file_name() {
            let entry = entry?;
            if entry.file_type().is_file() {
                let rel = entry.path().strip_prefix(&self.dir)?.to_string_lossy().to_string();
                outputs.insert(rel, sha256_file(entry.path())?);
            }
        }
        let manifest = RunManifest {
            stage: self.stage.clone(),
            version: self.version,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            seed: config.seed,
            config_sha256: config_hash(config)?,
            config: serde_json::to_value(config)?,
            inputs,
            outputs,
            summary,
        };
        let path = self.dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(self.dir)
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn write_json_lines<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json_lines<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), n + 1)))
        .collect()
}
