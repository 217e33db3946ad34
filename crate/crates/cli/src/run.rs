//! Run directories: every invocation writes its artifacts next to a
//! `manifest.json` recording the resolved configuration and the SHA-256 of
//! each file.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::Cli;
use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";

/// A file produced by a command, kept in memory until the run is persisted.
#[derive(Debug, Clone)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn new(name: impl Into<String>, bytes: Vec<u8>) -> Self {
        Self {
            name: name.into(),
            bytes,
        }
    }

    pub fn json<T: Serialize>(name: impl Into<String>, value: &T) -> Result<Self, CliError> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        Ok(Self::new(name, bytes))
    }
}

/// What a command produced.
#[derive(Debug, Default)]
pub struct Outcome {
    /// Printed on stdout.
    pub stdout: String,
    pub artifacts: Vec<Artifact>,
    pub seed: Option<u64>,
    /// Set when the command ran to completion but its checks failed.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub created_at: String,
    pub tool_version: String,
    pub command: String,
    /// Arguments after the program name, as given.
    pub argv: Vec<String>,
    /// Fully resolved command configuration, defaults included.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub artifacts: Vec<ArtifactEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn run_id(created: &DateTime<Utc>, argv: &[String]) -> String {
    let mut h = Sha256::new();
    for a in argv {
        h.update(a.as_bytes());
        h.update([0]);
    }
    h.update(created.timestamp_nanos_opt().unwrap_or_default().to_le_bytes());
    let digest = hex::encode(h.finalize());
    format!("{}-{}", created.format("%Y%m%dT%H%M%S"), &digest[..8])
}

/// Writes the artifacts and the manifest into the run directory.
pub fn persist(cli: &Cli, argv: &[String], outcome: &Outcome) -> Result<(PathBuf, RunManifest), CliError> {
    let created = Utc::now();
    let run_id = run_id(&created, argv);
    let dir = cli
        .out
        .clone()
        .unwrap_or_else(|| Path::new("runs").join(format!("{}-{run_id}", cli.command.name())));
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;

    let mut entries = Vec::with_capacity(outcome.artifacts.len());
    for a in &outcome.artifacts {
        let path = dir.join(&a.name);
        fs::write(&path, &a.bytes).map_err(|e| CliError::io(&path, e))?;
        entries.push(ArtifactEntry {
            path: a.name.clone(),
            sha256: sha256_hex(&a.bytes),
            bytes: a.bytes.len() as u64,
        });
    }
    let manifest = RunManifest {
        run_id,
        created_at: created.to_rfc3339_opts(SecondsFormat::Millis, true),
        tool_version: env!("CARGO_PKG_VERSION").to_owned(),
        command: cli.command.name().to_owned(),
        argv: argv.to_vec(),
        config: serde_json::to_value(&cli.command)?,
        seed: outcome.seed,
        artifacts: entries,
    };
    let path = dir.join(MANIFEST);
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
    Ok((dir, manifest))
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest, CliError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
}
