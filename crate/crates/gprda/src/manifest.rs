//! Per-command record of the configuration hash, produced files and timings.

use std::fs;
use std::path::{Path, PathBuf};

use gprda_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_DIR: &str = "manifests";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_sha256: String,
    /// Version of the tool that wrote the artifacts.
    pub version: String,
    pub seed: u64,
    pub files: Vec<FileEntry>,
    pub timings: Vec<Timing>,
}

impl RunManifest {
    pub fn total_seconds(&self) -> f64 {
        self.timings.iter().map(|t| t.seconds).sum()
    }

    pub fn path(out: &Path, command: &str) -> PathBuf {
        out.join(MANIFEST_DIR).join(format!("{command}.json"))
    }

    pub fn load(out: &Path, command: &str) -> Result<Self> {
        let path = Self::path(out, command);
        let text = fs::read_to_string(&path).map_err(|_| Error::Dependency(path.clone()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn sha256_file(path: &Path) -> Result<(u64, String)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok((bytes.len() as u64, hex::encode(Sha256::digest(&bytes))))
}

/// Every regular file below `dir`, sorted.
pub fn files_under(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let p = entry.map_err(|e| Error::io(&d, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Writes `manifests/<command>.json` listing `files` and returns its path.
pub fn write_manifest(
    out: &Path,
    command: &str,
    config_sha256: &str,
    seed: u64,
    mut files: Vec<PathBuf>,
    timings: Vec<Timing>,
) -> Result<PathBuf> {
    files.sort();
    files.dedup();
    let entries = files
        .iter()
        .map(|f| {
            let (bytes, sha256) = sha256_file(f)?;
            let rel = f.strip_prefix(out).unwrap_or(f);
            let path = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            Ok(FileEntry { path, bytes, sha256 })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = RunManifest {
        command: command.to_string(),
        config_sha256: config_sha256.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        files: entries,
        timings,
    };
    let path = RunManifest::path(out, command);
    let dir = path.parent().expect("manifest dir");
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
