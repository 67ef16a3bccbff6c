//! `manifest.json`: what a subcommand was given and what it was asked to do.
//! No timestamps or host details, so equal manifests mean equal runs.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: u64,
    pub flags: Value,
    pub inputs: Vec<InputDigest>,
    pub details: Value,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, flags: Value) -> Self {
        Manifest {
            tool: "topicstream",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            seed,
            flags,
            inputs: Vec::new(),
            details: Value::Null,
        }
    }

    /// Records a digest for a file, or for every file under a directory.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        let mut files = Vec::new();
        collect_files(path, &mut files)?;
        for f in files {
            let bytes = fs::read(&f).with_context(|| format!("reading {}", f.display()))?;
            let digest = Sha256::digest(&bytes);
            let sha256 = digest.iter().map(|b| format!("{b:02x}")).collect();
            self.inputs.push(InputDigest { path: f, sha256 });
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}

fn collect_files(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .with_context(|| format!("listing {}", path.display()))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        entries.sort();
        for e in entries {
            // a previous manifest in an input directory is not an input
            if e.file_name().is_some_and(|n| n == "manifest.json") {
                continue;
            }
            collect_files(&e, out)?;
        }
    } else if path.exists() {
        out.push(path.to_path_buf());
    }
    Ok(())
}
