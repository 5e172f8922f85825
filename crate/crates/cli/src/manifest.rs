//! The run manifest written next to every command's outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to reproduce a run. Contains no timestamps or absolute
/// output paths, so identical re-runs produce identical manifests.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: BTreeMap<String, FileDigest>,
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Collects inputs and outputs for one command invocation.
pub struct Run {
    out: PathBuf,
    command: String,
    config: serde_json::Value,
    seeds: BTreeMap<String, u64>,
    inputs: BTreeMap<String, FileDigest>,
    outputs: Vec<String>,
}

impl Run {
    pub fn new(out: &Path, command: impl Into<String>) -> Result<Self> {
        fs::create_dir_all(out)
            .with_context(|| format!("cannot create output directory {}", out.display()))?;
        Ok(Self {
            out: out.to_path_buf(),
            command: command.into(),
            config: serde_json::Value::Null,
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        })
    }

    pub fn config<T: Serialize>(&mut self, config: &T) -> &mut Self {
        self.config = serde_json::to_value(config).expect("config serializes");
        self
    }

    pub fn seed(&mut self, name: &str, seed: u64) -> &mut Self {
        self.seeds.insert(name.into(), seed);
        self
    }

    /// Records an input's digest. Inputs inside the output directory are
    /// rejected so a run can never overwrite what it reads.
    pub fn input(&mut self, name: &str, path: &Path) -> Result<()> {
        let sha256 = sha256_file(path)?;
        if let (Ok(dir), Ok(file)) = (self.out.canonicalize(), path.canonicalize()) {
            if file.parent() == Some(dir.as_path()) {
                bail!(
                    "input {} lives in the output directory; choose a different --out",
                    path.display()
                );
            }
        }
        self.inputs.insert(
            name.into(),
            FileDigest {
                path: path.display().to_string(),
                sha256,
            },
        );
        Ok(())
    }

    /// Path of a named output file; the file is digested when the run finishes.
    pub fn output(&mut self, file: &str) -> PathBuf {
        self.outputs.push(file.into());
        self.out.join(file)
    }

    pub fn finish(self) -> Result<()> {
        let mut outputs = BTreeMap::new();
        for f in &self.outputs {
            outputs.insert(f.clone(), sha256_file(&self.out.join(f))?);
        }
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            config: self.config,
            seeds: self.seeds,
            inputs: self.inputs,
            outputs,
        };
        let path = self.out.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, json + "\n").with_context(|| format!("cannot write {}", path.display()))
    }
}
