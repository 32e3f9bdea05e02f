//! Per-run provenance manifest written next to every command's outputs.

use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub started: String,
    pub finished: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

pub struct ManifestBuilder {
    command: String,
    config_hash: String,
    seed: Option<u64>,
    started: String,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl ManifestBuilder {
    /// `config` is the command's serialized argument struct; its hash ties the
    /// manifest to the exact configuration that produced the outputs.
    pub fn start(command: &str, config: &impl Serialize, seed: Option<u64>) -> anyhow::Result<Self> {
        Ok(Self {
            command: command.to_string(),
            config_hash: config_hash_of(config)?,
            seed,
            started: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn input(&mut self, p: impl Into<PathBuf>) -> &mut Self {
        self.inputs.push(p.into());
        self
    }

    pub fn output(&mut self, p: impl Into<PathBuf>) -> &mut Self {
        self.outputs.push(p.into());
        self
    }

    /// Writes `manifest.json` into `dir` (exactly one per output directory).
    pub fn finish_dir(self, dir: &Path) -> anyhow::Result<PathBuf> {
        let path = dir.join("manifest.json");
        self.write(&path)?;
        Ok(path)
    }

    /// For single-file outputs: writes `<file>.manifest.json` beside it.
    pub fn finish_beside(self, file: &Path) -> anyhow::Result<PathBuf> {
        let mut name = file.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        let path = file.with_file_name(name);
        self.write(&path)?;
        Ok(path)
    }

    fn write(self, path: &Path) -> anyhow::Result<()> {
        let manifest = RunManifest {
            command: self.command,
            argv: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: self.config_hash,
            seed: self.seed,
            started: self.started,
            finished: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
            inputs: self.inputs,
            outputs: self.outputs,
        };
        std::fs::write(path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }
}

fn config_hash_of(config: &impl Serialize) -> anyhow::Result<String> {
    let json = serde_json::to_string(config)?;
    let mut h = Sha256::new();
    h.update(json.as_bytes());
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}
