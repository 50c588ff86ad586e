use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::formats::{write_json, FORMAT_VERSION};
use crate::{Error, Result};

pub const CONFIG_FILE: &str = "config.json";
pub const PROVENANCE_FILE: &str = "provenance.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self { path: path.display().to_string(), sha256: hex::encode(Sha256::digest(&bytes)) })
    }
}

/// What produced a run directory: command, seed, versions and digests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub seed: u64,
    pub format_version: u32,
    pub tool_version: String,
    pub config_sha256: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl Provenance {
    pub fn new(command: &str, config: &RunConfig, seed: u64) -> Self {
        let text = serde_json::to_vec(config).expect("config serialises");
        Self {
            command: command.to_string(),
            seed,
            format_version: FORMAT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: hex::encode(Sha256::digest(&text)),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn inputs(&mut self, paths: &[PathBuf]) -> Result<()> {
        for p in paths {
            self.inputs.push(FileDigest::of(p)?);
        }
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(FileDigest::of(path)?);
        Ok(())
    }

    /// Writes the resolved config and this record into `out`.
    pub fn write(&mut self, out: &Path, resolved: &RunConfig) -> Result<()> {
        let text = serde_json::to_vec(resolved).expect("config serialises");
        self.config_sha256 = hex::encode(Sha256::digest(&text));
        write_json(&out.join(CONFIG_FILE), resolved)?;
        write_json(&out.join(PROVENANCE_FILE), self)
    }
}
