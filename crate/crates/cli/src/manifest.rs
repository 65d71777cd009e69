//! Run manifests: the resolved configuration plus content hashes of every
//! input and output file.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{read_json, write_json};
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool_version: String,
    pub command: String,
    /// Fully resolved configuration of the run.
    pub config: serde_json::Value,
    /// File name to SHA-256 hex digest.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub duration_secs: f64,
    pub finished_unix: u64,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| tscan_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    pub fn new<C: Serialize>(command: &str, config: &C) -> CliResult<Self> {
        Ok(Self {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config: serde_json::to_value(config).map_err(tscan_core::Error::from)?,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            duration_secs: 0.0,
            finished_unix: 0,
        })
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> CliResult<()> {
        self.outputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    /// Stamps the duration and writes `manifest.json` into `dir`.
    pub fn finish(mut self, dir: &Path, started: Instant) -> CliResult<Self> {
        self.duration_secs = started.elapsed().as_secs_f64();
        self.finished_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        write_json(&dir.join(MANIFEST_FILE), &self)?;
        Ok(self)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        read_json(path)
    }

    /// The recorded configuration, for a command that expects `command`.
    pub fn config_for<T: serde::de::DeserializeOwned>(&self, command: &str) -> CliResult<T> {
        if self.command != command {
            return Err(CliError::Config(format!(
                "manifest records command `{}`, expected `{command}`",
                self.command
            )));
        }
        serde_json::from_value(self.config.clone()).map_err(|e| CliError::Config(format!("manifest config: {e}")))
    }
}
