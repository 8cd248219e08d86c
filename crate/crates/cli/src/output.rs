//! Report, manifest and CSV writers.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::CliError;

pub struct OutDir(PathBuf);

impl OutDir {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(path)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))?;
        Ok(OutDir(path.to_path_buf()))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text =
            serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
        text.push('\n');
        std::fs::write(self.path(name), text)
            .map_err(|e| CliError::Runtime(format!("cannot write {name}: {e}")))
    }

    pub fn csv(
        &self,
        name: &str,
        header: &[&str],
        rows: impl IntoIterator<Item = Vec<String>>,
    ) -> Result<(), CliError> {
        let run = || -> Result<(), csv::Error> {
            let mut w = csv::Writer::from_path(self.path(name))?;
            w.write_record(header)?;
            for r in rows {
                w.write_record(&r)?;
            }
            w.flush()?;
            Ok(())
        };
        run().map_err(|e| CliError::Runtime(format!("cannot write {name}: {e}")))
    }
}

/// File-name-safe form of an experiment name.
pub fn slug(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn num(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub qresnet: &'static str,
    pub qresnet_cli: &'static str,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub args: Vec<String>,
    pub config_path: Option<String>,
    /// SHA-256 of the effective configuration as JSON, overrides applied.
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub desk_scale: bool,
    pub threads: Option<usize>,
    pub versions: Versions,
    pub outputs: Vec<String>,
    pub timestamp_unix: u64,
}

impl Manifest {
    pub fn new<C: Serialize>(command: &str, config: &C, config_path: Option<&Path>) -> Self {
        let canonical = serde_json::to_vec(config).unwrap_or_default();
        Manifest {
            command: command.into(),
            args: std::env::args().skip(1).collect(),
            config_path: config_path.map(|p| p.display().to_string()),
            config_sha256: hex::encode(Sha256::digest(&canonical)),
            seeds: Vec::new(),
            desk_scale: false,
            threads: None,
            versions: Versions {
                qresnet: qresnet::VERSION,
                qresnet_cli: env!("CARGO_PKG_VERSION"),
            },
            outputs: Vec::new(),
            timestamp_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        }
    }
}
