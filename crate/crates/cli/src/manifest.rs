//! Output directory handling and the run manifest.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use pcbf::sim::SimConfig;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, Serialize)]
pub struct OutputFile {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

/// Record of one run. `config` plus `master_seed` reproduce every listed
/// CSV byte for byte (timing columns excepted).
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub master_seed: u64,
    pub jobs: Option<usize>,
    pub started_unix_secs: u64,
    pub wall_clock_secs: f64,
    pub config: SimConfig,
    pub outputs: Vec<OutputFile>,
}

pub fn sha256_hex(data: &[u8]) -> String {
    Sha256::digest(data).iter().map(|b| format!("{b:02x}")).collect()
}

/// Collects output files for one run and writes the manifest last.
pub struct OutDir {
    path: PathBuf,
    outputs: Vec<OutputFile>,
    started: SystemTime,
    clock: Instant,
}

impl OutDir {
    /// Creates the directory; failure is a usage error.
    pub fn create(path: &Path) -> Result<Self> {
        std::fs::create_dir_all(path).map_err(|source| CliError::OutDir {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self {
            path: path.to_path_buf(),
            outputs: Vec::new(),
            started: SystemTime::now(),
            clock: Instant::now(),
        })
    }

    pub fn write(&mut self, name: &str, data: &[u8]) -> Result<()> {
        let target = self.path.join(name);
        std::fs::write(&target, data).map_err(|source| CliError::OutDir {
            path: self.path.clone(),
            source,
        })?;
        log::info!("wrote {}", target.display());
        self.outputs.push(OutputFile {
            file: name.to_string(),
            bytes: data.len(),
            sha256: sha256_hex(data),
        });
        Ok(())
    }

    /// Writes the config snapshot and the manifest.
    pub fn finish(mut self, command: &str, cfg: &SimConfig, jobs: Option<usize>) -> Result<RunManifest> {
        self.write(CONFIG_FILE, crate::config::print(cfg)?.as_bytes())?;
        let manifest = RunManifest {
            tool: "pcbf",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            master_seed: cfg.master_seed,
            jobs,
            started_unix_secs: self.started.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            wall_clock_secs: self.clock.elapsed().as_secs_f64(),
            config: cfg.clone(),
            outputs: self.outputs,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(self.path.join(MANIFEST_FILE), text).map_err(|source| CliError::OutDir {
            path: self.path.clone(),
            source,
        })?;
        Ok(manifest)
    }
}
