//! Run configuration: a flat TOML file whose keys are exactly the
//! [`SimConfig`] fields, with command-line flags applied on top.

use std::path::Path;

use pcbf::sim::{Method, SimConfig};

use crate::error::{CliError, Result};

/// Flags that override file values; `None` keeps the file (or default).
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub sigma: Option<f64>,
    pub horizon: Option<usize>,
    pub n_traj: Option<usize>,
    pub method: Option<Method>,
    pub methods: Option<Vec<Method>>,
}

pub fn parse(text: &str) -> Result<SimConfig> {
    toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
}

pub fn print(cfg: &SimConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| CliError::Config(e.to_string()))
}

/// Loads `path` (defaults when absent), applies `over`, and validates.
pub fn load(path: Option<&Path>, over: &Overrides) -> Result<SimConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => SimConfig::default(),
    };
    if let Some(v) = over.seed {
        cfg.master_seed = v;
    }
    if let Some(v) = over.sigma {
        cfg.sigma = v;
    }
    if let Some(v) = over.horizon {
        cfg.horizon = v;
    }
    if let Some(v) = over.n_traj {
        cfg.n_traj = v;
    }
    if let Some(v) = over.method {
        cfg.method = v;
    }
    if let Some(v) = &over.methods {
        cfg.methods = v.clone();
    }
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    // TOML integers are signed 64-bit; larger seeds could not be snapshotted.
    if cfg.master_seed > i64::MAX as u64 {
        return Err(CliError::Config(format!("master_seed must be at most {}", i64::MAX)));
    }
    Ok(cfg)
}
