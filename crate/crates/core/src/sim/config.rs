use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::conditions::BoundPolicy;
use crate::error::{check_open_unit, Error, Result};

/// Filter used to compute the applied input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Nominal input, no filter.
    None,
    /// Markov condition with the Jensen-gap correction.
    Markov,
    Cantelli,
    Hoeffding,
    Scenario,
    Conformal,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::None,
        Method::Markov,
        Method::Cantelli,
        Method::Hoeffding,
        Method::Scenario,
        Method::Conformal,
    ];

    pub const FILTERS: [Method; 5] = [
        Method::Markov,
        Method::Cantelli,
        Method::Hoeffding,
        Method::Scenario,
        Method::Conformal,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Markov => "markov",
            Method::Cantelli => "cantelli",
            Method::Hoeffding => "hoeffding",
            Method::Scenario => "scenario",
            Method::Conformal => "conformal",
        }
    }

    pub(crate) fn index(self) -> u64 {
        self as u64
    }

    /// Whether the method consumes a disturbance dataset.
    pub fn uses_data(self) -> bool {
        matches!(self, Method::Hoeffding | Method::Scenario | Method::Conformal)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.label() == s.trim())
            .ok_or_else(|| Error::Parse(format!("unknown method '{s}'")))
    }
}

/// How datasets are drawn for the data-based methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetMode {
    /// One dataset per method per batch, reused by every trajectory.
    #[default]
    Shared,
    /// A fresh dataset for every trajectory.
    PerTrajectory,
}

/// Sweep axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Sigma,
    Horizon,
}

impl SweepAxis {
    pub fn label(self) -> &'static str {
        match self {
            SweepAxis::Sigma => "sigma",
            SweepAxis::Horizon => "horizon",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sigma" => Ok(SweepAxis::Sigma),
            "horizon" => Ok(SweepAxis::Horizon),
            other => Err(Error::Parse(format!("unknown sweep axis '{other}'"))),
        }
    }
}

/// Experiment configuration. Every field has a default, so a config file
/// only lists what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Sampling period in seconds.
    pub dt: f64,
    /// Barrier decay rate.
    pub alpha: f64,
    /// Per-step risk.
    pub delta: f64,
    /// Per-step confidence budget of the data-based conditions.
    pub beta: f64,
    /// Steps per trajectory.
    pub horizon: usize,
    /// Standard deviation of the lateral disturbance.
    pub sigma: f64,
    /// Method for single-method commands.
    pub method: Method,
    /// Methods for multi-method commands.
    pub methods: Vec<Method>,
    pub n_hoeffding: usize,
    pub n_scenario: usize,
    pub n_conformal: usize,
    pub n_traj: usize,
    pub master_seed: u64,
    pub x0: [f64; 3],
    /// Forward speed of the nominal controller.
    pub forward_speed: f64,
    /// Corridor half width.
    pub half_width: f64,
    /// `‖u‖_∞` bound used by the σ₀ search (rollouts are unbounded).
    pub u_box: f64,
    pub bound_policy: BoundPolicy,
    /// Gaussian truncation radius, in standard deviations, for the
    /// Hoeffding range.
    pub hoeffding_truncation: f64,
    pub dataset_mode: DatasetMode,
    /// Emit solve times in the sweep table (makes it machine-dependent).
    pub timing: bool,
    pub sweep_sigmas: Vec<f64>,
    pub sweep_horizons: Vec<usize>,
    pub sigma0_step: f64,
    pub sigma0_max: f64,
    /// Minimum number of filter solves timed per method by `bench`.
    pub bench_solves: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            alpha: 0.01,
            delta: 0.1,
            beta: 0.01,
            horizon: 20,
            sigma: 0.06,
            method: Method::Markov,
            methods: Method::ALL.to_vec(),
            n_hoeffding: 3252,
            n_scenario: 113,
            n_conformal: 300,
            n_traj: 400,
            master_seed: 0,
            x0: [0.0, 0.0, 0.0],
            forward_speed: 0.2,
            half_width: 0.5,
            u_box: 10.0,
            bound_policy: BoundPolicy::Global,
            hoeffding_truncation: 6.0,
            dataset_mode: DatasetMode::Shared,
            timing: false,
            sweep_sigmas: vec![0.02, 0.04, 0.06, 0.08, 0.1, 0.12],
            sweep_horizons: vec![10, 20, 30, 40, 50],
            sigma0_step: 0.01,
            sigma0_max: 0.5,
            bench_solves: 1000,
        }
    }
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be positive, got {v}")))
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        positive("dt", self.dt)?;
        check_open_unit("alpha", self.alpha)?;
        check_open_unit("delta", self.delta)?;
        check_open_unit("beta", self.beta)?;
        if self.horizon == 0 {
            return Err(Error::param("horizon", "must be at least 1"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::param("sigma", "must be non-negative"));
        }
        if self.n_hoeffding == 0 || self.n_scenario == 0 || self.n_conformal == 0 {
            return Err(Error::param("dataset size", "must be at least 1"));
        }
        if self.n_traj == 0 {
            return Err(Error::param("n_traj", "must be at least 1"));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("x0"));
        }
        positive("half_width", self.half_width)?;
        positive("u_box", self.u_box)?;
        positive("hoeffding_truncation", self.hoeffding_truncation)?;
        positive("sigma0_step", self.sigma0_step)?;
        if !(self.sigma0_max >= self.sigma0_step) {
            return Err(Error::param("sigma0_max", "must be at least sigma0_step"));
        }
        if self.sweep_sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::param("sweep_sigmas", "must be non-negative"));
        }
        if self.sweep_horizons.contains(&0) {
            return Err(Error::param("sweep_horizons", "must be at least 1"));
        }
        Ok(())
    }

    pub fn dataset_size(&self, method: Method) -> Option<usize> {
        match method {
            Method::Hoeffding => Some(self.n_hoeffding),
            Method::Scenario => Some(self.n_scenario),
            Method::Conformal => Some(self.n_conformal),
            _ => None,
        }
    }
}
