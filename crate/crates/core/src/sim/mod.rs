//! Rollouts and Monte Carlo experiments on the corridor unicycle.
//!
//! Randomness is keyed by `(master_seed, stream)`: trajectory `i` draws its
//! disturbances from stream `i`, and datasets come from streams far above
//! any trajectory index. Every method therefore sees the same disturbance
//! sequence on trajectory `i` (common random numbers), and results do not
//! depend on how trajectories are scheduled across threads.

mod config;
pub mod csv;
mod experiments;
mod rollout;

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;

use crate::conditions::{
    build_cantelli, build_conformal, build_hoeffding, build_markov_jensen_gap, build_scenario,
    hoeffding_range_truncated, upper_bound, BoundPolicy, ConditionParams, FilterConstraint,
};
use crate::error::Result;
use crate::moments::{sample_with, stream_rng, DisturbanceDataset, DisturbanceModel, GaussianDisturbance};
use crate::solver::{solve, FilterProblem, FilterResult, SolverOptions};
use crate::system::{QuadraticBarrier, SafetyModel, StateVec, Unicycle};

pub use config::{DatasetMode, Method, SimConfig, SweepAxis};
pub use experiments::{bench, sigma0_search, sweep, BenchRow, Sigma0Row, SweepRow, SIGMA0_TOL};
pub use rollout::{
    monte_carlo, monte_carlo_records, rollout, with_jobs, BatchMetrics, RolloutRecord, StepStatus,
};

const SHARED_DATASET_STREAM: u64 = 1 << 48;
const PER_TRAJECTORY_DATASET_STREAM: u64 = 1 << 49;

/// Stream of the batch dataset of `method`.
pub fn shared_dataset_stream(method: Method) -> u64 {
    SHARED_DATASET_STREAM + method.index()
}

/// Stream of the dataset trajectory `traj` uses in per-trajectory mode.
pub fn trajectory_dataset_stream(method: Method, traj: u64) -> u64 {
    PER_TRAJECTORY_DATASET_STREAM + traj * 8 + method.index()
}

/// The corridor safety model of a configuration.
pub fn corridor_model(cfg: &SimConfig) -> Result<SafetyModel> {
    SafetyModel::new(
        Arc::new(Unicycle::new(cfg.dt)?),
        QuadraticBarrier::corridor(cfg.half_width),
        cfg.alpha,
    )
}

/// One method's filter at a fixed noise level, with its dataset drawn.
#[derive(Debug, Clone)]
pub struct MethodFilter {
    pub method: Method,
    pub model: SafetyModel,
    pub disturbance: GaussianDisturbance,
    pub params: ConditionParams,
    pub bound_policy: BoundPolicy,
    pub dataset: Option<DisturbanceDataset>,
    pub solver: SolverOptions,
}

impl MethodFilter {
    /// Filter with the dataset drawn from `dataset_stream` of the master
    /// seed. Datasets of the same stream at different `sigma` are scaled
    /// copies of each other.
    pub fn new(cfg: &SimConfig, method: Method, sigma: f64, dataset_stream: u64) -> Result<Self> {
        let disturbance = GaussianDisturbance::lateral(sigma)?;
        let dataset = match cfg.dataset_size(method) {
            Some(n) => {
                let mut rng = stream_rng(cfg.master_seed, dataset_stream);
                let dist = DisturbanceModel::Gaussian(disturbance.clone());
                Some(sample_with(&dist, n, &mut rng)?)
            }
            None => None,
        };
        Self::with_dataset(cfg, method, sigma, dataset)
    }

    /// Filter with a caller-supplied dataset (ignored by moment methods).
    pub fn with_dataset(
        cfg: &SimConfig,
        method: Method,
        sigma: f64,
        dataset: Option<DisturbanceDataset>,
    ) -> Result<Self> {
        cfg.validate()?;
        let model = corridor_model(cfg)?;
        let disturbance = GaussianDisturbance::lateral(sigma)?;
        let sup = model.barrier.sup_h().expect("corridor barrier is bounded above");
        let mut params = ConditionParams::new(cfg.delta, cfg.beta, sup);
        if method == Method::Hoeffding {
            let (a, _) = hoeffding_range_truncated(
                &model.barrier,
                model.alpha,
                &disturbance,
                cfg.hoeffding_truncation,
            )?;
            params.a = a;
            log::debug!("hoeffding range at sigma={sigma}: a={a}, b={sup}");
        }
        if method.uses_data() && dataset.is_none() {
            return Err(crate::Error::Precondition(format!("{method} needs a dataset")));
        }
        Ok(Self {
            method,
            model,
            disturbance,
            params,
            bound_policy: cfg.bound_policy,
            dataset,
            solver: SolverOptions::default(),
        })
    }

    /// The batch filter of `cfg` at its own `sigma`.
    pub fn for_batch(cfg: &SimConfig, method: Method) -> Result<Self> {
        Self::new(cfg, method, cfg.sigma, shared_dataset_stream(method))
    }

    /// Constraints at `x`; empty for [`Method::None`].
    pub fn constraints(&self, x: &StateVec) -> Result<Vec<FilterConstraint>> {
        let mut params = self.params;
        params.b = upper_bound(&self.model, x, self.bound_policy)?;
        let dist = DisturbanceModel::Gaussian(self.disturbance.clone());
        let data = || self.dataset.as_ref().expect("checked at construction");
        Ok(match self.method {
            Method::None => Vec::new(),
            Method::Markov => vec![build_markov_jensen_gap(&self.model, x, &params, &dist)?],
            Method::Cantelli => vec![build_cantelli(&self.model, x, &params, &dist)?],
            Method::Hoeffding => vec![build_hoeffding(&self.model, x, &params, data())?],
            Method::Scenario => build_scenario(&self.model, x, &params, data())?,
            Method::Conformal => vec![build_conformal(&self.model, x, &params, data())?],
        })
    }

    /// Builds the constraints at `x` and solves the projection of `u_nom`.
    /// `None` for [`Method::None`]. The reported solve time covers both.
    pub fn apply(&self, x: &StateVec, u_nom: &DVector<f64>) -> Result<Option<FilterResult>> {
        if self.method == Method::None {
            return Ok(None);
        }
        let start = Instant::now();
        let constraints = self.constraints(x)?;
        let problem = FilterProblem::new(u_nom.clone(), constraints)?;
        let mut result = solve(&problem, &self.solver)?;
        result.solve_time = start.elapsed().as_secs_f64();
        Ok(Some(result))
    }
}
