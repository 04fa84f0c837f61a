use rayon::prelude::*;

use super::{trajectory_dataset_stream, DatasetMode, Method, MethodFilter, SimConfig};
use crate::error::{Error, Result};
use crate::moments::stream_rng;
use crate::solver::SolveStatus;
use crate::system::{step, ControlVec, CorridorNominal, NominalController, StateVec};

/// What happened at one step of a rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepStatus {
    /// No filter; the nominal input was applied.
    Nominal,
    /// The filter output was applied.
    Filtered,
    /// The filter was infeasible; the nominal input was applied.
    Infeasible,
    /// The solver hit an iteration cap; the nominal input was applied.
    IterationLimit,
}

impl StepStatus {
    pub fn label(self) -> &'static str {
        match self {
            StepStatus::Nominal => "nominal",
            StepStatus::Filtered => "filtered",
            StepStatus::Infeasible => "infeasible",
            StepStatus::IterationLimit => "iteration_limit",
        }
    }
}

/// One simulated trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutRecord {
    pub traj_index: u64,
    /// `H + 1` states, starting at `x0`.
    pub states: Vec<StateVec>,
    /// `H` applied inputs.
    pub inputs: Vec<ControlVec>,
    /// Worst constraint margin at the applied input; `None` without a filter.
    pub margins: Vec<Option<f64>>,
    pub statuses: Vec<StepStatus>,
    /// Barrier value at every state.
    pub h: Vec<f64>,
    /// Some state has `h < 0`.
    pub is_unsafe: bool,
    pub first_infeasible_step: Option<usize>,
    /// Seconds spent building and solving the filter at each step.
    pub solve_times: Vec<f64>,
}

/// Runs trajectory `traj` with an already-built filter.
pub(crate) fn rollout_with(filter: &MethodFilter, cfg: &SimConfig, traj: u64) -> Result<RolloutRecord> {
    let nominal = CorridorNominal {
        forward_speed: cfg.forward_speed,
    };
    let dynamics = filter.model.dynamics.as_ref();
    let barrier = &filter.model.barrier;
    let mut rng = stream_rng(cfg.master_seed, traj);
    let h_len = cfg.horizon;
    let mut x = StateVec::from_row_slice(&cfg.x0);
    let mut rec = RolloutRecord {
        traj_index: traj,
        states: Vec::with_capacity(h_len + 1),
        inputs: Vec::with_capacity(h_len),
        margins: Vec::with_capacity(h_len),
        statuses: Vec::with_capacity(h_len),
        h: Vec::with_capacity(h_len + 1),
        is_unsafe: false,
        first_infeasible_step: None,
        solve_times: Vec::with_capacity(h_len),
    };
    rec.h.push(barrier.eval(&x)?);
    rec.states.push(x.clone());
    for t in 0..h_len {
        let u_nom = nominal.control(&x);
        let (u, status, margin, time) = match filter.apply(&x, &u_nom)? {
            None => (u_nom, StepStatus::Nominal, None, 0.0),
            Some(r) => match r.status {
                SolveStatus::Optimal => (r.u_star, StepStatus::Filtered, Some(r.worst_margin), r.solve_time),
                SolveStatus::Infeasible => (u_nom, StepStatus::Infeasible, Some(r.worst_margin), r.solve_time),
                SolveStatus::IterationLimit => {
                    log::warn!("traj {traj} step {t}: solver iteration limit, applying nominal input");
                    (u_nom, StepStatus::IterationLimit, Some(r.worst_margin), r.solve_time)
                }
            },
        };
        if status == StepStatus::Infeasible && rec.first_infeasible_step.is_none() {
            rec.first_infeasible_step = Some(t);
        }
        // Drawn for every method so all methods share the noise sequence.
        let d = filter.disturbance.draw(&mut rng);
        x = step(dynamics, &x, &u, &d)?;
        rec.h.push(barrier.eval(&x)?);
        rec.states.push(x.clone());
        rec.inputs.push(u);
        rec.margins.push(margin);
        rec.statuses.push(status);
        rec.solve_times.push(time);
    }
    rec.is_unsafe = rec.h.iter().any(|&v| v < 0.0);
    Ok(rec)
}

fn trajectory_filter(cfg: &SimConfig, method: Method, traj: u64) -> Result<MethodFilter> {
    MethodFilter::new(cfg, method, cfg.sigma, trajectory_dataset_stream(method, traj))
}

/// Simulates trajectory `traj_index` of the batch described by `cfg`.
pub fn rollout(cfg: &SimConfig, method: Method, traj_index: u64) -> Result<RolloutRecord> {
    let filter = match cfg.dataset_mode {
        DatasetMode::Shared => MethodFilter::for_batch(cfg, method)?,
        DatasetMode::PerTrajectory => trajectory_filter(cfg, method, traj_index)?,
    };
    rollout_with(&filter, cfg, traj_index)
}

/// Aggregates over a batch of trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMetrics {
    pub method: Method,
    pub n_traj: usize,
    pub n_unsafe: usize,
    /// Trajectories with at least one infeasible step.
    pub n_infeasible: usize,
    /// Steps at which the solver hit an iteration cap.
    pub n_iteration_limit: usize,
    pub unsafe_fraction: f64,
    /// Milliseconds per filter step.
    pub mean_solve_ms: f64,
    pub median_solve_ms: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl BatchMetrics {
    pub fn from_records(method: Method, records: &[RolloutRecord]) -> Self {
        let n_traj = records.len();
        let n_unsafe = records.iter().filter(|r| r.is_unsafe).count();
        let n_infeasible = records.iter().filter(|r| r.first_infeasible_step.is_some()).count();
        let n_iteration_limit = records
            .iter()
            .flat_map(|r| &r.statuses)
            .filter(|s| **s == StepStatus::IterationLimit)
            .count();
        let times: Vec<f64> = records.iter().flat_map(|r| r.solve_times.iter().map(|t| t * 1e3)).collect();
        let mean_solve_ms = if times.is_empty() {
            0.0
        } else {
            times.iter().sum::<f64>() / times.len() as f64
        };
        Self {
            method,
            n_traj,
            n_unsafe,
            n_infeasible,
            n_iteration_limit,
            unsafe_fraction: if n_traj == 0 { 0.0 } else { n_unsafe as f64 / n_traj as f64 },
            mean_solve_ms,
            median_solve_ms: median(times),
        }
    }
}

/// Runs `cfg.n_traj` rollouts in parallel on the current rayon pool and
/// returns them in trajectory order.
pub fn monte_carlo_records(cfg: &SimConfig, method: Method) -> Result<(BatchMetrics, Vec<RolloutRecord>)> {
    cfg.validate()?;
    let shared = match cfg.dataset_mode {
        DatasetMode::Shared => Some(MethodFilter::for_batch(cfg, method)?),
        DatasetMode::PerTrajectory => None,
    };
    let records = (0..cfg.n_traj as u64)
        .into_par_iter()
        .map(|i| match &shared {
            Some(f) => rollout_with(f, cfg, i),
            None => rollout_with(&trajectory_filter(cfg, method, i)?, cfg, i),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((BatchMetrics::from_records(method, &records), records))
}

pub fn monte_carlo(cfg: &SimConfig, method: Method) -> Result<BatchMetrics> {
    monte_carlo_records(cfg, method).map(|(m, _)| m)
}

/// Runs `f` on a dedicated pool of `jobs` worker threads.
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Precondition(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}
