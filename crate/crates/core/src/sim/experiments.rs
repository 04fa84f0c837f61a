use nalgebra::DVector;

use super::rollout::{rollout_with, BatchMetrics};
use super::{monte_carlo, shared_dataset_stream, Method, MethodFilter, SimConfig, SweepAxis};
use crate::error::{Error, Result};
use crate::solver::{feasibility_margin, InputBox};

/// Probe margins above `−SIGMA0_TOL` count as feasible; this absorbs the
/// round-off of the level-set bisection at exactly-critical noise levels.
pub const SIGMA0_TOL: f64 = 1e-9;

/// One row of a sweep table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub metrics: BatchMetrics,
}

/// Runs one Monte Carlo batch per `(method, value)`, methods outermost.
pub fn sweep(cfg: &SimConfig, methods: &[Method], axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepRow>> {
    if methods.is_empty() {
        return Err(Error::Empty("method list"));
    }
    let mut rows = Vec::with_capacity(methods.len() * values.len());
    for &method in methods {
        for &value in values {
            let mut c = cfg.clone();
            match axis {
                SweepAxis::Sigma => c.sigma = value,
                SweepAxis::Horizon => {
                    if !(value >= 1.0 && value.fract() == 0.0) {
                        return Err(Error::param("horizon", format!("must be a positive integer, got {value}")));
                    }
                    c.horizon = value as usize;
                }
            }
            log::info!("sweep {method} {}={value}", axis.label());
            rows.push(SweepRow {
                axis,
                value,
                metrics: monte_carlo(&c, method)?,
            });
        }
    }
    Ok(rows)
}

/// Result of a σ₀ search.
#[derive(Debug, Clone, PartialEq)]
pub struct Sigma0Row {
    pub method: Method,
    /// Smallest grid σ with an infeasible probe; `None` if the grid is
    /// exhausted (or the method has no constraint).
    pub sigma0: Option<f64>,
    /// Probe `y` that failed first.
    pub probe_y: Option<f64>,
    /// Its feasibility margin.
    pub margin: Option<f64>,
}

const PROBE_Y: [f64; 5] = [0.0, 0.25, -0.25, 0.5, -0.5];

/// Scans `σ = k·sigma0_step ≤ sigma0_max` upward and returns the first σ at
/// which some probe state `(0, y, 0)` admits no input in the box
/// `‖u‖_∞ ≤ u_box` satisfying the method's constraints.
///
/// Data-based methods reuse one dataset stream for every σ, so the samples
/// are scaled copies and the scan is monotone in the draw.
pub fn sigma0_search(cfg: &SimConfig, method: Method) -> Result<Sigma0Row> {
    cfg.validate()?;
    let mut row = Sigma0Row {
        method,
        sigma0: None,
        probe_y: None,
        margin: None,
    };
    if method == Method::None {
        return Ok(row);
    }
    let input_box = InputBox::symmetric(3, cfg.u_box)?;
    let steps = (cfg.sigma0_max / cfg.sigma0_step + 1e-9).floor() as usize;
    for k in 1..=steps {
        // Rounded so grid values print as written (0.07, not 0.07000000000000001).
        let sigma = (k as f64 * cfg.sigma0_step * 1e9).round() / 1e9;
        let filter = MethodFilter::new(cfg, method, sigma, shared_dataset_stream(method))?;
        for y in PROBE_Y {
            let x = DVector::from_vec(vec![0.0, y, 0.0]);
            let margin = feasibility_margin(&filter.constraints(&x)?, &input_box)?;
            if margin < -SIGMA0_TOL {
                row.sigma0 = Some(sigma);
                row.probe_y = Some(y);
                row.margin = Some(margin);
                return Ok(row);
            }
        }
    }
    Ok(row)
}

/// Per-method timing summary.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub method: Method,
    pub n_solves: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub max_ms: f64,
    /// Steps where the filter was infeasible.
    pub n_infeasible: usize,
}

/// Times the filter step (constraint construction and solve) along
/// sequential rollouts until at least `bench_solves` steps per method have
/// been timed. Datasets are drawn before timing starts.
pub fn bench(cfg: &SimConfig, methods: &[Method]) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    if methods.is_empty() {
        return Err(Error::Empty("method list"));
    }
    let n_traj = cfg.bench_solves.max(1).div_ceil(cfg.horizon);
    let mut out = Vec::with_capacity(methods.len());
    for &method in methods {
        let filter = MethodFilter::for_batch(cfg, method)?;
        let mut times = Vec::with_capacity(n_traj * cfg.horizon);
        let mut n_infeasible = 0;
        for i in 0..n_traj as u64 {
            let rec = rollout_with(&filter, cfg, i)?;
            times.extend(rec.solve_times.iter().map(|t| t * 1e3));
            n_infeasible += rec
                .statuses
                .iter()
                .filter(|s| matches!(s, super::StepStatus::Infeasible))
                .count();
        }
        let n = times.len();
        let mean_ms = times.iter().sum::<f64>() / n as f64;
        let max_ms = times.iter().copied().fold(0.0, f64::max);
        times.sort_by(|a, b| a.total_cmp(b));
        let median_ms = if n % 2 == 1 {
            times[n / 2]
        } else {
            0.5 * (times[n / 2 - 1] + times[n / 2])
        };
        out.push(BenchRow {
            method,
            n_solves: n,
            mean_ms,
            median_ms,
            max_ms,
            n_infeasible,
        });
    }
    Ok(out)
}
