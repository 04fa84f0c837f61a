use nalgebra::DVector;
use pcbf::cert::{
    conformal_min_samples, horizon_guarantee, hoeffding_min_samples, scenario_min_samples,
    scenario_sufficient_samples, GuaranteeMode, HorizonBudget,
};
use pcbf::conditions::hoeffding_range_truncated;
use pcbf::moments::GaussianDisturbance;
use pcbf::sim::{
    self, corridor_model, csv, monte_carlo_records, Method, MethodFilter, SimConfig, SweepAxis, SweepRow,
};
use pcbf::system::{CorridorNominal, NominalController};

use crate::error::{CliError, Result};
use crate::manifest::OutDir;

/// Prints the horizon guarantee and the per-step dataset sizes.
///
/// The Hoeffding size targets a slack of half the available margin,
/// `ε_H ≤ δ·b/2`, over the truncated range at the configured σ.
pub fn cert(cfg: &SimConfig, epsilon: f64, beta_total: f64, method: Option<Method>) -> Result<()> {
    let budget = HorizonBudget::new(epsilon, cfg.horizon, beta_total).map_err(CliError::usage)?;
    let data = method.is_none_or(|m| m.uses_data());
    let mode = if data { GuaranteeMode::Data } else { GuaranteeMode::Moment };
    print!("{}", horizon_guarantee(budget, mode)?);
    if !data {
        return Ok(());
    }
    let (delta, beta) = (budget.delta_step, budget.beta_step);
    let wants = |m: Method| method.is_none_or(|x| x == m);
    println!("sample sizes at delta_step, beta_step:");
    if wants(Method::Hoeffding) {
        let model = corridor_model(cfg)?;
        let dist = GaussianDisturbance::lateral(cfg.sigma)?;
        let (a, b) = hoeffding_range_truncated(&model.barrier, model.alpha, &dist, cfg.hoeffding_truncation)?;
        let target = 0.5 * delta * b;
        let n = hoeffding_min_samples(target, beta, a, b)?;
        println!("hoeffding          {n} (epsilon_h <= {target:.6e}, range [{a:.6}, {b:.6}] at sigma {})", cfg.sigma);
    }
    if wants(Method::Scenario) {
        let dim = corridor_model(cfg)?.input_dim();
        let exact = scenario_min_samples(delta, beta, dim)?;
        let sufficient = scenario_sufficient_samples(delta, beta, dim)?;
        println!("scenario           {exact} (closed-form sufficient {sufficient}, d = {dim})");
    }
    if wants(Method::Conformal) {
        println!("conformal          {}", conformal_min_samples(delta, beta)?);
    }
    Ok(())
}

fn fmt_vec(v: &DVector<f64>) -> String {
    // `+ 0.0` prints −0 as 0.
    let parts: Vec<String> = v.iter().map(|x| (x + 0.0).to_string()).collect();
    format!("[{}]", parts.join(", "))
}

/// One filter solve for `cfg.method` at `state`.
pub fn filter(cfg: &SimConfig, state: &[f64]) -> Result<()> {
    if state.len() != 3 || state.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Usage(format!("--state needs three finite numbers x,y,theta, got {state:?}")));
    }
    let x = DVector::from_column_slice(state);
    let u_nom = CorridorNominal {
        forward_speed: cfg.forward_speed,
    }
    .control(&x);
    let f = MethodFilter::for_batch(cfg, cfg.method)?;
    println!("method   {}", cfg.method);
    println!("state    {}", fmt_vec(&x));
    println!("u_nom    {}", fmt_vec(&u_nom));
    match f.apply(&x, &u_nom)? {
        None => {
            println!("u_star   {}", fmt_vec(&u_nom));
            println!("status   unfiltered");
        }
        Some(r) => {
            println!("u_star   {}", fmt_vec(&r.u_star));
            println!("margin   {}", r.worst_margin);
            println!("status   {}", r.status.label());
            println!("backend  {}", r.backend.label());
        }
    }
    Ok(())
}

pub fn rollout(cfg: &SimConfig, out: &mut OutDir) -> Result<()> {
    let mut rows = Vec::new();
    for &m in &cfg.methods {
        let (metrics, records) = monte_carlo_records(cfg, m)?;
        let mut buf = Vec::new();
        csv::write_trajectories(&mut buf, &records)?;
        out.write(&format!("trajectories_{m}.csv"), &buf)?;
        rows.push(SweepRow {
            axis: SweepAxis::Sigma,
            value: cfg.sigma,
            metrics,
        });
    }
    let mut buf = Vec::new();
    csv::write_sweep(&mut buf, &rows, cfg.timing)?;
    out.write("summary.csv", &buf)
}

pub fn sweep(cfg: &SimConfig, out: &mut OutDir, axis: SweepAxis, values: Option<&[f64]>) -> Result<()> {
    let grid: Vec<f64> = match (values, axis) {
        (Some(v), _) => v.to_vec(),
        (None, SweepAxis::Sigma) => cfg.sweep_sigmas.clone(),
        (None, SweepAxis::Horizon) => cfg.sweep_horizons.iter().map(|&h| h as f64).collect(),
    };
    if grid.is_empty() {
        return Err(CliError::Usage("sweep grid is empty".into()));
    }
    let rows = sim::sweep(cfg, &cfg.methods, axis, &grid).map_err(|e| match e {
        pcbf::Error::Parameter { .. } => CliError::usage(e),
        e => e.into(),
    })?;
    let mut buf = Vec::new();
    csv::write_sweep(&mut buf, &rows, cfg.timing)?;
    out.write(&format!("sweep_{}.csv", axis.label()), &buf)
}

pub fn sigma0(cfg: &SimConfig, out: &mut OutDir) -> Result<()> {
    let rows = cfg
        .methods
        .iter()
        .map(|&m| sim::sigma0_search(cfg, m))
        .collect::<pcbf::Result<Vec<_>>>()?;
    let mut buf = Vec::new();
    csv::write_sigma0(&mut buf, &rows)?;
    out.write("sigma0.csv", &buf)
}

pub fn bench(cfg: &SimConfig, out: &mut OutDir) -> Result<()> {
    let rows = sim::bench(cfg, &cfg.methods)?;
    let mut buf = Vec::new();
    csv::write_bench(&mut buf, &rows)?;
    out.write("bench.csv", &buf)
}
