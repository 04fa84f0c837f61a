//! CSV writers for experiment outputs.
//!
//! Numbers use Rust's shortest round-trip formatting, so identical results
//! give identical bytes.

use std::io::Write;

use super::{BenchRow, RolloutRecord, Sigma0Row, SweepRow};
use crate::error::{Error, Result};

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Columns `method, axis, value, n_traj, n_unsafe, n_infeasible,
/// mean_solve_ms`. The timing column is left empty unless `timing` is set,
/// keeping the table reproducible byte for byte.
pub fn write_sweep<W: Write>(out: W, rows: &[SweepRow], timing: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "axis", "value", "n_traj", "n_unsafe", "n_infeasible", "mean_solve_ms"])
        .map_err(csv_err)?;
    for r in rows {
        let m = &r.metrics;
        w.write_record([
            m.method.label().to_string(),
            r.axis.label().to_string(),
            r.value.to_string(),
            m.n_traj.to_string(),
            m.n_unsafe.to_string(),
            m.n_infeasible.to_string(),
            if timing { m.mean_solve_ms.to_string() } else { String::new() },
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `traj, t, x, y, theta, h, status`; `status` is the step taken
/// from the state (`terminal` on the last row).
pub fn write_trajectories<W: Write>(out: W, records: &[RolloutRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["traj", "t", "x", "y", "theta", "h", "status"]).map_err(csv_err)?;
    for r in records {
        for (t, (x, h)) in r.states.iter().zip(&r.h).enumerate() {
            let status = r.statuses.get(t).map_or("terminal", |s| s.label());
            w.write_record([
                r.traj_index.to_string(),
                t.to_string(),
                x[0].to_string(),
                x[1].to_string(),
                x[2].to_string(),
                h.to_string(),
                status.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Columns `method, sigma0, probe_y, margin`; empty cells when no σ₀ was
/// found.
pub fn write_sigma0<W: Write>(out: W, rows: &[Sigma0Row]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "sigma0", "probe_y", "margin"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([r.method.label().to_string(), opt(r.sigma0), opt(r.probe_y), opt(r.margin)])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `method, n_solves, mean_ms, median_ms, max_ms, n_infeasible`.
pub fn write_bench<W: Write>(out: W, rows: &[BenchRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "n_solves", "mean_ms", "median_ms", "max_ms", "n_infeasible"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.method.label().to_string(),
            r.n_solves.to_string(),
            r.mean_ms.to_string(),
            r.median_ms.to_string(),
            r.max_ms.to_string(),
            r.n_infeasible.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{BatchMetrics, Method, SweepAxis};

    #[test]
    fn sweep_table_layout() {
        let metrics = BatchMetrics {
            method: Method::Markov,
            n_traj: 4,
            n_unsafe: 1,
            n_infeasible: 0,
            n_iteration_limit: 0,
            unsafe_fraction: 0.25,
            mean_solve_ms: 0.5,
            median_solve_ms: 0.5,
        };
        let rows = vec![SweepRow {
            axis: SweepAxis::Sigma,
            value: 0.06,
            metrics,
        }];
        let mut buf = Vec::new();
        write_sweep(&mut buf, &rows, false).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "method,axis,value,n_traj,n_unsafe,n_infeasible,mean_solve_ms\nmarkov,sigma,0.06,4,1,0,\n"
        );
    }
}
