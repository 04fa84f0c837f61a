//! Per-step chance-constraint soundness: the filtered input keeps
//! `P(Δh ≥ 0) ≥ 1 − δ` under fresh disturbances.

use nalgebra::DVector;
use pcbf::moments::stream_rng;
use pcbf::sim::{corridor_model, Method, MethodFilter, SimConfig};
use pcbf::solver::SolveStatus;
use pcbf::system::{step, CorridorNominal, NominalController, SafetyModel};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

const STATES: usize = 20;
const DRAWS: usize = 100_000;
const REDRAWS: usize = 200;
const FRESH_STREAM: u64 = 1 << 56;
const REDRAW_STREAM: u64 = 1 << 52;

fn states() -> Vec<DVector<f64>> {
    let mut rng = stream_rng(31, 0);
    (0..STATES)
        .map(|_| {
            DVector::from_vec(vec![
                rng.random_range(-1.0..1.0),
                rng.random_range(-0.45..0.45),
                rng.random_range(-0.5..0.5),
            ])
        })
        .collect()
}

/// Fraction of fresh lateral draws with `Δh ≥ 0` at `(x, u)`.
fn success_rate(model: &SafetyModel, sigma: f64, x: &DVector<f64>, u: &DVector<f64>, stream: u64) -> f64 {
    let mean = step(model.dynamics.as_ref(), x, u, &DVector::zeros(3)).unwrap();
    let h = |y: f64| 0.25 - y * y;
    let floor = model.alpha * h(x[1]);
    let mut rng = stream_rng(99, FRESH_STREAM + stream);
    let ok = (0..DRAWS)
        .filter(|_| {
            let y = mean[1] + sigma * rng.sample::<f64, _>(StandardNormal);
            h(y) - floor >= 0.0
        })
        .count();
    ok as f64 / DRAWS as f64
}

/// `p̂ ≥ 1 − δ − 3·SE` with the binomial SE at the nominal level.
fn passes(rate: f64, delta: f64) -> bool {
    let se = (delta * (1.0 - delta) / DRAWS as f64).sqrt();
    rate >= 1.0 - delta - 3.0 * se
}

fn filtered_input(filter: &MethodFilter, x: &DVector<f64>) -> Option<DVector<f64>> {
    let u_nom = CorridorNominal::default().control(x);
    let r = filter.apply(x, &u_nom).unwrap().unwrap();
    (r.status == SolveStatus::Optimal).then_some(r.u_star)
}

pub fn moment_filters() -> String {
    let cfg = SimConfig::default();
    let model = corridor_model(&cfg).unwrap();
    for method in [Method::Markov, Method::Cantelli] {
        let filter = MethodFilter::for_batch(&cfg, method).unwrap();
        let xs = states();
        let failures: Vec<String> = xs
            .par_iter()
            .enumerate()
            .filter_map(|(i, x)| {
                let Some(u) = filtered_input(&filter, x) else {
                    return Some(format!("{method} state {i}: not solved"));
                };
                let rate = success_rate(&model, cfg.sigma, x, &u, i as u64);
                (!passes(rate, cfg.delta)).then(|| format!("{method} state {i}: {rate}"))
            })
            .collect();
        assert!(failures.is_empty(), "{failures:#?}");
    }
    format!("Markov and Cantelli at {STATES} states, {DRAWS} draws each")
}

pub fn data_filters() -> String {
    let cfg = SimConfig::default();
    let model = corridor_model(&cfg).unwrap();
    let n = REDRAWS as f64;
    let mut fewest = REDRAWS;
    let need = (1.0 - cfg.beta) * n - 3.0 * (n * cfg.beta * (1.0 - cfg.beta)).sqrt();
    for method in [Method::Scenario, Method::Conformal] {
        for (i, x) in states().iter().enumerate() {
            let passed = (0..REDRAWS)
                .into_par_iter()
                .filter(|&r| {
                    let stream = REDRAW_STREAM + (i * REDRAWS + r) as u64;
                    let filter = MethodFilter::new(&cfg, method, cfg.sigma, stream).unwrap();
                    filtered_input(&filter, x).is_some_and(|u| {
                        let rate = success_rate(&model, cfg.sigma, x, &u, stream);
                        passes(rate, cfg.delta)
                    })
                })
                .count();
            fewest = fewest.min(passed);
            assert!(passed as f64 >= need, "{method} state {i}: {passed}/{REDRAWS} < {need:.2}");
        }
    }
    format!("scenario and conformal at {STATES} states; fewest passing redraws {fewest}/{REDRAWS} (need {need:.2})")
}
