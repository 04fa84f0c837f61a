//! Closed-form moments of Δh against brute-force Monte Carlo, and a
//! goodness-of-fit check of the Gaussian sampler.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use pcbf::moments::{delta_h_moments, stream_rng, DisturbanceModel, GaussianDisturbance};
use pcbf::system::{LinearDynamics, QuadraticBarrier, SafetyModel, Unicycle};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

const SAMPLES: usize = 1_000_000;
const CASES: usize = 50;

struct Case {
    model: SafetyModel,
    x: DVector<f64>,
    u: DVector<f64>,
    dist: GaussianDisturbance,
}

fn random_matrix(rng: &mut impl Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

/// Even cases: the corridor unicycle with lateral noise of random σ. Odd
/// cases: random linear dynamics, an indefinite barrier and a correlated
/// covariance scaled to σ².
fn make_case(i: usize) -> Case {
    let mut rng = stream_rng(2024, i as u64);
    let sigma = rng.random_range(0.01..0.15);
    if i % 2 == 0 {
        let model = SafetyModel::new(
            Arc::new(Unicycle::new(0.1).unwrap()),
            QuadraticBarrier::corridor(0.5),
            0.01,
        )
        .unwrap();
        let x = DVector::from_vec(vec![
            rng.random_range(-1.0..1.0),
            rng.random_range(-0.5..0.5),
            rng.random_range(-3.0..3.0),
        ]);
        let u = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
        Case { model, x, u, dist: GaussianDisturbance::lateral(sigma).unwrap() }
    } else {
        let n = 3;
        let m = rng.random_range(1..=3);
        let a = DMatrix::identity(n, n) + random_matrix(&mut rng, n, n, 0.3);
        let b = random_matrix(&mut rng, n, m, 0.5);
        let q = random_matrix(&mut rng, n, n, 1.0);
        let q = (&q + q.transpose()) * 0.5;
        let g = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let barrier = QuadraticBarrier::new(rng.random_range(-0.5..0.5), g, q).unwrap();
        let model = SafetyModel::new(
            Arc::new(LinearDynamics::new(a, b).unwrap()),
            barrier,
            rng.random_range(0.0..1.0),
        )
        .unwrap();
        let l = random_matrix(&mut rng, n, n, 1.0);
        let cov = &l * l.transpose();
        let scale = sigma * sigma / (cov.trace() / n as f64);
        let cov = cov * scale;
        let mean = DVector::from_fn(n, |_, _| rng.random_range(-0.05..0.05));
        let x = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let u = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        Case { model, x, u, dist: GaussianDisturbance::new(mean, cov).unwrap() }
    }
}

/// Cholesky-free square root: symmetric eigendecomposition, independent of
/// the sampler under test.
fn sqrt_psd(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = cov.clone().symmetric_eigen();
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

fn h_of(b: &QuadraticBarrier, z: &DVector<f64>) -> f64 {
    b.c0() + b.linear().dot(z) + z.dot(&(b.quadratic() * z))
}

struct Estimate {
    mean: f64,
    mean_se: f64,
    var: f64,
    var_se: f64,
}

fn monte_carlo(case: &Case, seed_stream: u64) -> Estimate {
    let dyn_ = case.model.dynamics.as_ref();
    let base = dyn_.drift(&case.x) + dyn_.input_map(&case.x) * &case.u + case.dist.mean();
    let root = sqrt_psd(case.dist.cov());
    let alpha_h = case.model.alpha * h_of(&case.model.barrier, &case.x);
    let mut rng = stream_rng(77, seed_stream);
    let n = base.len();
    let mut z = DVector::zeros(n);
    let values: Vec<f64> = (0..SAMPLES)
        .map(|_| {
            for k in 0..n {
                z[k] = rng.sample::<f64, _>(StandardNormal);
            }
            let next = &base + &root * &z;
            h_of(&case.model.barrier, &next) - alpha_h
        })
        .collect();
    let nf = SAMPLES as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let (mut m2, mut m4) = (0.0, 0.0);
    for v in &values {
        let c = v - mean;
        m2 += c * c;
        m4 += c * c * c * c;
    }
    let var = m2 / (nf - 1.0);
    let m4 = m4 / nf;
    Estimate {
        mean,
        mean_se: (var / nf).sqrt(),
        var,
        var_se: ((m4 - var * var).max(0.0) / nf).sqrt(),
    }
}

pub fn moments_vs_monte_carlo() -> String {
    let failures: Vec<String> = (0..CASES)
        .into_par_iter()
        .map(|i| {
            let case = make_case(i);
            let dist = DisturbanceModel::Gaussian(case.dist.clone());
            let got = delta_h_moments(&case.model, &case.x, &case.u, &dist).unwrap();
            let mc = monte_carlo(&case, i as u64);
            let mut bad = Vec::new();
            let zm = (got.mean_dh - mc.mean) / mc.mean_se;
            if zm.abs() > 3.0 {
                bad.push(format!("case {i}: mean {} vs MC {} ({zm:.2} SE)", got.mean_dh, mc.mean));
            }
            let zv = (got.var_dh - mc.var) / mc.var_se;
            if zv.abs() > 3.0 {
                bad.push(format!("case {i}: var {} vs MC {} ({zv:.2} SE)", got.var_dh, mc.var));
            }
            let want_mean = case.model.dynamics.drift(&case.x)
                + case.model.dynamics.input_map(&case.x) * &case.u
                + case.dist.mean();
            assert!((&got.next_mean - want_mean).norm() < 1e-12);
            assert!((got.next_cov_trace - case.dist.cov().trace()).abs() < 1e-15);
            bad
        })
        .flatten()
        .collect();
    assert!(failures.is_empty(), "{failures:#?}");
    format!("{CASES} random (x, u, σ), {SAMPLES} samples each; mean and variance within 3 SE")
}

/// Kolmogorov–Smirnov distance of `z` from the standard normal.
fn ks_distance(mut z: Vec<f64>) -> f64 {
    let phi = Normal::new(0.0, 1.0).unwrap();
    z.sort_by(f64::total_cmp);
    let n = z.len() as f64;
    z.iter()
        .enumerate()
        .map(|(i, v)| {
            let f = phi.cdf(*v);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

pub fn sampler_ks() -> String {
    const N: usize = 200_000;
    // Critical value at level 0.001.
    let crit = 1.9495 / (N as f64).sqrt();

    let lateral = GaussianDisturbance::lateral(0.06).unwrap();
    let mut rng = stream_rng(5, 0);
    let z: Vec<f64> = (0..N)
        .map(|_| {
            let d = lateral.draw(&mut rng);
            assert_eq!((d[0], d[2]), (0.0, 0.0));
            d[1] / 0.06
        })
        .collect();
    let d = ks_distance(z);
    assert!(d < crit, "lateral: D = {d}, critical {crit}");

    // Correlated case, projected on a fixed direction and standardized.
    let cov = DMatrix::from_row_slice(3, 3, &[0.04, 0.01, -0.005, 0.01, 0.02, 0.0, -0.005, 0.0, 0.01]);
    let mean = DVector::from_vec(vec![0.1, -0.2, 0.3]);
    let g = GaussianDisturbance::new(mean.clone(), cov.clone()).unwrap();
    let v = DVector::from_vec(vec![0.3, -0.8, 0.5]);
    let s = v.dot(&(&cov * &v)).sqrt();
    let z: Vec<f64> = (0..N).map(|_| (v.dot(&g.draw(&mut rng)) - v.dot(&mean)) / s).collect();
    let d = ks_distance(z);
    assert!(d < crit, "correlated: D = {d}, critical {crit}");
    format!("KS distance {d:.2e} < {crit:.2e}")
}
