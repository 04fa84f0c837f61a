//! Solver backends against independent oracles: a dense grid over ray
//! directions (upper bound) and the Lagrangian dual (lower bound) for the
//! convex projection, subset enumeration for quantile constraints, and a 1-D
//! scan for the structured backend.

use nalgebra::{DMatrix, DVector};
use pcbf::conditions::{FilterConstraint, QuantileConstraint};
use pcbf::quadratic::QuadForm;
use pcbf::sim::{Method, MethodFilter, SimConfig};
use pcbf::solver::{
    solve, solve_convex, solve_quantile, structured, FilterProblem, SolveStatus, SolverOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit(rng: &mut ChaCha8Rng, m: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Random concave quadratic or halfspace with `z` strictly inside by at
/// least a ball of radius `r0`.
fn constraint_around(rng: &mut ChaCha8Rng, z: &DVector<f64>, r0: f64) -> QuadForm {
    let m = z.len();
    if rng.random_bool(0.4) {
        // aᵀ(u − z) + s ≥ 0, with s ≥ r0 so the ball fits.
        let a = unit(rng, m);
        let s = r0 + rng.random_range(0.0..1.0);
        QuadForm::affine(s - a.dot(z), a)
    } else {
        // r² − (u − c)ᵀA(u − c) ≥ 0 with A ⪰ 0 and the ball around z inside.
        let l = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        let a = &l * l.transpose() + DMatrix::identity(m, m) * 0.2;
        let lmax = a.symmetric_eigenvalues().max();
        let c = z + unit(rng, m) * rng.random_range(0.0..1.5);
        let dz = z - &c;
        // Every point within r0 of z has (u−c)ᵀA(u−c) ≤ lmax(‖z−c‖ + r0)².
        let reach = dz.norm() + r0;
        let r2 = lmax * reach * reach * rng.random_range(1.0..1.5);
        // −uᵀAu + 2cᵀAu + r² − cᵀAc
        QuadForm::new(r2 - c.dot(&(&a * &c)), (&a * &c) * 2.0, -a)
    }
}

/// Distance from `u0` along the unit direction `d` to the feasible set, from
/// the exact roots of each margin restricted to the ray.
fn entry_radius(u0: &DVector<f64>, d: &DVector<f64>, forms: &[QuadForm]) -> Option<f64> {
    let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
    for f in forms {
        // f(u0 + r·d) = c + b·r + a·r²
        let pd = &f.p * d;
        let a = d.dot(&pd);
        let b = f.q.dot(d) + 2.0 * u0.dot(&pd);
        let c = f.eval(u0);
        if a.abs() <= 1e-14 {
            if b > 0.0 {
                lo = lo.max(-c / b);
            } else if b < 0.0 {
                hi = hi.min(-c / b);
            } else if c < 0.0 {
                return None;
            }
            continue;
        }
        // Concave: the non-negative set is the interval between the roots.
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            return None;
        }
        let q = -0.5 * (b + b.signum() * disc.sqrt());
        let (r1, r2) = (q / a, c / q);
        lo = lo.max(r1.min(r2));
        hi = hi.min(r1.max(r2));
    }
    (lo <= hi).then_some(lo)
}

/// `min ‖u − u0‖²` over the feasible set as `min_d r(d)²`, where `r(d)` is
/// the exact entry distance along direction `d`: a dense grid over the
/// direction sphere, refined around the best direction.
fn ray_grid_oracle(u0: &DVector<f64>, forms: &[QuadForm]) -> Option<f64> {
    let m = u0.len();
    let radius = |d: DVector<f64>| entry_radius(u0, &d, forms).map(|r| r * r).unwrap_or(f64::INFINITY);
    let best = match m {
        1 => radius(DVector::from_element(1, 1.0)).min(radius(DVector::from_element(1, -1.0))),
        2 => {
            let dir = |phi: f64| DVector::from_vec(vec![phi.cos(), phi.sin()]);
            let n0 = 7200;
            let h0 = std::f64::consts::TAU / n0 as f64;
            let (mut best, mut phi) = (0..n0)
                .map(|i| (radius(dir(h0 * i as f64)), h0 * i as f64))
                .fold((f64::INFINITY, 0.0), |a, b| if b.0 < a.0 { b } else { a });
            let mut h = h0;
            let mut rounds = 0;
            while h > 1e-12 && rounds < 2000 {
                rounds += 1;
                let p0 = phi;
                let mut on_edge = false;
                for k in -40..=40_i32 {
                    let p = p0 + h * 0.1 * k as f64;
                    let v = radius(dir(p));
                    if v < best {
                        best = v;
                        phi = p;
                        on_edge = k.abs() == 40;
                    }
                }
                if !on_edge {
                    h *= 0.1;
                }
            }
            best
        }
        3 => {
            let dir = |t: f64, p: f64| DVector::from_vec(vec![t.sin() * p.cos(), t.sin() * p.sin(), t.cos()]);
            let (nt, np) = (360, 720);
            let (ht, hp) = (std::f64::consts::PI / nt as f64, std::f64::consts::TAU / np as f64);
            let (mut best, mut at) = (f64::INFINITY, (0.0, 0.0));
            for i in 0..=nt {
                for j in 0..np {
                    let (t, p) = (ht * i as f64, hp * j as f64);
                    let v = radius(dir(t, p));
                    if v < best {
                        best = v;
                        at = (t, p);
                    }
                }
            }
            let mut h = ht.max(hp);
            let mut rounds = 0;
            while h > 1e-11 && rounds < 2000 {
                rounds += 1;
                let (t0, p0) = at;
                let mut on_edge = false;
                for a in -20..=20_i32 {
                    for b in -20..=20_i32 {
                        let (t, p) = (t0 + h * 0.1 * a as f64, p0 + h * 0.1 * b as f64);
                        let v = radius(dir(t, p));
                        if v < best {
                            best = v;
                            at = (t, p);
                            on_edge = a.abs() == 20 || b.abs() == 20;
                        }
                    }
                }
                // Shrink only once the best direction is inside the window.
                if !on_edge {
                    h *= 0.25;
                }
            }
            best
        }
        _ => unreachable!("oracle covers m ≤ 3"),
    };
    best.is_finite().then_some(best)
}

/// Lagrangian dual `g(λ) = min_u ‖u − u0‖² − Σ λᵢ fᵢ(u)`, a lower bound on
/// the optimum for every `λ ≥ 0`. With `fᵢ = cᵢ + qᵢᵀu + uᵀPᵢu`, `Pᵢ ⪯ 0`:
/// `g = ‖u0‖² − Σλᵢcᵢ − bᵀH⁻¹b` with `H = I − ΣλᵢPᵢ`, `b = u0 + ½Σλᵢqᵢ`.
fn dual_value(u0: &DVector<f64>, forms: &[QuadForm], lam: &[f64]) -> f64 {
    let m = u0.len();
    let mut h = DMatrix::identity(m, m);
    let mut b = u0.clone();
    let mut c = 0.0;
    for (f, &l) in forms.iter().zip(lam) {
        h -= &f.p * l;
        b += &f.q * (0.5 * l);
        c += l * f.c;
    }
    let hb = h.cholesky().expect("H ≻ 0 for concave margins").solve(&b);
    u0.norm_squared() - c - b.dot(&hb)
}

/// Best dual bound by cyclic coordinate ascent with golden-section line
/// searches (the dual is smooth and concave).
fn dual_oracle(u0: &DVector<f64>, forms: &[QuadForm]) -> f64 {
    let n = forms.len();
    let mut lam = vec![0.0; n];
    let mut value = dual_value(u0, forms, &lam);
    let phi = 0.5 * (5.0_f64.sqrt() - 1.0);
    for _ in 0..3000 {
        let before = value;
        for i in 0..n {
            let cur = lam[i];
            let mut trial = lam.clone();
            let mut at = |x: f64| {
                trial[i] = x;
                dual_value(u0, forms, &trial)
            };
            // Bracket the maximizer of the concave section on [0, hi].
            let mut hi = (2.0 * cur).max(1.0);
            while at(hi) > at(0.5 * hi) && hi < 1e12 {
                hi *= 2.0;
            }
            let (mut a, mut b) = (0.0, hi);
            let (mut x1, mut x2) = (b - phi * (b - a), a + phi * (b - a));
            let (mut f1, mut f2) = (at(x1), at(x2));
            for _ in 0..80 {
                if f1 < f2 {
                    a = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = a + phi * (b - a);
                    f2 = at(x2);
                } else {
                    b = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = b - phi * (b - a);
                    f1 = at(x1);
                }
            }
            let cands = [0.0, 0.5 * (a + b), cur];
            let (best_x, best_v) = cands
                .iter()
                .map(|&x| (x, at(x)))
                .fold((cur, f64::NEG_INFINITY), |acc, c| if c.1 > acc.1 { c } else { acc });
            lam[i] = best_x;
            value = best_v;
        }
        if value - before <= 1e-14 * (1.0 + value.abs()) {
            break;
        }
    }
    value
}

pub fn convex_projection() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let opts = SolverOptions::default();
    let (mut worst, mut grid_gap) = (0.0_f64, 0.0_f64);
    for case in 0..200 {
        let m = 1 + case % 3;
        let z = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let r0 = 0.4;
        let n_cons = rng.random_range(1..=20);
        let forms: Vec<QuadForm> = (0..n_cons).map(|_| constraint_around(&mut rng, &z, r0)).collect();
        let u0 = &z + unit(&mut rng, m) * rng.random_range(0.5..4.0);
        let problem = FilterProblem::new(
            u0.clone(),
            forms.iter().cloned().map(FilterConstraint::quadratic).collect(),
        )
        .unwrap();
        let r = solve_convex(&problem, &opts).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal, "case {case}");
        assert!(r.worst_margin >= -1e-8, "case {case}: margin {}", r.worst_margin);
        let oracle = ray_grid_oracle(&u0, &forms).expect("z's ball is reachable");
        let lower = dual_oracle(&u0, &forms);
        let got = problem.objective(&r.u_star);
        assert!(lower <= oracle + 1e-9, "case {case}: oracles disagree, dual {lower} > grid {oracle}");
        // Feasible and within 1e-5 of a dual bound: optimal to 1e-5. Never
        // worse than the best grid point.
        assert!(got - lower <= 1e-5, "case {case} (m={m}, {n_cons} constraints): {got} vs dual {lower}");
        assert!(got <= oracle + 1e-9, "case {case}: {got} above grid {oracle}");
        worst = worst.max(got - lower);
        grid_gap = grid_gap.max(oracle - got);
    }
    format!("200 instances; max objective − dual bound {worst:.1e}, max grid − objective {grid_gap:.1e}")
}

fn quantile_problem(u0: DVector<f64>, margins: Vec<QuadForm>, required: usize) -> FilterProblem {
    FilterProblem::new(
        u0,
        vec![FilterConstraint::Quantile(QuantileConstraint { margins, required })],
    )
    .unwrap()
}

/// Every `required`-subset enforced with the convex solver; best objective.
fn subset_oracle(u0: &DVector<f64>, margins: &[QuadForm], required: usize) -> Option<f64> {
    let n = margins.len();
    let opts = SolverOptions::default();
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != required {
            continue;
        }
        let cons: Vec<FilterConstraint> = (0..n)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| FilterConstraint::quadratic(margins[i].clone()))
            .collect();
        let p = FilterProblem::new(u0.clone(), cons).unwrap();
        let r = solve_convex(&p, &opts).unwrap();
        assert_ne!(r.status, SolveStatus::IterationLimit);
        if r.status == SolveStatus::Optimal {
            let o = p.objective(&r.u_star);
            best = Some(best.map_or(o, |b: f64| b.min(o)));
        }
    }
    best
}

fn random_margin(rng: &mut ChaCha8Rng, m: usize) -> QuadForm {
    let z = DVector::from_fn(m, |_, _| rng.random_range(-2.0..2.0));
    let r0 = rng.random_range(0.05..0.5);
    constraint_around(rng, &z, r0)
}

pub fn quantile_enumeration() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let opts = SolverOptions::default();
    let (mut feasible_cases, mut infeasible_cases) = (0, 0);
    for case in 0..150 {
        let m = 1 + case % 3;
        let n = rng.random_range(2..=12);
        let required = rng.random_range(1..=n);
        let margins: Vec<QuadForm> = (0..n).map(|_| random_margin(&mut rng, m)).collect();
        let u0 = DVector::from_fn(m, |_, _| rng.random_range(-3.0..3.0));
        let problem = quantile_problem(u0.clone(), margins.clone(), required);
        let r = solve_quantile(&problem, &opts).unwrap();
        match subset_oracle(&u0, &margins, required) {
            Some(best) => {
                feasible_cases += 1;
                assert_eq!(r.status, SolveStatus::Optimal, "case {case}");
                let got = problem.objective(&r.u_star);
                assert!((got - best).abs() <= 1e-7 * (1.0 + best), "case {case}: {got} vs {best}");
                let sat = margins.iter().filter(|f| f.eval(&r.u_star) >= -1e-8).count();
                assert!(sat >= required, "case {case}");
            }
            None => {
                infeasible_cases += 1;
                assert_eq!(r.status, SolveStatus::Infeasible, "case {case}");
            }
        }
    }
    assert!(feasible_cases > 50 && infeasible_cases > 5, "{feasible_cases}/{infeasible_cases}");
    format!("150 instances ({feasible_cases} feasible, {infeasible_cases} infeasible)")
}

/// In one dimension the feasible set is explicit: the points covered by at
/// least `required` of the margin intervals.
pub fn quantile_intervals() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let opts = SolverOptions::default();
    for case in 0..300 {
        let n = rng.random_range(1..=12);
        let required = rng.random_range(1..=n);
        // Margin r² − (u − c)²: the interval [c − r, c + r].
        let intervals: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                let c: f64 = rng.random_range(-3.0..3.0);
                let r: f64 = rng.random_range(0.05..1.0);
                (c - r, c + r)
            })
            .collect();
        let margins: Vec<QuadForm> = intervals
            .iter()
            .map(|&(a, b)| {
                let (c, r) = (0.5 * (a + b), 0.5 * (b - a));
                QuadForm::new(r * r - c * c, DVector::from_element(1, 2.0 * c), -DMatrix::identity(1, 1))
            })
            .collect();
        let u0: f64 = rng.random_range(-4.0..4.0);
        let covered = |x: f64| intervals.iter().filter(|&&(a, b)| a - 1e-12 <= x && x <= b + 1e-12).count();
        let oracle = std::iter::once(u0)
            .chain(intervals.iter().flat_map(|&(a, b)| [a, b]))
            .filter(|&x| covered(x) >= required)
            .map(|x| (x - u0).abs())
            .fold(f64::INFINITY, f64::min);
        let r = solve_quantile(&quantile_problem(DVector::from_element(1, u0), margins, required), &opts).unwrap();
        if oracle.is_finite() {
            assert_eq!(r.status, SolveStatus::Optimal, "case {case}");
            assert!(((r.u_star[0] - u0).abs() - oracle).abs() < 1e-7, "case {case}");
        } else {
            assert_eq!(r.status, SolveStatus::Infeasible, "case {case}");
        }
    }
    "300 one-dimensional instances".to_string()
}

fn corridor_state(rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_vec(vec![
        rng.random_range(-1.0..1.0),
        rng.random_range(-0.5..0.5),
        rng.random_range(-1.2..1.2),
    ])
}

pub fn corridor_structured() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let opts = SolverOptions::default();
    let mut worst = 0.0_f64;
    for method in Method::FILTERS {
        for k in 0..40 {
            let cfg = SimConfig {
                master_seed: k,
                ..SimConfig::default()
            };
            let sigma = rng.random_range(0.02..0.1);
            let filter = MethodFilter::new(&cfg, method, sigma, 1000 + k).unwrap();
            let x = corridor_state(&mut rng);
            let u_nom = DVector::from_vec(vec![0.2, 0.0, -x[2]]);
            let problem = FilterProblem::new(u_nom, filter.constraints(&x).unwrap()).unwrap();
            let generic = solve(&problem, &opts).unwrap();
            let exact = structured::solve(&problem).unwrap().expect("corridor margins are 1-D");
            assert_eq!(generic.status, exact.status, "{method} #{k}");
            if exact.status == SolveStatus::Optimal {
                let d = (&generic.u_star - &exact.u_star).norm();
                worst = worst.max(d);
                assert!(d <= 1e-6, "{method} #{k}: ‖Δu‖ = {d:e}");
            }
        }
    }
    format!("200 corridor instances; max ‖u_generic − u_structured‖ {worst:.1e}")
}

/// The structured backend against a dense scan of `s = wᵀu` for the
/// Cantelli margin (a mean minus a scaled standard deviation).
pub fn structured_cantelli_scan() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for k in 0..30 {
        let sigma = rng.random_range(0.02..0.2);
        let filter = MethodFilter::new(&SimConfig::default(), Method::Cantelli, sigma, 0).unwrap();
        let x = corridor_state(&mut rng);
        let u_nom = DVector::from_vec(vec![0.2, 0.0, -x[2]]);
        let cons = filter.constraints(&x).unwrap();
        let problem = FilterProblem::new(u_nom.clone(), cons.clone()).unwrap();
        let exact = structured::solve(&problem).unwrap().unwrap();
        let w = structured::reduce(&cons).unwrap().direction;
        let s0 = w.dot(&u_nom);
        let h = 1e-5;
        let best = (0..=3_000_000)
            .map(|i| -15.0 + h * i as f64)
            .filter(|&s| cons[0].margin(&(&u_nom + &w * (s - s0))) >= 0.0)
            .map(|s| (s - s0).abs())
            .fold(f64::INFINITY, f64::min);
        match exact.status {
            SolveStatus::Optimal => {
                let got = (&exact.u_star - &u_nom).norm();
                assert!((got - best).abs() <= 2.0 * h, "#{k}: {got} vs scan {best}");
            }
            _ => assert!(best.is_infinite(), "#{k}"),
        }
    }
    "30 Cantelli instances".to_string()
}
