//! Primal log-barrier interior point method for
//! `min ‖u − u₀‖²  s.t.  fᵢ(u) ≥ 0` with every `fᵢ` affine or concave quadratic.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{Backend, FilterProblem, FilterResult, InputBox, SolveStatus, SolverOptions};
use crate::error::{Error, Result};
use crate::quadratic::QuadForm;

const ARMIJO: f64 = 0.25;
const SHRINK: f64 = 0.5;
const CENTERING_TOL: f64 = 1e-10;
const CENTERING_STEPS: usize = 50;
const GROWTH: f64 = 10.0;

/// Convex-backend outcome before packaging into a [`FilterResult`].
#[derive(Debug, Clone)]
pub(crate) enum ConvexOutcome {
    Optimal { u: DVector<f64>, newton: usize },
    Infeasible { certificate: f64, newton: usize },
    IterationLimit { u: DVector<f64>, newton: usize },
}

pub fn solve_convex(problem: &FilterProblem, opts: &SolverOptions) -> Result<FilterResult> {
    let forms = problem.convex_margins().ok_or_else(|| {
        Error::Precondition("solve_convex needs affine or concave-quadratic constraints".into())
    })?;
    Ok(match solve_forms(&problem.u_nom, &forms, opts) {
        ConvexOutcome::Optimal { u, newton } => {
            FilterResult::optimal(problem, u, Backend::InteriorPoint).with_iterations(newton)
        }
        ConvexOutcome::Infeasible { certificate, newton } => {
            FilterResult::infeasible(problem, certificate, Backend::InteriorPoint)
                .with_iterations(newton)
        }
        ConvexOutcome::IterationLimit { u, newton } => {
            let mut r = FilterResult::optimal(problem, u, Backend::InteriorPoint).with_iterations(newton);
            r.status = SolveStatus::IterationLimit;
            r
        }
    })
}

fn min_margin(forms: &[QuadForm], u: &DVector<f64>) -> f64 {
    forms.iter().map(|f| f.eval(u)).fold(f64::INFINITY, f64::min)
}

/// Projection of `u0` onto the intersection of `{fᵢ ≥ 0}`.
pub(crate) fn solve_forms(u0: &DVector<f64>, forms: &[QuadForm], opts: &SolverOptions) -> ConvexOutcome {
    if forms.is_empty() || min_margin(forms, u0) >= 0.0 {
        return ConvexOutcome::Optimal {
            u: u0.clone(),
            newton: 0,
        };
    }
    let phase1 = phase_one(u0, forms, &[], 1.0, true, opts);
    let mut newton = phase1.newton;
    let (start, shift) = if phase1.t > 0.0 {
        (phase1.u, 0.0)
    } else if phase1.t >= -opts.tol_feas && !phase1.hit_limit {
        // Feasible set with (numerically) empty interior: relax by tol_feas.
        (phase1.u, opts.tol_feas)
    } else if phase1.hit_limit {
        return ConvexOutcome::IterationLimit {
            u: phase1.u,
            newton,
        };
    } else {
        return ConvexOutcome::Infeasible {
            certificate: phase1.t,
            newton,
        };
    };
    let shifted: Vec<QuadForm>;
    let work: &[QuadForm] = if shift > 0.0 {
        shifted = forms.iter().map(|f| f.shifted(shift)).collect();
        &shifted
    } else {
        forms
    };
    let phase2 = phase_two(u0, work, start, opts);
    newton += phase2.newton;
    if phase2.hit_limit {
        return ConvexOutcome::IterationLimit {
            u: phase2.u,
            newton,
        };
    }
    let u = polish(u0, forms, &phase2.u, phase2.tau, opts).unwrap_or(phase2.u);
    ConvexOutcome::Optimal { u, newton }
}

struct PhaseOne {
    u: DVector<f64>,
    t: f64,
    newton: usize,
    hit_limit: bool,
}

/// Maximizes `t` subject to `fᵢ(u) ≥ t`, via the barrier
/// `−τt + ρ‖u − u₀‖² − Σ log(fᵢ(u) − t)` with increasing `τ`. The proximal
/// term keeps the problem bounded without a box; its weight relative to `t`
/// vanishes as `τ` grows. With `stop_when_feasible` the search ends as soon as
/// a strictly feasible point appears. `hard` margins enter as plain barrier
/// terms (not shifted by `t`) and must hold strictly at `u0`.
fn phase_one(
    u0: &DVector<f64>,
    forms: &[QuadForm],
    hard: &[QuadForm],
    rho: f64,
    stop_when_feasible: bool,
    opts: &SolverOptions,
) -> PhaseOne {
    let m = u0.len();
    let n = m + 1;
    let k = forms.len() as f64;
    let mut u = u0.clone();
    let mut t = min_margin(forms, &u) - 1.0;
    let mut tau = 1.0;
    let mut newton = 0;

    let value = |u: &DVector<f64>, t: f64, tau: f64| -> f64 {
        let mut acc = -tau * t + rho * (u - u0).norm_squared();
        for f in forms {
            let s = f.eval(u) - t;
            if s <= 0.0 {
                return f64::INFINITY;
            }
            acc -= s.ln();
        }
        for f in hard {
            let s = f.eval(u);
            if s <= 0.0 {
                return f64::INFINITY;
            }
            acc -= s.ln();
        }
        acc
    };

    loop {
        // Centering.
        let mut steps = 0;
        loop {
            steps += 1;
            if steps > CENTERING_STEPS {
                break;
            }
            if stop_when_feasible && t > 0.0 {
                return PhaseOne {
                    u,
                    t,
                    newton,
                    hit_limit: false,
                };
            }
            if newton >= opts.max_newton {
                return PhaseOne {
                    t: min_margin(forms, &u),
                    u,
                    newton,
                    hit_limit: true,
                };
            }
            let mut grad = DVector::zeros(n);
            let mut hess = DMatrix::zeros(n, n);
            for i in 0..m {
                grad[i] = 2.0 * rho * (u[i] - u0[i]);
                hess[(i, i)] = 2.0 * rho;
            }
            grad[m] = -tau;
            for f in forms {
                let s = f.eval(&u) - t;
                let g = f.gradient(&u);
                let inv = 1.0 / s;
                let inv2 = inv * inv;
                for i in 0..m {
                    grad[i] -= g[i] * inv;
                    hess[(i, m)] -= g[i] * inv2;
                    hess[(m, i)] -= g[i] * inv2;
                    for j in 0..m {
                        hess[(i, j)] += g[i] * g[j] * inv2 - 2.0 * f.p[(i, j)] * inv;
                    }
                }
                grad[m] += inv;
                hess[(m, m)] += inv2;
            }
            for f in hard {
                let inv = 1.0 / f.eval(&u);
                let g = f.gradient(&u);
                for i in 0..m {
                    grad[i] -= g[i] * inv;
                    for j in 0..m {
                        hess[(i, j)] += g[i] * g[j] * inv * inv - 2.0 * f.p[(i, j)] * inv;
                    }
                }
            }
            let step = match newton_direction(hess, &grad) {
                Some(s) => s,
                None => break,
            };
            let decrement = -grad.dot(&step);
            newton += 1;
            if decrement * 0.5 <= CENTERING_TOL {
                break;
            }
            let f0 = value(&u, t, tau);
            let mut alpha = 1.0;
            let mut accepted = false;
            while alpha > 1e-14 {
                let un = &u + step.rows(0, m) * alpha;
                let tn = t + step[m] * alpha;
                let fv = value(&un, tn, tau);
                if fv.is_finite() && fv <= f0 - ARMIJO * alpha * decrement {
                    u = un;
                    t = tn;
                    accepted = true;
                    break;
                }
                alpha *= SHRINK;
            }
            if !accepted {
                break;
            }
        }
        if stop_when_feasible && hard.is_empty() {
            // Central-path multipliers λᵢ = 1/(τ sᵢ) sum to one, so
            // sup_u Σ λᵢ fᵢ(u) bounds the best worst-margin from above.
            let bound = dual_bound(forms, &u, t, tau);
            if bound < -opts.tol_feas {
                return PhaseOne {
                    u,
                    t: bound,
                    newton,
                    hit_limit: false,
                };
            }
        }
        if (k + hard.len() as f64) / tau < opts.gap_tol {
            break;
        }
        tau *= GROWTH;
    }
    PhaseOne {
        t: min_margin(forms, &u).max(t),
        u,
        newton,
        hit_limit: false,
    }
}

struct PhaseTwo {
    u: DVector<f64>,
    tau: f64,
    newton: usize,
    hit_limit: bool,
}

/// Barrier path `τ‖u − u₀‖² − Σ log fᵢ(u)` from a strictly feasible start.
fn phase_two(u0: &DVector<f64>, forms: &[QuadForm], start: DVector<f64>, opts: &SolverOptions) -> PhaseTwo {
    let m = u0.len();
    let k = forms.len() as f64;
    let mut u = start;
    let mut tau = k / (u0 - &u).norm_squared().max(1e-6);
    tau = tau.clamp(1e-3, 1e6);
    let mut newton = 0;

    let value = |u: &DVector<f64>, tau: f64| -> f64 {
        let mut acc = tau * (u - u0).norm_squared();
        for f in forms {
            let s = f.eval(u);
            if s <= 0.0 {
                return f64::INFINITY;
            }
            acc -= s.ln();
        }
        acc
    };

    loop {
        let mut steps = 0;
        loop {
            steps += 1;
            if steps > CENTERING_STEPS {
                break;
            }
            if newton >= opts.max_newton {
                return PhaseTwo {
                    u,
                    tau,
                    newton,
                    hit_limit: true,
                };
            }
            let mut grad = (&u - u0) * (2.0 * tau);
            let mut hess = DMatrix::identity(m, m) * (2.0 * tau);
            for f in forms {
                let s = f.eval(&u);
                let g = f.gradient(&u);
                let inv = 1.0 / s;
                grad -= &g * inv;
                hess += (&g * g.transpose()) * (inv * inv) - &f.p * (2.0 * inv);
            }
            let step = match newton_direction(hess, &grad) {
                Some(s) => s,
                None => break,
            };
            let decrement = -grad.dot(&step);
            newton += 1;
            let f0 = value(&u, tau);
            // The barrier value grows like τ; round-off caps attainable accuracy.
            if decrement * 0.5 <= CENTERING_TOL * (1.0 + tau * (&u - u0).norm_squared()) {
                break;
            }
            let mut alpha = 1.0;
            let mut accepted = false;
            while alpha > 1e-14 {
                let un = &u + &step * alpha;
                let fv = value(&un, tau);
                if fv.is_finite() && fv <= f0 - ARMIJO * alpha * decrement {
                    u = un;
                    accepted = true;
                    break;
                }
                alpha *= SHRINK;
            }
            if !accepted {
                break;
            }
        }
        if k / tau < opts.gap_tol {
            break;
        }
        tau *= GROWTH;
    }
    PhaseTwo {
        u,
        tau,
        newton,
        hit_limit: false,
    }
}

fn dual_bound(forms: &[QuadForm], u: &DVector<f64>, t: f64, tau: f64) -> f64 {
    let lam: Vec<f64> = forms.iter().map(|f| 1.0 / (tau * (f.eval(u) - t))).collect();
    let total: f64 = lam.iter().sum();
    let m = u.len();
    let mut agg = QuadForm::constant(0.0, m);
    for (f, l) in forms.iter().zip(&lam) {
        agg = agg.add(&f.scaled(l / total));
    }
    agg.supremum().unwrap_or(f64::INFINITY)
}

/// Solves `H s = −g` by Cholesky, adding diagonal jitter when needed.
fn newton_direction(hess: DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = hess.diagonal().abs().max().max(1e-300);
    let mut jitter = 0.0;
    for _ in 0..12 {
        let mut h = hess.clone();
        if jitter > 0.0 {
            for i in 0..h.nrows() {
                h[(i, i)] += jitter;
            }
        }
        if let Some(ch) = Cholesky::<f64, Dyn>::new(h) {
            let s = ch.solve(&(-grad));
            if s.iter().all(|v| v.is_finite()) {
                return Some(s);
            }
        }
        jitter = if jitter == 0.0 { 1e-14 * scale } else { jitter * 100.0 };
    }
    None
}

/// Refines an interior-point solution by Newton's method on the KKT system of
/// the constraints that are active at the barrier's dual estimate.
fn polish(
    u0: &DVector<f64>,
    forms: &[QuadForm],
    u_ipm: &DVector<f64>,
    tau: f64,
    opts: &SolverOptions,
) -> Option<DVector<f64>> {
    let m = u0.len();
    let duals: Vec<f64> = forms.iter().map(|f| 1.0 / (tau * f.eval(u_ipm))).collect();
    let max_dual = duals.iter().cloned().fold(0.0, f64::max);
    if max_dual <= 0.0 {
        return None;
    }
    let active: Vec<usize> = (0..forms.len())
        .filter(|&i| duals[i] >= 1e-4 * max_dual && forms[i].eval(u_ipm) <= 1e-4)
        .collect();
    let na = active.len();
    if na == 0 || na > m {
        return None;
    }
    let mut u = u_ipm.clone();
    let mut lam: Vec<f64> = active.iter().map(|&i| duals[i]).collect();
    for _ in 0..30 {
        let n = m + na;
        let mut jac = DMatrix::zeros(n, n);
        let mut res = DVector::zeros(n);
        let mut r_u = (&u - u0) * 2.0;
        let mut h = DMatrix::identity(m, m) * 2.0;
        for (k, &i) in active.iter().enumerate() {
            let g = forms[i].gradient(&u);
            r_u -= &g * lam[k];
            h -= &forms[i].p * (2.0 * lam[k]);
            res[m + k] = forms[i].eval(&u);
            for j in 0..m {
                jac[(j, m + k)] = -g[j];
                jac[(m + k, j)] = g[j];
            }
        }
        res.rows_mut(0, m).copy_from(&r_u);
        jac.view_mut((0, 0), (m, m)).copy_from(&h);
        if res.norm() < 1e-15 * (1.0 + u.norm()) {
            break;
        }
        let step = jac.lu().solve(&(-res))?;
        if !step.iter().all(|v| v.is_finite()) {
            return None;
        }
        u += step.rows(0, m);
        for k in 0..na {
            lam[k] += step[m + k];
        }
    }
    let feasible = forms.iter().all(|f| f.eval(&u) >= -1e-3 * opts.tol_feas);
    let duals_ok = lam.iter().all(|&l| l >= 0.0);
    let better = (&u - u0).norm_squared() <= (u_ipm - u0).norm_squared() + 10.0 * opts.gap_tol;
    let close = (&u - u_ipm).norm() <= 1e-3 * (1.0 + u_ipm.norm());
    (feasible && duals_ok && better && close).then_some(u)
}

/// `sup_{u ∈ box} minᵢ fᵢ(u)` for concave `fᵢ`, by phase I on the box.
pub(crate) fn max_min_margin(forms: &[QuadForm], input_box: &InputBox, opts: &SolverOptions) -> Result<f64> {
    let center = input_box.center();
    let box_forms = input_box.as_margins();
    let widths = input_box.hi() - input_box.lo();
    if widths.iter().any(|w| *w <= 0.0) {
        // Degenerate box: the only point is the center.
        return Ok(min_margin(forms, &center));
    }
    let opts = SolverOptions {
        max_newton: opts.max_newton.max(500),
        ..*opts
    };
    let r = phase_one(&center, forms, &box_forms, 0.0, false, &opts);
    let u = input_box.clamp(&r.u);
    Ok(min_margin(forms, &u))
}
