//! Multi-start local solver for general smooth margins.
//!
//! Each start runs an SQP iteration that projects `u_nom` onto the
//! linearized constraints and globalizes with an ℓ₁ merit line search. Starts
//! that cannot reach feasibility first run a max-min-margin ascent. Declared
//! infeasibility is heuristic.

use nalgebra::DVector;

use super::ipm::{solve_forms, ConvexOutcome};
use super::{Backend, FilterProblem, FilterResult, InputBox, SolveStatus, SolverOptions};
use crate::conditions::FilterConstraint;
use crate::error::{Error, Result};
use crate::quadratic::QuadForm;

/// Margin functions of a problem, box sides included.
struct Margins<'a> {
    constraints: &'a [FilterConstraint],
    box_forms: Vec<QuadForm>,
}

impl<'a> Margins<'a> {
    fn new(constraints: &'a [FilterConstraint], input_box: Option<&InputBox>) -> Self {
        Self {
            constraints,
            box_forms: input_box.map(|b| b.as_margins()).unwrap_or_default(),
        }
    }

    fn len(&self) -> usize {
        self.constraints.len() + self.box_forms.len()
    }

    fn values(&self, u: &DVector<f64>) -> Vec<f64> {
        self.constraints
            .iter()
            .map(|c| c.margin(u))
            .chain(self.box_forms.iter().map(|f| f.eval(u)))
            .collect()
    }

    fn gradient(&self, i: usize, u: &DVector<f64>) -> DVector<f64> {
        if i < self.constraints.len() {
            match &self.constraints[i] {
                FilterConstraint::Single { margin, .. } => margin.gradient(u),
                FilterConstraint::Quantile(_) => unreachable!("rejected on entry"),
            }
        } else {
            self.box_forms[i - self.constraints.len()].gradient(u)
        }
    }

    fn worst(&self, u: &DVector<f64>) -> f64 {
        self.values(u).into_iter().fold(f64::INFINITY, f64::min)
    }
}

fn starts(u0: &DVector<f64>, n: usize) -> Vec<DVector<f64>> {
    let m = u0.len();
    let scale = u0.norm().max(1.0);
    let mut dirs: Vec<DVector<f64>> = Vec::new();
    for j in 0..m {
        for sign in [1.0, -1.0] {
            let mut e = DVector::zeros(m);
            e[j] = sign;
            dirs.push(e);
        }
    }
    let diag = DVector::from_element(m, 1.0 / (m as f64).sqrt());
    dirs.push(diag.clone());
    dirs.push(-diag);
    let mut out = vec![u0.clone()];
    let mut round = 1.0;
    while out.len() < n.max(1) {
        for d in &dirs {
            if out.len() >= n {
                break;
            }
            out.push(u0 + d * (scale * round));
        }
        round *= 2.0;
    }
    out
}

pub fn solve_nonconvex(problem: &FilterProblem, opts: &SolverOptions) -> Result<FilterResult> {
    if problem
        .constraints
        .iter()
        .any(|c| matches!(c, FilterConstraint::Quantile(_)))
    {
        return Err(Error::Precondition(
            "quantile constraints go to solve_quantile".into(),
        ));
    }
    let margins = Margins::new(&problem.constraints, problem.input_box.as_ref());
    let u0 = &problem.u_nom;
    if margins.worst(u0) >= 0.0 {
        return Ok(FilterResult::optimal(problem, u0.clone(), Backend::MultiStartSqp));
    }
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut best_phase1 = f64::NEG_INFINITY;
    let mut iterations = 0;
    let mut hit_limit = false;
    for start in starts(u0, opts.n_starts) {
        let start = match &problem.input_box {
            Some(b) => b.clamp(&start),
            None => start,
        };
        let mut run = sqp(&margins, u0, start.clone(), opts);
        iterations += run.iterations;
        if run.u.is_none() {
            let (u1, value, its) = ascend(&margins, start, problem.input_box.as_ref(), true, opts);
            iterations += its;
            best_phase1 = best_phase1.max(value);
            if value >= 0.0 {
                run = sqp(&margins, u0, u1.clone(), opts);
                iterations += run.iterations;
                if run.u.is_none() && margins.worst(&u1) >= -opts.tol_feas {
                    run.u = Some(u1);
                }
            }
        }
        hit_limit |= run.hit_limit;
        if let Some(u) = run.u {
            let obj = (&u - u0).norm_squared();
            if best.as_ref().is_none_or(|(b, _)| obj < *b - 1e-14) {
                best = Some((obj, u));
            }
        }
    }
    Ok(match best {
        Some((_, u)) => {
            let mut r = FilterResult::optimal(problem, u, Backend::MultiStartSqp).with_iterations(iterations);
            if hit_limit && r.worst_margin < -opts.tol_feas {
                r.status = SolveStatus::IterationLimit;
            }
            r
        }
        None => {
            let mut r = FilterResult::infeasible(problem, best_phase1, Backend::MultiStartSqp)
                .with_iterations(iterations);
            r.heuristic = true;
            r
        }
    })
}

struct SqpRun {
    u: Option<DVector<f64>>,
    iterations: usize,
    hit_limit: bool,
}

fn sqp(margins: &Margins<'_>, u0: &DVector<f64>, start: DVector<f64>, opts: &SolverOptions) -> SqpRun {
    let mut u = start;
    let mut rho = 1.0_f64;
    let merit = |u: &DVector<f64>, rho: f64| -> f64 {
        let viol: f64 = margins.values(u).iter().map(|v| (-v).max(0.0)).sum();
        (u - u0).norm_squared() + rho * viol
    };
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_sqp {
        iterations += 1;
        let values = margins.values(&u);
        let grads: Vec<DVector<f64>> = (0..margins.len()).map(|i| margins.gradient(i, &u)).collect();
        // Linearization fᵢ(u) + gᵢᵀ(v − u) ≥ 0 as affine forms in v.
        let lin: Vec<QuadForm> = values
            .iter()
            .zip(&grads)
            .map(|(f, g)| QuadForm::affine(f - g.dot(&u), g.clone()))
            .collect();
        let v = match project_affine(u0, &lin, opts) {
            Some(v) => v,
            None => break,
        };
        let d = &v - &u;
        let dn = d.norm();
        if dn <= 1e-13 * (1.0 + u.norm()) {
            converged = true;
            break;
        }
        let min_g = grads.iter().map(|g| g.norm()).fold(f64::INFINITY, f64::min).max(1e-12);
        rho = rho.max(4.0 * (&v - u0).norm() / min_g + 1e-3);
        let phi0 = merit(&u, rho);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let un = &u + &d * alpha;
            if merit(&un, rho) <= phi0 - 1e-6 * alpha * dn * dn {
                u = un;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // No merit decrease along the step: stationary up to round-off.
            converged = dn <= 1e-8 * (1.0 + u.norm());
            break;
        }
    }
    let feasible = margins.worst(&u) >= -opts.tol_feas;
    SqpRun {
        u: feasible.then_some(u),
        iterations,
        hit_limit: !converged && iterations >= opts.max_sqp,
    }
}

/// Projection of `u0` onto `{v : fᵢ(v) ≥ 0}` for affine `fᵢ`.
fn project_affine(u0: &DVector<f64>, lin: &[QuadForm], opts: &SolverOptions) -> Option<DVector<f64>> {
    if lin.len() == 1 {
        let f = &lin[0];
        let val = f.eval(u0);
        if val >= 0.0 {
            return Some(u0.clone());
        }
        let nn = f.q.norm_squared();
        if nn <= 1e-300 {
            return None;
        }
        return Some(u0 + &f.q * (-val / nn));
    }
    match solve_forms(u0, lin, opts) {
        ConvexOutcome::Optimal { u, .. } => Some(u),
        _ => None,
    }
}

/// Local ascent on `minᵢ fᵢ(u)` along the gradient of the worst margin,
/// projected onto the box. With `stop_at_zero` it returns as soon as the
/// worst margin is non-negative.
fn ascend(
    margins: &Margins<'_>,
    start: DVector<f64>,
    input_box: Option<&InputBox>,
    stop_at_zero: bool,
    opts: &SolverOptions,
) -> (DVector<f64>, f64, usize) {
    let project = |u: DVector<f64>| match input_box {
        Some(b) => b.clamp(&u),
        None => u,
    };
    let mut u = project(start);
    let mut value = margins.worst(&u);
    let mut step = 0.1 * (1.0 + u.norm());
    let mut iterations = 0;
    while iterations < 20 * opts.max_sqp && step > 1e-13 * (1.0 + u.norm()) {
        iterations += 1;
        if stop_at_zero && value >= 0.0 {
            break;
        }
        let values = margins.values(&u);
        let worst = values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        let g = margins.gradient(worst, &u);
        let gn = g.norm();
        if gn <= 1e-300 {
            break;
        }
        let cand = project(&u + &g * (step / gn));
        let cv = margins.worst(&cand);
        if cv > value {
            u = cand;
            value = cv;
            step *= 1.5;
        } else {
            step *= 0.5;
        }
    }
    (u, value, iterations)
}

/// Best worst-margin over the box found by ascent from several starts.
pub(crate) fn max_min_margin(constraints: &[FilterConstraint], input_box: &InputBox, opts: &SolverOptions) -> f64 {
    let margins = Margins::new(constraints, None);
    let center = input_box.center();
    let mut pts = starts(&center, opts.n_starts);
    let half = (input_box.hi() - input_box.lo()) * 0.5;
    // Corners in a deterministic order as extra starts.
    for mask in 0..(1usize << center.len()).min(16) {
        pts.push(DVector::from_fn(center.len(), |i, _| {
            if mask & (1 << i) != 0 {
                center[i] + half[i]
            } else {
                center[i] - half[i]
            }
        }));
    }
    pts.into_iter()
        .map(|p| ascend(&margins, p, Some(input_box), false, opts).1)
        .fold(f64::NEG_INFINITY, f64::max)
}
