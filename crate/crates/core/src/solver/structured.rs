//! Exact backend for margins that depend on `u` only through `s = wᵀu`.
//!
//! With a quadratic barrier of rank-one curvature and additive disturbance
//! (the corridor), every margin is `c + βs + κs²` (or a mean/deviation pair of
//! such), so feasible sets in `s` are finite unions of intervals computed from
//! polynomial roots. The projection of `u_nom` then moves along `w` only.

use nalgebra::DVector;

use super::poly::{self, IntervalSet};
use super::{Backend, FilterProblem, FilterResult, InputBox};
use crate::conditions::{FilterConstraint, Margin};
use crate::error::Result;
use crate::quadratic::QuadForm;

const DETECT_TOL: f64 = 1e-12;

/// A margin as a function of the scalar `s`.
#[derive(Debug, Clone)]
enum ScalarMargin {
    /// Coefficients `[c, β, κ]`.
    Poly([f64; 3]),
    /// `A(s) − k·√max(V(s), 0)`.
    MeanDeviation { mean: [f64; 3], var: [f64; 3], k: f64 },
}

impl ScalarMargin {
    fn eval(&self, s: f64) -> f64 {
        match self {
            ScalarMargin::Poly(c) => poly::eval(c, s),
            ScalarMargin::MeanDeviation { mean, var, k } => {
                poly::eval(mean, s) - k * poly::eval(var, s).max(0.0).sqrt()
            }
        }
    }

    /// `{s : margin(s) ≥ t}`.
    fn superlevel(&self, t: f64) -> IntervalSet {
        match self {
            ScalarMargin::Poly(c) => poly::nonneg_set(&[c[0] - t, c[1], c[2]]),
            ScalarMargin::MeanDeviation { mean, var, k } => {
                let a = [mean[0] - t, mean[1], mean[2]];
                let sq = poly::mul(&a, &a);
                let quartic: Vec<f64> = (0..5)
                    .map(|i| sq[i] - k * k * var.get(i).copied().unwrap_or(0.0))
                    .collect();
                poly::intersect(&poly::nonneg_set(&a), &poly::nonneg_set(&quartic))
            }
        }
    }
}

#[derive(Debug, Clone)]
enum ScalarConstraint {
    Single(ScalarMargin),
    Quantile { margins: Vec<ScalarMargin>, required: usize },
}

impl ScalarConstraint {
    fn feasible_set(&self, t: f64) -> IntervalSet {
        match self {
            ScalarConstraint::Single(m) => m.superlevel(t),
            ScalarConstraint::Quantile { margins, required } => {
                let sets: Vec<IntervalSet> = margins.iter().map(|m| m.superlevel(t)).collect();
                poly::at_least(&sets, *required)
            }
        }
    }

    fn value(&self, s: f64) -> f64 {
        match self {
            ScalarConstraint::Single(m) => m.eval(s),
            ScalarConstraint::Quantile { margins, required } => {
                let mut v: Vec<f64> = margins.iter().map(|m| m.eval(s)).collect();
                v.sort_by(|a, b| b.total_cmp(a));
                v[required - 1]
            }
        }
    }
}

/// The reduction of a constraint set to the scalar `s = wᵀu`.
#[derive(Debug, Clone)]
pub struct Reduction {
    pub direction: DVector<f64>,
    constraints: Vec<ScalarConstraint>,
}

fn forms_of(c: &FilterConstraint) -> Option<Vec<&QuadForm>> {
    match c {
        FilterConstraint::Single { margin, .. } => match margin {
            Margin::Quadratic(f) => Some(vec![f]),
            Margin::MeanDeviation { mean, var, .. } => Some(vec![mean, var]),
            Margin::Custom(_) => None,
        },
        FilterConstraint::Quantile(q) => Some(q.margins.iter().collect()),
    }
}

fn candidate_direction(forms: &[&QuadForm]) -> Option<DVector<f64>> {
    let m = forms.first()?.dim();
    for f in forms {
        let pmax = f.p.abs().max();
        if pmax > 0.0 {
            let (j, _) = (0..m)
                .map(|j| (j, f.p.column(j).norm()))
                .max_by(|a, b| a.1.total_cmp(&b.1))?;
            let col = f.p.column(j).into_owned();
            return Some(&col / col.norm());
        }
    }
    for f in forms {
        let n = f.q.norm();
        if n > 0.0 {
            return Some(&f.q / n);
        }
    }
    let mut e = DVector::zeros(m);
    if m > 0 {
        e[0] = 1.0;
    }
    Some(e)
}

fn reduce_form(f: &QuadForm, w: &DVector<f64>) -> Option<[f64; 3]> {
    let beta = w.dot(&f.q);
    let kappa = w.dot(&(&f.p * w));
    let q_res = (&f.q - w * beta).amax();
    let p_res = (&f.p - (w * w.transpose()) * kappa).amax();
    let q_ok = q_res <= DETECT_TOL * (1.0 + f.q.amax());
    let p_ok = p_res <= DETECT_TOL * (1.0 + f.p.amax());
    (q_ok && p_ok).then_some([f.c, beta, kappa])
}

/// Detects the one-dimensional structure; `None` when absent.
pub fn reduce(constraints: &[FilterConstraint]) -> Option<Reduction> {
    let mut all: Vec<&QuadForm> = Vec::new();
    for c in constraints {
        all.extend(forms_of(c)?);
    }
    let w = candidate_direction(&all)?;
    let mut out = Vec::with_capacity(constraints.len());
    for c in constraints {
        let sc = match c {
            FilterConstraint::Single { margin, .. } => match margin {
                Margin::Quadratic(f) => ScalarConstraint::Single(ScalarMargin::Poly(reduce_form(f, &w)?)),
                Margin::MeanDeviation { mean, var, scale } => {
                    ScalarConstraint::Single(ScalarMargin::MeanDeviation {
                        mean: reduce_form(mean, &w)?,
                        var: reduce_form(var, &w)?,
                        k: *scale,
                    })
                }
                Margin::Custom(_) => return None,
            },
            FilterConstraint::Quantile(q) => ScalarConstraint::Quantile {
                margins: q
                    .margins
                    .iter()
                    .map(|f| reduce_form(f, &w).map(ScalarMargin::Poly))
                    .collect::<Option<Vec<_>>>()?,
                required: q.required,
            },
        };
        out.push(sc);
    }
    Some(Reduction {
        direction: w,
        constraints: out,
    })
}

impl Reduction {
    /// Set of `s` where every constraint's margin is at least `t`.
    pub fn feasible_set(&self, t: f64) -> IntervalSet {
        let mut set = vec![(f64::NEG_INFINITY, f64::INFINITY)];
        for c in &self.constraints {
            set = poly::intersect(&set, &c.feasible_set(t));
            if set.is_empty() {
                break;
            }
        }
        set
    }

    /// Worst constraint value at `s`.
    pub fn value(&self, s: f64) -> f64 {
        self.constraints.iter().map(|c| c.value(s)).fold(f64::INFINITY, f64::min)
    }

    /// `sup_{s ∈ [lo, hi]} value(s)` by bisection on the level `t`.
    pub fn max_value(&self, lo: f64, hi: f64) -> f64 {
        let range = vec![(lo, hi)];
        let start = if lo.is_finite() {
            lo
        } else if hi.is_finite() {
            hi
        } else {
            0.0
        };
        let mut t_lo = self.value(start);
        if !t_lo.is_finite() {
            return t_lo;
        }
        let nonempty = |t: f64| !poly::intersect(&range, &self.feasible_set(t)).is_empty();
        let mut step = t_lo.abs().max(1e-3);
        let mut t_hi = t_lo + step;
        let mut guard = 0;
        while nonempty(t_hi) {
            t_lo = t_hi;
            step *= 2.0;
            t_hi = t_lo + step;
            guard += 1;
            if guard > 200 {
                return f64::INFINITY;
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (t_lo + t_hi);
            if mid <= t_lo || mid >= t_hi {
                break;
            }
            if nonempty(mid) {
                t_lo = mid;
            } else {
                t_hi = mid;
            }
        }
        t_lo
    }
}

/// Range of `wᵀu` over the box.
fn s_range(w: &DVector<f64>, b: &InputBox) -> (f64, f64) {
    let mut lo = 0.0;
    let mut hi = 0.0;
    for i in 0..w.len() {
        let (x, y) = (w[i] * b.lo()[i], w[i] * b.hi()[i]);
        // 0·∞ would be NaN; a zero weight contributes nothing.
        if w[i] != 0.0 {
            lo += x.min(y);
            hi += x.max(y);
        }
    }
    (lo, hi)
}

/// Exact projection when the structure is present; `None` otherwise (or when
/// a box is present and the unconstrained-along-`w` answer leaves it).
pub fn solve(problem: &FilterProblem) -> Result<Option<FilterResult>> {
    let Some(red) = reduce(&problem.constraints) else {
        return Ok(None);
    };
    let w = &red.direction;
    let s0 = w.dot(&problem.u_nom);
    let set = red.feasible_set(0.0);
    let result = match poly::closest(&set, s0) {
        Some(s) => {
            let u = &problem.u_nom + w * (s - s0);
            FilterResult::optimal(problem, u, Backend::Structured)
        }
        None => {
            let cert = red.max_value(f64::NEG_INFINITY, f64::INFINITY);
            FilterResult::infeasible(problem, cert, Backend::Structured)
        }
    };
    if let Some(b) = &problem.input_box {
        if !b.contains(&result.u_star, 0.0) || result.status != super::SolveStatus::Optimal {
            return Ok(None);
        }
    }
    Ok(Some(result))
}

/// Exact `sup_{u ∈ box} min_i marginᵢ(u)` when the structure is present.
pub fn feasibility_margin(constraints: &[FilterConstraint], input_box: &InputBox) -> Result<Option<f64>> {
    let Some(red) = reduce(constraints) else {
        return Ok(None);
    };
    let (lo, hi) = s_range(&red.direction, input_box);
    Ok(Some(red.max_value(lo, hi)))
}
