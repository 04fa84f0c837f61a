//! Exact solver for "at least `p` of `N` margins non-negative".
//!
//! Depth-first branch and bound: a node fixes a set of enforced margins and a
//! set of margins allowed to fail (at most `N − p`). Its relaxation drops the
//! undecided margins, so its optimum is a lower bound for the subtree; if that
//! optimum already satisfies `p` margins it solves the subtree. Otherwise the
//! most violated undecided margin is branched on (enforce first, then relax).

use nalgebra::DVector;

use super::ipm::{solve_forms, ConvexOutcome};
use super::single::project_single;
use super::{Backend, FilterProblem, FilterResult, SolveStatus, SolverOptions};
use crate::conditions::{FilterConstraint, QuantileConstraint};
use crate::error::{Error, Result};
use crate::quadratic::QuadForm;

const TIE_TOL: f64 = 1e-10;

struct Setup<'a> {
    u0: &'a DVector<f64>,
    quantile: &'a QuantileConstraint,
    box_forms: Vec<QuadForm>,
    opts: &'a SolverOptions,
}

fn setup<'a>(problem: &'a FilterProblem, opts: &'a SolverOptions) -> Result<Setup<'a>> {
    let quantile = match problem.constraints.as_slice() {
        [FilterConstraint::Quantile(q)] => q,
        _ => {
            return Err(Error::Precondition(
                "solve_quantile expects exactly one quantile constraint".into(),
            ))
        }
    };
    // Margins built from samples share one Hessian; classify each distinct one once.
    let mut checked: Option<&QuadForm> = None;
    let mut convex = true;
    for f in &quantile.margins {
        if checked.is_some_and(|c| c.p == f.p) {
            continue;
        }
        convex &= matches!(
            f.curvature(),
            crate::quadratic::Curvature::Affine | crate::quadratic::Curvature::Concave
        );
        checked = Some(f);
    }
    if !convex {
        return Err(Error::Precondition(
            "quantile residuals must be convex (margins concave)".into(),
        ));
    }
    Ok(Setup {
        u0: &problem.u_nom,
        quantile,
        box_forms: problem.input_box.as_ref().map(|b| b.as_margins()).unwrap_or_default(),
        opts,
    })
}

enum NodeSolve {
    Feasible(DVector<f64>),
    Infeasible(f64),
    Limit,
}

impl Setup<'_> {
    fn solve_enforced(&self, enforced: &[usize]) -> NodeSolve {
        if enforced.is_empty() && self.box_forms.is_empty() {
            return NodeSolve::Feasible(self.u0.clone());
        }
        if enforced.len() == 1 && self.box_forms.is_empty() {
            let f = &self.quantile.margins[enforced[0]];
            return match project_single(self.u0, f, self.opts) {
                Ok(r) if r.status == SolveStatus::Optimal => NodeSolve::Feasible(r.u_star),
                Ok(r) => NodeSolve::Infeasible(r.certificate.unwrap_or(f64::NEG_INFINITY)),
                Err(_) => NodeSolve::Limit,
            };
        }
        let forms: Vec<QuadForm> = enforced
            .iter()
            .map(|&i| self.quantile.margins[i].clone())
            .chain(self.box_forms.iter().cloned())
            .collect();
        match solve_forms(self.u0, &forms, self.opts) {
            ConvexOutcome::Optimal { u, .. } => NodeSolve::Feasible(u),
            ConvexOutcome::Infeasible { certificate, .. } => NodeSolve::Infeasible(certificate),
            ConvexOutcome::IterationLimit { .. } => NodeSolve::Limit,
        }
    }

    fn satisfied(&self, u: &DVector<f64>) -> Vec<usize> {
        let tol = self.opts.tol_feas;
        (0..self.quantile.margins.len())
            .filter(|&i| self.quantile.margins[i].eval(u) >= -tol)
            .collect()
    }

    fn objective(&self, u: &DVector<f64>) -> f64 {
        (u - self.u0).norm_squared()
    }
}

/// Incumbent with deterministic tie-breaking on the satisfied index set.
#[derive(Default)]
struct Incumbent {
    best: Option<(f64, Vec<usize>, DVector<f64>)>,
}

impl Incumbent {
    fn value(&self) -> f64 {
        self.best.as_ref().map_or(f64::INFINITY, |b| b.0)
    }

    fn offer(&mut self, obj: f64, sat: Vec<usize>, u: DVector<f64>) {
        let replace = match &self.best {
            None => true,
            Some((b, s, _)) => obj < b - TIE_TOL || (obj <= b + TIE_TOL && sat < *s),
        };
        if replace {
            self.best = Some((obj, sat, u));
        }
    }
}

pub fn solve_quantile(problem: &FilterProblem, opts: &SolverOptions) -> Result<FilterResult> {
    let s = setup(problem, opts)?;
    let n = s.quantile.margins.len();
    let p = s.quantile.required;
    let k = n - p;

    let mut inc = Incumbent::default();
    let mut nodes = 0usize;
    let mut best_infeasible = f64::NEG_INFINITY;
    let mut limited = false;
    // Node: (enforced, relaxed, relaxation optimum if inherited from the parent)
    type Node = (Vec<usize>, Vec<usize>, Option<DVector<f64>>);
    let mut stack: Vec<Node> = vec![(Vec::new(), Vec::new(), None)];
    while let Some((enforced, relaxed, cached)) = stack.pop() {
        nodes += 1;
        if nodes > opts.max_nodes {
            limited = true;
            break;
        }
        let solved = match cached {
            Some(u) => NodeSolve::Feasible(u),
            None => s.solve_enforced(&enforced),
        };
        let u = match solved {
            NodeSolve::Feasible(u) => u,
            NodeSolve::Infeasible(c) => {
                best_infeasible = best_infeasible.max(c);
                continue;
            }
            NodeSolve::Limit => {
                limited = true;
                continue;
            }
        };
        let obj = s.objective(&u);
        if obj > inc.value() + TIE_TOL {
            continue;
        }
        let sat = s.satisfied(&u);
        if sat.len() >= p {
            inc.offer(obj, sat, u);
            continue;
        }
        let mut decided = vec![false; n];
        for &i in enforced.iter().chain(&relaxed) {
            decided[i] = true;
        }
        let branch = (0..n)
            .filter(|&i| !decided[i])
            .map(|i| (i, s.quantile.margins[i].eval(&u)))
            .filter(|&(_, v)| v < -opts.tol_feas)
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .map(|(i, _)| i);
        let Some(i) = branch else { continue };
        let mut enf = enforced.clone();
        enf.push(i);
        enf.sort_unstable();
        if relaxed.len() < k {
            // Relaxing `i` keeps the same relaxation, so its optimum is reused.
            let mut rel = relaxed.clone();
            rel.push(i);
            stack.push((enforced, rel, Some(u)));
        }
        stack.push((enf, relaxed, None));
    }

    if limited && binomial_at_most(n, k, opts.enumeration_limit) {
        return enumerate_quantile(problem, opts);
    }
    Ok(match inc.best {
        Some((_, _, u)) => {
            let mut r = FilterResult::optimal(problem, u, Backend::BranchAndBound).with_iterations(nodes);
            if limited {
                r.status = SolveStatus::IterationLimit;
            }
            r
        }
        None if limited => {
            let mut r = FilterResult::infeasible(problem, best_infeasible, Backend::BranchAndBound)
                .with_iterations(nodes);
            r.status = SolveStatus::IterationLimit;
            r
        }
        None => FilterResult::infeasible(problem, best_infeasible, Backend::BranchAndBound)
            .with_iterations(nodes),
    })
}

fn binomial_at_most(n: usize, k: usize, limit: usize) -> bool {
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
        if c > limit as u128 {
            return false;
        }
    }
    true
}

/// Reference solver: solves every size-`p` enforced subset.
///
/// Errors when the subset count exceeds `opts.enumeration_limit`.
pub fn enumerate_quantile(problem: &FilterProblem, opts: &SolverOptions) -> Result<FilterResult> {
    let s = setup(problem, opts)?;
    let n = s.quantile.margins.len();
    let p = s.quantile.required;
    if !binomial_at_most(n, n - p, opts.enumeration_limit) {
        return Err(Error::Precondition(format!(
            "C({n}, {p}) exceeds the enumeration limit {}",
            opts.enumeration_limit
        )));
    }
    let mut inc = Incumbent::default();
    let mut best_infeasible = f64::NEG_INFINITY;
    let mut count = 0;
    let mut subset: Vec<usize> = (0..p).collect();
    loop {
        count += 1;
        match s.solve_enforced(&subset) {
            NodeSolve::Feasible(u) => {
                let sat = s.satisfied(&u);
                if sat.len() >= p {
                    inc.offer(s.objective(&u), sat, u);
                }
            }
            NodeSolve::Infeasible(c) => best_infeasible = best_infeasible.max(c),
            NodeSolve::Limit => {}
        }
        if !next_combination(&mut subset, n) {
            break;
        }
    }
    Ok(match inc.best {
        Some((_, _, u)) => FilterResult::optimal(problem, u, Backend::Enumeration).with_iterations(count),
        None => FilterResult::infeasible(problem, best_infeasible, Backend::Enumeration).with_iterations(count),
    })
}

/// Advances a sorted `k`-subset of `0..n` in lexicographic order.
fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}
