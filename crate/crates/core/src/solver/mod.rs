//! Safety-filter projection `min ‖u − u_nom‖²` subject to filter constraints.
//!
//! Backends:
//! * [`project_single`] — one affine or concave-quadratic constraint, exact KKT.
//! * [`solve_convex`] — any number of such constraints, log-barrier interior point.
//! * [`solve_nonconvex`] — general smooth margins, multi-start SQP (local).
//! * [`solve_quantile`] — "p of N" constraints, exact branch and bound.
//! * [`structured`] — exact interval arithmetic when every margin depends on
//!   `u` through one scalar `wᵀu`.

mod ipm;
mod nonconvex;
mod poly;
mod quantile;
mod single;
pub mod structured;

use std::time::Instant;

use nalgebra::DVector;

use crate::conditions::{FilterConstraint, QuantileConstraint};
use crate::error::{check_dim, Error, Result};
use crate::quadratic::QuadForm;

pub use ipm::solve_convex;
pub use nonconvex::solve_nonconvex;
pub use quantile::{enumerate_quantile, solve_quantile};
pub use single::project_single;

/// Axis-aligned bounds on the input.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBox {
    lo: DVector<f64>,
    hi: DVector<f64>,
}

impl InputBox {
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        check_dim("input box", lo.len(), hi.len())?;
        if lo.iter().zip(hi.iter()).any(|(l, h)| !(l <= h)) {
            return Err(Error::param("input box", "needs lo ≤ hi componentwise"));
        }
        Ok(Self { lo, hi })
    }

    /// `‖u‖_∞ ≤ radius`.
    pub fn symmetric(dim: usize, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) {
            return Err(Error::param("radius", "must be non-negative"));
        }
        Self::new(DVector::from_element(dim, -radius), DVector::from_element(dim, radius))
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &DVector<f64> {
        &self.lo
    }

    pub fn hi(&self) -> &DVector<f64> {
        &self.hi
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.iter().chain(self.hi.iter()).all(|v| v.is_finite())
    }

    pub fn contains(&self, u: &DVector<f64>, tol: f64) -> bool {
        (0..self.dim()).all(|i| u[i] >= self.lo[i] - tol && u[i] <= self.hi[i] + tol)
    }

    pub fn clamp(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| u[i].clamp(self.lo[i], self.hi[i]))
    }

    pub fn center(&self) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| {
            match (self.lo[i].is_finite(), self.hi[i].is_finite()) {
                (true, true) => 0.5 * (self.lo[i] + self.hi[i]),
                (true, false) => self.lo[i],
                (false, true) => self.hi[i],
                (false, false) => 0.0,
            }
        })
    }

    /// The box as affine margins `uᵢ − loᵢ ≥ 0`, `hiᵢ − uᵢ ≥ 0` (finite sides only).
    pub fn as_margins(&self) -> Vec<QuadForm> {
        let m = self.dim();
        let mut out = Vec::with_capacity(2 * m);
        for i in 0..m {
            let mut e = DVector::zeros(m);
            e[i] = 1.0;
            if self.lo[i].is_finite() {
                out.push(QuadForm::affine(-self.lo[i], e.clone()));
            }
            if self.hi[i].is_finite() {
                out.push(QuadForm::affine(self.hi[i], -e));
            }
        }
        out
    }
}

/// `min ‖u − u_nom‖²` subject to every constraint (and the optional box).
#[derive(Debug, Clone)]
pub struct FilterProblem {
    pub u_nom: DVector<f64>,
    pub constraints: Vec<FilterConstraint>,
    pub input_box: Option<InputBox>,
}

impl FilterProblem {
    pub fn new(u_nom: DVector<f64>, constraints: Vec<FilterConstraint>) -> Result<Self> {
        Self::with_box(u_nom, constraints, None)
    }

    pub fn with_box(
        u_nom: DVector<f64>,
        constraints: Vec<FilterConstraint>,
        input_box: Option<InputBox>,
    ) -> Result<Self> {
        if constraints.is_empty() {
            return Err(Error::Empty("constraint list"));
        }
        let m = u_nom.len();
        for c in &constraints {
            check_dim("constraint", m, c.dim())?;
            if let FilterConstraint::Quantile(q) = c {
                if q.required == 0 || q.required > q.margins.len() {
                    return Err(Error::param(
                        "required",
                        format!("must lie in 1..={}, got {}", q.margins.len(), q.required),
                    ));
                }
            }
        }
        if let Some(b) = &input_box {
            check_dim("input box", m, b.dim())?;
        }
        crate::system::check_finite("nominal input", &u_nom)?;
        Ok(Self {
            u_nom,
            constraints,
            input_box,
        })
    }

    pub fn dim(&self) -> usize {
        self.u_nom.len()
    }

    /// Minimum margin over all constraints and box sides at `u`.
    pub fn worst_margin(&self, u: &DVector<f64>) -> f64 {
        let mut worst = self
            .constraints
            .iter()
            .map(|c| c.margin(u))
            .fold(f64::INFINITY, f64::min);
        if let Some(b) = &self.input_box {
            for f in b.as_margins() {
                worst = worst.min(f.eval(u));
            }
        }
        worst
    }

    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        (u - &self.u_nom).norm_squared()
    }

    /// Quadratic margins of an all-convex problem, box included.
    pub(crate) fn convex_margins(&self) -> Option<Vec<QuadForm>> {
        let mut out = Vec::with_capacity(self.constraints.len());
        for c in &self.constraints {
            if !c.kind().is_convex() {
                return None;
            }
            out.push(c.as_quadratic()?.clone());
        }
        if let Some(b) = &self.input_box {
            out.extend(b.as_margins());
        }
        Some(out)
    }

    fn quantile(&self) -> Option<&QuantileConstraint> {
        self.constraints.iter().find_map(|c| match c {
            FilterConstraint::Quantile(q) => Some(q),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

impl SolveStatus {
    pub fn label(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::IterationLimit => "iteration_limit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Projection,
    InteriorPoint,
    MultiStartSqp,
    BranchAndBound,
    Enumeration,
    Structured,
}

impl Backend {
    pub fn label(self) -> &'static str {
        match self {
            Backend::Projection => "projection",
            Backend::InteriorPoint => "interior_point",
            Backend::MultiStartSqp => "multistart_sqp",
            Backend::BranchAndBound => "branch_and_bound",
            Backend::Enumeration => "enumeration",
            Backend::Structured => "structured_1d",
        }
    }
}

/// Outcome of a filter solve.
///
/// When `status` is `Infeasible`, `u_star` is the nominal input and
/// `certificate` holds the phase-I value (the best achievable worst margin,
/// negative). `heuristic` marks declarations that come from local search
/// rather than a convex certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterResult {
    pub u_star: DVector<f64>,
    pub status: SolveStatus,
    pub worst_margin: f64,
    /// Seconds.
    pub solve_time: f64,
    pub backend: Backend,
    pub certificate: Option<f64>,
    pub heuristic: bool,
    pub iterations: usize,
}

impl FilterResult {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub(crate) fn optimal(problem: &FilterProblem, u: DVector<f64>, backend: Backend) -> Self {
        Self {
            worst_margin: problem.worst_margin(&u),
            u_star: u,
            status: SolveStatus::Optimal,
            solve_time: 0.0,
            backend,
            certificate: None,
            heuristic: false,
            iterations: 0,
        }
    }

    pub(crate) fn infeasible(problem: &FilterProblem, certificate: f64, backend: Backend) -> Self {
        Self {
            worst_margin: problem.worst_margin(&problem.u_nom),
            u_star: problem.u_nom.clone(),
            status: SolveStatus::Infeasible,
            solve_time: 0.0,
            backend,
            certificate: Some(certificate),
            heuristic: false,
            iterations: 0,
        }
    }

    pub(crate) fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self
    }
}

/// Tolerances and limits shared by the backends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Margins ≥ −tol_feas count as satisfied.
    pub tol_feas: f64,
    /// Interior-point stopping bound on the duality gap.
    pub gap_tol: f64,
    /// Complementarity tolerance for the single-constraint dual search.
    pub dual_tol: f64,
    /// Newton-step cap per interior-point phase.
    pub max_newton: usize,
    /// Starts for the nonconvex solver.
    pub n_starts: usize,
    /// Iteration cap per SQP run.
    pub max_sqp: usize,
    /// Node cap for branch and bound.
    pub max_nodes: usize,
    /// Largest subset count for the enumeration fallback.
    pub enumeration_limit: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_feas: 1e-8,
            gap_tol: 1e-9,
            dual_tol: 1e-10,
            max_newton: 200,
            n_starts: 8,
            max_sqp: 400,
            max_nodes: 200_000,
            enumeration_limit: 10_000,
        }
    }
}

/// Picks a backend from the constraint kinds and solves.
///
/// Quantile constraints must appear alone. Solve time is measured here.
pub fn solve(problem: &FilterProblem, opts: &SolverOptions) -> Result<FilterResult> {
    let start = Instant::now();
    let mut result = dispatch(problem, opts)?;
    result.solve_time = start.elapsed().as_secs_f64();
    Ok(result)
}

fn dispatch(problem: &FilterProblem, opts: &SolverOptions) -> Result<FilterResult> {
    if problem.quantile().is_some() {
        return solve_quantile(problem, opts);
    }
    let all_convex = problem.constraints.iter().all(|c| c.kind().is_convex());
    if all_convex {
        if problem.constraints.len() == 1 && problem.input_box.is_none() {
            let form = problem.constraints[0].as_quadratic().expect("convex kinds are quadratic");
            return project_single(&problem.u_nom, form, opts).map(|r| r.rescore(problem));
        }
        return solve_convex(problem, opts);
    }
    solve_nonconvex(problem, opts)
}

impl FilterResult {
    fn rescore(mut self, problem: &FilterProblem) -> Self {
        self.worst_margin = problem.worst_margin(&self.u_star);
        self
    }
}

/// Solves with the exact 1-D backend when the structure is present,
/// otherwise with [`solve`].
pub fn solve_preferring_structure(
    problem: &FilterProblem,
    opts: &SolverOptions,
) -> Result<FilterResult> {
    let start = Instant::now();
    let mut result = match structured::solve(problem)? {
        Some(r) => r,
        None => dispatch(problem, opts)?,
    };
    result.solve_time = start.elapsed().as_secs_f64();
    Ok(result)
}

/// `sup_{u ∈ box} min_i marginᵢ(u)`; negative means no input in the box
/// satisfies the constraint set.
///
/// Exact for 1-D-structured and convex sets; a multi-start local estimate
/// (a lower bound on the supremum) otherwise.
pub fn feasibility_margin(constraints: &[FilterConstraint], input_box: &InputBox) -> Result<f64> {
    if constraints.is_empty() {
        return Err(Error::Empty("constraint list"));
    }
    if !input_box.is_bounded() {
        return Err(Error::param("input box", "feasibility margin needs finite bounds"));
    }
    for c in constraints {
        check_dim("constraint", input_box.dim(), c.dim())?;
    }
    if let Some(v) = structured::feasibility_margin(constraints, input_box)? {
        return Ok(v);
    }
    let all_convex = constraints.iter().all(|c| c.kind().is_convex());
    if all_convex {
        let forms: Vec<QuadForm> = constraints
            .iter()
            .map(|c| c.as_quadratic().expect("convex kinds are quadratic").clone())
            .collect();
        return ipm::max_min_margin(&forms, input_box, &SolverOptions::default());
    }
    Ok(nonconvex::max_min_margin(constraints, input_box, &SolverOptions::default()))
}
