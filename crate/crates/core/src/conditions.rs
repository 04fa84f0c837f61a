//! Sufficient conditions for the one-step chance constraint
//! `P(Δh(x, u, d) ≥ 0) ≥ 1 − δ`, each turned into an evaluable constraint on
//! `u` at a fixed state.
//!
//! Moment-based builders need a Gaussian disturbance model (closed-form
//! moments); data-based builders work from a [`DisturbanceDataset`].

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::cert;
use crate::error::{check_dim, check_open_unit, Error, Result};
use crate::moments::{delta_h_moment_forms, quantile_rank, DisturbanceDataset, DisturbanceModel};
use crate::quadratic::{Curvature, QuadForm};
use crate::system::{QuadraticBarrier, SafetyModel, StateVec};

/// Parameters shared by the condition builders.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionParams {
    /// Per-step risk, in (0, 1).
    pub delta: f64,
    /// Per-step confidence budget for data-based conditions, in (0, 1).
    pub beta: f64,
    /// Almost-sure upper bound on `Δh`.
    pub b: f64,
    /// Almost-sure lower bound on `Δh` (Hoeffding range).
    pub a: f64,
    /// Curvature bound for the Jensen-gap forms; `None` uses the barrier's.
    pub lambda: Option<f64>,
    /// Hoeffding slack; `None` derives it from `(N, β, a, b)`.
    pub epsilon_h: Option<f64>,
}

impl ConditionParams {
    pub fn new(delta: f64, beta: f64, b: f64) -> Self {
        Self {
            delta,
            beta,
            b,
            a: 0.0,
            lambda: None,
            epsilon_h: None,
        }
    }

    fn check_delta(&self) -> Result<()> {
        check_open_unit("delta", self.delta)
    }

    fn check_b(&self) -> Result<()> {
        if self.b > 0.0 && self.b.is_finite() {
            Ok(())
        } else {
            Err(Error::param("b", format!("must be positive, got {}", self.b)))
        }
    }

    fn markov_threshold(&self) -> f64 {
        self.b * (1.0 - self.delta)
    }
}

/// How the almost-sure upper bound `b` on `Δh` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundPolicy {
    /// `b = sup h`, valid uniformly over the safe set.
    #[default]
    Global,
    /// `b(x) = sup h − α·h(x)`.
    PerState,
}

/// Upper bound `b` on `Δh` at `x` under `policy`.
pub fn upper_bound(model: &SafetyModel, x: &StateVec, policy: BoundPolicy) -> Result<f64> {
    let sup = model.barrier.sup_h().ok_or_else(|| {
        Error::Precondition("barrier is unbounded above; supply b explicitly".into())
    })?;
    Ok(match policy {
        BoundPolicy::Global => sup,
        BoundPolicy::PerState => sup - model.alpha * model.barrier.eval(x)?,
    })
}

/// Hoeffding range `(a, b)` from a truncated Gaussian disturbance.
///
/// The disturbance is truncated to the box `mean ± radius·std` per
/// coordinate; the next-state mean is restricted to the safe set (which the
/// Hoeffding constraint itself enforces). Then
/// `a = sup h − (√sup h + max_e ‖P^{1/2} e‖)² − α·sup h` with `P = −Q`, and
/// `b = sup h`. The bound holds only on the truncated support.
pub fn hoeffding_range_truncated(
    barrier: &QuadraticBarrier,
    alpha: f64,
    dist: &crate::moments::GaussianDisturbance,
    radius: f64,
) -> Result<(f64, f64)> {
    if !barrier.convexity().is_concave() {
        return Err(Error::Precondition(
            "truncated Hoeffding range needs a concave barrier".into(),
        ));
    }
    let sup = barrier
        .sup_h()
        .ok_or_else(|| Error::Precondition("barrier is unbounded above".into()))?;
    if !(radius >= 0.0) {
        return Err(Error::param("radius", "must be non-negative"));
    }
    check_dim("truncation dimension", barrier.dim(), dist.dim())?;
    let p = -barrier.quadratic();
    let std = dist.std_devs();
    let free: Vec<usize> = (0..std.len()).filter(|&i| std[i] > 0.0).collect();
    let mut worst = 0.0_f64;
    for mask in 0..(1usize << free.len()) {
        let mut e = dist.mean().clone();
        for (bit, &i) in free.iter().enumerate() {
            let sign = if mask & (1 << bit) != 0 { 1.0 } else { -1.0 };
            e[i] += sign * radius * std[i];
        }
        worst = worst.max(e.dot(&(&p * &e)).max(0.0).sqrt());
    }
    let reach = sup.max(0.0).sqrt() + worst;
    let a = sup - reach * reach - alpha * sup;
    Ok((a, sup))
}

/// Convexity class of a margin as a function of `u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    Affine,
    /// Concave quadratic margin (convex feasible set).
    ConcaveQuadratic,
    /// Smooth but with no convexity guarantee.
    GeneralSmooth,
    /// At least `required` of a family of margins must be non-negative.
    QuantileOfSet,
}

impl ConstraintKind {
    pub fn is_convex(self) -> bool {
        matches!(self, ConstraintKind::Affine | ConstraintKind::ConcaveQuadratic)
    }

    fn of_form(form: &QuadForm) -> Self {
        match form.curvature() {
            Curvature::Affine => ConstraintKind::Affine,
            Curvature::Concave => ConstraintKind::ConcaveQuadratic,
            Curvature::Convex | Curvature::Indefinite => ConstraintKind::GeneralSmooth,
        }
    }
}

/// User-supplied margin for barriers outside the quadratic family.
#[derive(Clone)]
pub struct CustomMargin {
    pub dim: usize,
    pub f: Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>,
}

impl fmt::Debug for CustomMargin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomMargin(dim={})", self.dim)
    }
}

/// A scalar margin function of `u`; the constraint holds iff it is ≥ 0.
#[derive(Debug, Clone)]
pub enum Margin {
    Quadratic(QuadForm),
    /// `mean(u) − scale·√max(var(u), 0)`.
    MeanDeviation {
        mean: QuadForm,
        var: QuadForm,
        scale: f64,
    },
    Custom(CustomMargin),
}

const FD_STEP: f64 = 1e-7;

impl Margin {
    pub fn dim(&self) -> usize {
        match self {
            Margin::Quadratic(f) => f.dim(),
            Margin::MeanDeviation { mean, .. } => mean.dim(),
            Margin::Custom(c) => c.dim,
        }
    }

    pub fn eval(&self, u: &DVector<f64>) -> f64 {
        match self {
            Margin::Quadratic(f) => f.eval(u),
            Margin::MeanDeviation { mean, var, scale } => {
                mean.eval(u) - scale * var.eval(u).max(0.0).sqrt()
            }
            Margin::Custom(c) => (c.f)(u),
        }
    }

    pub fn gradient(&self, u: &DVector<f64>) -> DVector<f64> {
        match self {
            Margin::Quadratic(f) => f.gradient(u),
            Margin::MeanDeviation { mean, var, scale } => {
                let v = var.eval(u);
                let g = mean.gradient(u);
                if v <= 1e-300 {
                    g
                } else {
                    g - var.gradient(u) * (scale / (2.0 * v.sqrt()))
                }
            }
            Margin::Custom(c) => {
                let mut g = DVector::zeros(c.dim);
                let mut probe = u.clone();
                for i in 0..c.dim {
                    let h = FD_STEP * (1.0 + u[i].abs());
                    probe[i] = u[i] + h;
                    let fp = (c.f)(&probe);
                    probe[i] = u[i] - h;
                    let fm = (c.f)(&probe);
                    probe[i] = u[i];
                    g[i] = (fp - fm) / (2.0 * h);
                }
                g
            }
        }
    }
}

/// "At least `required` of the margins are non-negative", i.e. the
/// `required`-th smallest residual `rᵢ = −marginᵢ` is ≤ 0.
#[derive(Debug, Clone)]
pub struct QuantileConstraint {
    pub margins: Vec<QuadForm>,
    pub required: usize,
}

impl QuantileConstraint {
    /// Residuals `rᵢ(u) = −marginᵢ(u)`.
    pub fn residuals(&self, u: &DVector<f64>) -> Vec<f64> {
        self.margins.iter().map(|m| -m.eval(u)).collect()
    }

    /// The `required`-th largest margin. Non-negative iff the constraint holds.
    pub fn margin(&self, u: &DVector<f64>) -> f64 {
        let mut values: Vec<f64> = self.margins.iter().map(|m| m.eval(u)).collect();
        values.sort_by(|a, b| b.total_cmp(a));
        values[self.required - 1]
    }

    pub fn satisfied_count(&self, u: &DVector<f64>, tol: f64) -> usize {
        self.margins.iter().filter(|m| m.eval(u) >= -tol).count()
    }
}

/// One constraint of a safety-filter problem.
#[derive(Debug, Clone)]
pub enum FilterConstraint {
    Single { margin: Margin, kind: ConstraintKind },
    Quantile(QuantileConstraint),
}

impl FilterConstraint {
    /// Wraps a quadratic margin, tagging it from its curvature.
    pub fn quadratic(form: QuadForm) -> Self {
        let kind = ConstraintKind::of_form(&form);
        FilterConstraint::Single {
            margin: Margin::Quadratic(form),
            kind,
        }
    }

    /// `aᵀu ≥ c`
    pub fn halfspace(a: DVector<f64>, c: f64) -> Self {
        FilterConstraint::quadratic(QuadForm::affine(-c, a))
    }

    pub fn custom(dim: usize, f: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static) -> Self {
        FilterConstraint::Single {
            margin: Margin::Custom(CustomMargin {
                dim,
                f: Arc::new(f),
            }),
            kind: ConstraintKind::GeneralSmooth,
        }
    }

    pub fn kind(&self) -> ConstraintKind {
        match self {
            FilterConstraint::Single { kind, .. } => *kind,
            FilterConstraint::Quantile(_) => ConstraintKind::QuantileOfSet,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FilterConstraint::Single { margin, .. } => margin.dim(),
            FilterConstraint::Quantile(q) => q.margins[0].dim(),
        }
    }

    pub fn margin(&self, u: &DVector<f64>) -> f64 {
        match self {
            FilterConstraint::Single { margin, .. } => margin.eval(u),
            FilterConstraint::Quantile(q) => q.margin(u),
        }
    }

    pub fn is_satisfied(&self, u: &DVector<f64>) -> bool {
        self.margin(u) >= 0.0
    }

    /// The quadratic form behind an affine or concave-quadratic constraint.
    pub fn as_quadratic(&self) -> Option<&QuadForm> {
        match self {
            FilterConstraint::Single {
                margin: Margin::Quadratic(f),
                ..
            } => Some(f),
            _ => None,
        }
    }
}

fn gaussian_moments(dist: &DisturbanceModel) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let g = dist.as_gaussian()?;
    Ok((g.mean().clone(), g.cov().clone()))
}

fn check_state(model: &SafetyModel, x: &StateVec) -> Result<()> {
    check_dim("condition state", model.state_dim(), x.len())
}

/// `E[Δh(x, u, d)] ≥ b(1 − δ)` with the exact Gaussian mean.
pub fn build_markov_expectation(
    model: &SafetyModel,
    x: &StateVec,
    params: &ConditionParams,
    dist: &DisturbanceModel,
) -> Result<FilterConstraint> {
    params.check_delta()?;
    params.check_b()?;
    check_state(model, x)?;
    let (mean, _) = delta_h_moment_forms(model, x, dist)?;
    Ok(FilterConstraint::quadratic(
        mean.shifted(-params.markov_threshold()),
    ))
}

/// `h(E[F]) − αh(x) ≥ b(1 − δ)`, valid for convex `h`.
pub fn build_markov_jensen_convex(
    model: &SafetyModel,
    x: &StateVec,
    params: &ConditionParams,
    dist: &DisturbanceModel,
) -> Result<FilterConstraint> {
    params.check_delta()?;
    params.check_b()?;
    check_state(model, x)?;
    if !model.barrier.convexity().is_convex() {
        return Err(Error::Precondition(
            "Jensen (convex) form requires a convex barrier".into(),
        ));
    }
    let (mean, _) = gaussian_moments(dist)?;
    let form = model.delta_h_form(x, &mean)?;
    Ok(FilterConstraint::quadratic(
        form.shifted(-params.markov_threshold()),
    ))
}

fn jensen_lambda(model: &SafetyModel, params: &ConditionParams) -> Result<f64> {
    let needed = model.barrier.lambda();
    let lambda = params.lambda.unwrap_or(needed);
    if !(lambda >= needed * (1.0 - 1e-12)) {
        return Err(Error::Precondition(format!(
            "lambda = {lambda} is below the barrier curvature bound {needed}"
        )));
    }
    Ok(lambda)
}

/// Jensen-gap surrogate `h(E[F]) − αh(x) − (λ/2)·Tr(Cov F)` as a quadratic in `u`.
fn jensen_gap_form(
    model: &SafetyModel,
    x: &StateVec,
    params: &ConditionParams,
    dist: &DisturbanceModel,
) -> Result<QuadForm> {
    if !model.barrier.convexity().is_concave() {
        return Err(Error::Precondition(
            "Jensen-gap form requires a concave barrier".into(),
        ));
    }
    let lambda = jensen_lambda(model, params)?;
    let (mean, cov) = gaussian_moments(dist)?;
    Ok(model
        .delta_h_form(x, &mean)?
        .shifted(-0.5 * lambda * cov.trace()))
}

/// `h(E[F]) − αh(x) − (λ/2)·Tr(Cov F) ≥ b(1 − δ)`, valid for concave `h`
/// with `‖∇²h‖ ≤ λ`. Concave quadratic in `u` for control-affine dynamics.
pub fn build_markov_jensen_gap(
    model: &SafetyModel,
    x: &StateVec,
    params: &ConditionParams,
    dist: &DisturbanceModel,
) -> Result<FilterConstraint> {
    params.check_delta()?;
    params.check_b()?;
    check_state(model, x)?;
    let form = jensen_gap_form(model, x, params, dist)?;
    Ok(FilterConstraint::quadratic(
        form.shifted(-params.markov_threshold()),
    ))
}

fn cantelli_from(mean: QuadForm, var: QuadForm, delta: f64) -> FilterConstraint {
    let scale = ((1.0 - delta) / delta).sqrt();
    let var_is_constant = var.q.iter().chain(var.p.iter()).all(|v| *v == 0.0);
    if var_is_constant {
        let std = var.c.max(0.0).sqrt();
        return FilterConstraint::quadratic(mean.shifted(-scale * std));
    }
    if var.c < -1e-12 {
        log::warn!("negative variance constant {} clamped to zero", var.c);
    }
    FilterConstraint::Single {
        margin: Margin::MeanDeviation { mean, var, scale },
        kind: ConstraintKind::GeneralSmooth,
    }
}

/// `E[Δh] − √(Var(Δh)·(1−δ)/δ) ≥ 0`.
pub fn build_cantelli(
    model: &SafetyModel,
    x: &StateVec,
    params: &ConditionParams,
    dist: &DisturbanceModel,
) -> Result<FilterConstraint> {
    params.check_delta()?;
    check_state(model, x)?;
    let (mean, var) = delta_h_moment_forms(model, x, dist)?;
    Ok(cantelli_from(mean, var, params.delta))
}

/// Which Jensen surrogate replaces the mean in the Cantelli condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CantelliVariant {
    /// `h(E[F]) − αh(x)`, for convex `h`.
    Convex,
    /// `h(E[F]) − αh(x) − (λ/2)·Tr(Cov F)`, for concave `h`.
    ConcaveGap,
}

pub fn build_cantelli_jensen(
    model: &SafetyModel,
    x: &StateVec,
    params: &ConditionParams,
    dist: &DisturbanceModel,
    variant: CantelliVariant,
) -> Result<FilterConstraint> {
    params.check_delta()?;
    check_state(model, x)?;
    let (_, var) = delta_h_moment_forms(model, x, dist)?;
    let surrogate = match variant {
        CantelliVariant::Convex => {
            if !model.barrier.convexity().is_convex() {
                return Err(Error::Precondition(
                    "convex Cantelli variant requires a convex barrier".into(),
                ));
            }
            let (mean, _) = gaussian_moments(dist)?;
            model.delta_h_form(x, &mean)?
        }
        CantelliVariant::ConcaveGap => jensen_gap_form(model, x, params, dist)?,
    };
    Ok(cantelli_from(surrogate, var, params.delta))
}

/// Sample-average `Δh` over the dataset as a quadratic in `u`:
/// `h(a + d̄ + Bu) + Tr(QS) − d̄ᵀQd̄ − αh(x)` with `S` the second moment.
pub fn sample_average_form(
    model: &SafetyModel,
    x: &StateVec,
    dataset: &DisturbanceDataset,
) -> Result<QuadForm> {
    check_dim("dataset dimension", model.dynamics.disturbance_dim(), dataset.dim())?;
    let q = model.barrier.quadratic();
    let mean = dataset.sample_mean();
    let correction = (q * dataset.second_moment()).trace() - mean.dot(&(q * mean));
    Ok(model.delta_h_form(x, mean)?.shifted(correction))
}

/// `(1/N) Σ Δh(x, u, dᵢ) ≥ ε + b(1 − δ)`.
///
/// `params.epsilon_h` defaults to the Hoeffding slack for `(N, β, a, b)`; a
/// smaller explicit value is rejected.
pub fn build_hoeffding(
    model: &SafetyModel,
    x: &StateVec,
    params: &ConditionParams,
    dataset: &DisturbanceDataset,
) -> Result<FilterConstraint> {
    params.check_delta()?;
    params.check_b()?;
    check_state(model, x)?;
    if !(params.a < params.b) {
        return Err(Error::param("a", format!("must be below b = {}", params.b)));
    }
    let required = cert::hoeffding_epsilon(dataset.len(), params.beta, params.a, params.b)?;
    let epsilon = match params.epsilon_h {
        None => required,
        Some(e) if e >= 0.0 && e >= required * (1.0 - 1e-12) => e,
        Some(e) => {
            return Err(Error::param(
                "epsilon_h",
                format!("{e} is below the Hoeffding slack {required} for N={}", dataset.len()),
            ))
        }
    };
    let form = sample_average_form(model, x, dataset)?;
    Ok(FilterConstraint::quadratic(
        form.shifted(-epsilon - params.markov_threshold()),
    ))
}

fn per_sample_forms(
    model: &SafetyModel,
    x: &StateVec,
    dataset: &DisturbanceDataset,
) -> Result<Vec<QuadForm>> {
    check_dim("dataset dimension", model.dynamics.disturbance_dim(), dataset.dim())?;
    let first = model.delta_h_form(x, &dataset.samples()[0])?;
    if !matches!(first.curvature(), Curvature::Affine | Curvature::Concave) {
        return Err(Error::Precondition(
            "u ↦ −Δh(x, u, d) must be convex for the data-based conditions".into(),
        ));
    }
    // Only the constant and linear parts depend on the sample.
    let b = model.dynamics.input_map(x);
    let drift = model.dynamics.drift(x);
    let h = &model.barrier;
    let shift = -model.alpha * h.eval(x)?;
    let bt = b.transpose();
    let q2 = h.quadratic() * 2.0;
    Ok(dataset
        .samples()
        .iter()
        .map(|d| {
            let base = &drift + d;
            let grad = h.linear() + &q2 * &base;
            QuadForm {
                c: h.eval_unchecked(&base) + shift,
                q: &bt * grad,
                p: first.p.clone(),
            }
        })
        .collect())
}

/// `Δh(x, u, dᵢ) ≥ 0` for every sample.
pub fn build_scenario(
    model: &SafetyModel,
    x: &StateVec,
    params: &ConditionParams,
    dataset: &DisturbanceDataset,
) -> Result<Vec<FilterConstraint>> {
    params.check_delta()?;
    check_state(model, x)?;
    let forms = per_sample_forms(model, x, dataset)?;
    // The samples only shift the constant and linear parts.
    let kind = ConstraintKind::of_form(&forms[0]);
    Ok(forms
        .into_iter()
        .map(|form| FilterConstraint::Single {
            margin: Margin::Quadratic(form),
            kind,
        })
        .collect())
}

/// `Quantile_{level}(R₁, …, R_N, ∞) ≤ 0` with `Rᵢ = −Δh(x, u, dᵢ)` and
/// `level = 1 − δ + √(ln(1/β)/(2N))`: at least `⌈(N+1)·level⌉` residuals
/// must be non-positive.
pub fn build_conformal(
    model: &SafetyModel,
    x: &StateVec,
    params: &ConditionParams,
    dataset: &DisturbanceDataset,
) -> Result<FilterConstraint> {
    params.check_delta()?;
    check_open_unit("beta", params.beta)?;
    check_state(model, x)?;
    let n = dataset.len();
    let level = cert::conformal_level(params.delta, params.beta, n)?;
    let required = quantile_rank(n, level);
    if required > n {
        return Err(Error::InsufficientSamples(format!(
            "quantile rank {required} exceeds N = {n}; the constraint is unsatisfiable"
        )));
    }
    Ok(FilterConstraint::Quantile(QuantileConstraint {
        margins: per_sample_forms(model, x, dataset)?,
        required,
    }))
}
