//! States, control-affine dynamics with additive disturbance, quadratic
//! barrier functions and the barrier increment `Δh`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_dim, Error, Result};
use crate::quadratic::QuadForm;

/// State `x ∈ ℝⁿ`. The unicycle uses `[x, y, θ]`.
pub type StateVec = DVector<f64>;
/// Control input `u ∈ ℝᵐ`. The unicycle uses body velocities `[v_x, v_y, ω]`.
pub type ControlVec = DVector<f64>;
/// Additive disturbance `d ∈ ℝⁿ`.
pub type DisturbanceVec = DVector<f64>;

pub(crate) fn check_finite(context: &'static str, v: &DVector<f64>) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context))
    }
}

/// One-step map `F(x, u, d) = a(x) + B(x)u + d`.
///
/// Affine in `u` for every fixed `x`; the disturbance enters additively in
/// state coordinates.
pub trait ControlAffine: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    /// `a(x)`
    fn drift(&self, x: &StateVec) -> StateVec;
    /// `B(x)`, an `n × m` matrix.
    fn input_map(&self, x: &StateVec) -> DMatrix<f64>;

    fn disturbance_dim(&self) -> usize {
        self.state_dim()
    }
}

/// Planar unicycle with body-frame velocity inputs:
/// `x⁺ = x + Δt·R(θ)·u + d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Unicycle {
    pub dt: f64,
}

impl Unicycle {
    pub fn new(dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::param("dt", format!("must be positive, got {dt}")));
        }
        Ok(Self { dt })
    }
}

impl ControlAffine for Unicycle {
    fn state_dim(&self) -> usize {
        3
    }

    fn input_dim(&self) -> usize {
        3
    }

    fn drift(&self, x: &StateVec) -> StateVec {
        x.clone()
    }

    fn input_map(&self, x: &StateVec) -> DMatrix<f64> {
        let (s, c) = x[2].sin_cos();
        let dt = self.dt;
        DMatrix::from_row_slice(3, 3, &[dt * c, -dt * s, 0.0, dt * s, dt * c, 0.0, 0.0, 0.0, dt])
    }
}

/// Linear time-invariant dynamics `x⁺ = A x + B u + d`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDynamics {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl LinearDynamics {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::param("a", "drift matrix must be square"));
        }
        check_dim("LinearDynamics input map rows", a.nrows(), b.nrows())?;
        Ok(Self { a, b })
    }
}

impl ControlAffine for LinearDynamics {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    fn drift(&self, x: &StateVec) -> StateVec {
        &self.a * x
    }

    fn input_map(&self, _x: &StateVec) -> DMatrix<f64> {
        self.b.clone()
    }
}

/// Applies the one-step map.
pub fn step(
    dynamics: &dyn ControlAffine,
    x: &StateVec,
    u: &ControlVec,
    d: &DisturbanceVec,
) -> Result<StateVec> {
    check_dim("step state", dynamics.state_dim(), x.len())?;
    check_dim("step input", dynamics.input_dim(), u.len())?;
    check_dim("step disturbance", dynamics.disturbance_dim(), d.len())?;
    Ok(dynamics.drift(x) + dynamics.input_map(x) * u + d)
}

/// Convexity class of a quadratic barrier (from the spectrum of `Q`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Convexity {
    Affine,
    Convex,
    Concave,
    Indefinite,
}

impl Convexity {
    pub fn is_convex(self) -> bool {
        matches!(self, Convexity::Affine | Convexity::Convex)
    }

    pub fn is_concave(self) -> bool {
        matches!(self, Convexity::Affine | Convexity::Concave)
    }
}

/// `h(x) = c0 + gᵀx + xᵀQx` together with its curvature bound and supremum.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticBarrier {
    c0: f64,
    g: DVector<f64>,
    q: DMatrix<f64>,
    lambda: f64,
    sup_h: Option<f64>,
    convexity: Convexity,
}

impl QuadraticBarrier {
    pub fn new(c0: f64, g: DVector<f64>, q: DMatrix<f64>) -> Result<Self> {
        if !q.is_square() {
            return Err(Error::param("q", "must be square"));
        }
        check_dim("barrier linear term", q.nrows(), g.len())?;
        let asym = (&q - q.transpose()).abs().max();
        if asym > 1e-12 * q.abs().max().max(1.0) {
            return Err(Error::param("q", "must be symmetric"));
        }
        if !c0.is_finite() || g.iter().chain(q.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("barrier coefficients"));
        }
        let q = (&q + q.transpose()) * 0.5;
        let form = QuadForm::new(c0, g.clone(), q.clone());
        let eig = SymmetricEigen::new(q.clone()).eigenvalues;
        let spectral = eig.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        let convexity = match form.curvature() {
            crate::quadratic::Curvature::Affine => Convexity::Affine,
            crate::quadratic::Curvature::Concave => Convexity::Concave,
            crate::quadratic::Curvature::Convex => Convexity::Convex,
            crate::quadratic::Curvature::Indefinite => Convexity::Indefinite,
        };
        Ok(Self {
            c0,
            g,
            q,
            lambda: 2.0 * spectral,
            sup_h: form.supremum(),
            convexity,
        })
    }

    /// The corridor barrier `h(x) = w² − y²` on unicycle states, where `w` is
    /// the corridor half-width.
    pub fn corridor(half_width: f64) -> Self {
        let mut q = DMatrix::zeros(3, 3);
        q[(1, 1)] = -1.0;
        Self::new(half_width * half_width, DVector::zeros(3), q)
            .expect("corridor barrier is well formed")
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn linear(&self) -> &DVector<f64> {
        &self.g
    }

    pub fn quadratic(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// Bound on the spectral norm of the (constant) Hessian `2Q`.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Global maximum of `h`, or `None` if `h` is unbounded above.
    pub fn sup_h(&self) -> Option<f64> {
        self.sup_h
    }

    pub fn convexity(&self) -> Convexity {
        self.convexity
    }

    pub fn eval(&self, x: &StateVec) -> Result<f64> {
        check_dim("barrier_eval", self.dim(), x.len())?;
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &StateVec) -> f64 {
        self.c0 + self.g.dot(x) + x.dot(&(&self.q * x))
    }

    pub fn grad(&self, x: &StateVec) -> Result<DVector<f64>> {
        check_dim("barrier_grad", self.dim(), x.len())?;
        Ok(&self.g + (&self.q * x) * 2.0)
    }

    pub fn hess(&self) -> DMatrix<f64> {
        &self.q * 2.0
    }

    /// `C = {x : h(x) ≥ 0}` membership.
    pub fn contains(&self, x: &StateVec) -> Result<bool> {
        Ok(self.eval(x)? >= 0.0)
    }

    /// `u ↦ h(base + B·u)` as a quadratic in `u`.
    pub fn compose_affine(&self, base: &DVector<f64>, input_map: &DMatrix<f64>) -> QuadForm {
        let qb = &self.q * input_map;
        let grad_base = &self.g + (&self.q * base) * 2.0;
        let c = self.eval_unchecked(base);
        let lin = input_map.transpose() * grad_base;
        let quad = input_map.transpose() * qb;
        QuadForm::new(c, lin, quad)
    }
}

/// `barrier_eval` as a free function.
pub fn barrier_eval(h: &QuadraticBarrier, x: &StateVec) -> Result<f64> {
    h.eval(x)
}

pub fn barrier_grad(h: &QuadraticBarrier, x: &StateVec) -> Result<DVector<f64>> {
    h.grad(x)
}

pub fn barrier_hess(h: &QuadraticBarrier) -> DMatrix<f64> {
    h.hess()
}

pub fn in_safe_set(h: &QuadraticBarrier, x: &StateVec) -> Result<bool> {
    h.contains(x)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::param("alpha", format!("must lie in [0, 1], got {alpha}")))
    }
}

/// `Δh(x, u, d) = h(F(x, u, d)) − α·h(x)`.
pub fn delta_h(
    dynamics: &dyn ControlAffine,
    h: &QuadraticBarrier,
    alpha: f64,
    x: &StateVec,
    u: &ControlVec,
    d: &DisturbanceVec,
) -> Result<f64> {
    check_alpha(alpha)?;
    check_dim("delta_h barrier", h.dim(), dynamics.state_dim())?;
    let next = step(dynamics, x, u, d)?;
    Ok(h.eval_unchecked(&next) - alpha * h.eval_unchecked(x))
}

/// Dynamics and barrier bundled with the decay rate `α`.
#[derive(Clone)]
pub struct SafetyModel {
    pub dynamics: std::sync::Arc<dyn ControlAffine>,
    pub barrier: QuadraticBarrier,
    pub alpha: f64,
}

impl std::fmt::Debug for SafetyModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SafetyModel")
            .field("n", &self.dynamics.state_dim())
            .field("m", &self.dynamics.input_dim())
            .field("barrier", &self.barrier)
            .field("alpha", &self.alpha)
            .finish()
    }
}

impl SafetyModel {
    pub fn new(
        dynamics: std::sync::Arc<dyn ControlAffine>,
        barrier: QuadraticBarrier,
        alpha: f64,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        check_dim("barrier vs dynamics", dynamics.state_dim(), barrier.dim())?;
        Ok(Self {
            dynamics,
            barrier,
            alpha,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.dynamics.input_dim()
    }

    pub fn delta_h(&self, x: &StateVec, u: &ControlVec, d: &DisturbanceVec) -> Result<f64> {
        delta_h(self.dynamics.as_ref(), &self.barrier, self.alpha, x, u, d)
    }

    /// `u ↦ Δh(x, u, offset)` as a quadratic in `u`. With `offset = E[d]`
    /// this is `h(E[F]) − αh(x)`.
    pub fn delta_h_form(&self, x: &StateVec, offset: &DVector<f64>) -> Result<QuadForm> {
        check_dim("delta_h_form state", self.state_dim(), x.len())?;
        check_dim("delta_h_form offset", self.dynamics.disturbance_dim(), offset.len())?;
        let base = self.dynamics.drift(x) + offset;
        let form = self
            .barrier
            .compose_affine(&base, &self.dynamics.input_map(x));
        Ok(form.shifted(-self.alpha * self.barrier.eval_unchecked(x)))
    }
}

/// A state-feedback law `x ↦ u_nom`.
pub trait NominalController: Send + Sync {
    fn control(&self, x: &StateVec) -> ControlVec;
}

/// `k_nom(x) = [v, 0, −θ]`: constant forward speed with heading regulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorridorNominal {
    pub forward_speed: f64,
}

impl Default for CorridorNominal {
    fn default() -> Self {
        Self { forward_speed: 0.2 }
    }
}

impl NominalController for CorridorNominal {
    fn control(&self, x: &StateVec) -> ControlVec {
        DVector::from_vec(vec![self.forward_speed, 0.0, -x[2]])
    }
}
