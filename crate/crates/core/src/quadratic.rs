//! Quadratic functions of the control input, `f(u) = c + qᵀu + uᵀPu`.
//!
//! Every margin built from a quadratic barrier and control-affine dynamics
//! reduces to one of these (or to a combination of two, for the mean/deviation
//! forms), so they are the common currency between the condition builders and
//! the solvers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Curvature class of a quadratic in `u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Curvature {
    Affine,
    Concave,
    Convex,
    Indefinite,
}

/// `c + qᵀu + uᵀPu` with `P` symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadForm {
    pub c: f64,
    pub q: DVector<f64>,
    pub p: DMatrix<f64>,
}

const CURVATURE_TOL: f64 = 1e-12;

impl QuadForm {
    pub fn new(c: f64, q: DVector<f64>, p: DMatrix<f64>) -> Self {
        assert_eq!(q.len(), p.nrows(), "QuadForm: q and P dimensions differ");
        assert!(p.is_square(), "QuadForm: P must be square");
        let p = (&p + p.transpose()) * 0.5;
        Self { c, q, p }
    }

    pub fn affine(c: f64, q: DVector<f64>) -> Self {
        let m = q.len();
        Self {
            c,
            q,
            p: DMatrix::zeros(m, m),
        }
    }

    pub fn constant(c: f64, m: usize) -> Self {
        Self::affine(c, DVector::zeros(m))
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn eval(&self, u: &DVector<f64>) -> f64 {
        self.eval_slice(u.as_slice())
    }

    /// Evaluation on a raw slice, allocation free.
    pub fn eval_slice(&self, u: &[f64]) -> f64 {
        let m = self.dim();
        debug_assert_eq!(u.len(), m);
        let mut acc = self.c;
        for i in 0..m {
            acc += self.q[i] * u[i];
            let mut row = 0.0;
            for j in 0..m {
                row += self.p[(i, j)] * u[j];
            }
            acc += u[i] * row;
        }
        acc
    }

    pub fn gradient(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.q + (&self.p * u) * 2.0
    }

    pub fn hessian(&self) -> DMatrix<f64> {
        &self.p * 2.0
    }

    pub fn shifted(&self, delta: f64) -> Self {
        Self {
            c: self.c + delta,
            ..self.clone()
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            c: self.c * s,
            q: &self.q * s,
            p: &self.p * s,
        }
    }

    pub fn add(&self, other: &QuadForm) -> Self {
        Self {
            c: self.c + other.c,
            q: &self.q + &other.q,
            p: &self.p + &other.p,
        }
    }

    pub fn curvature(&self) -> Curvature {
        if self.p.iter().all(|v| v.abs() <= CURVATURE_TOL) {
            return Curvature::Affine;
        }
        let eig = SymmetricEigen::new(self.p.clone()).eigenvalues;
        let scale = self.p.abs().max().max(1.0);
        let tol = CURVATURE_TOL * scale;
        let max = eig.max();
        let min = eig.min();
        match (max <= tol, min >= -tol) {
            (true, true) => Curvature::Affine,
            (true, false) => Curvature::Concave,
            (false, true) => Curvature::Convex,
            (false, false) => Curvature::Indefinite,
        }
    }

    /// Supremum over all of `ℝᵐ`; `None` when unbounded above.
    pub fn supremum(&self) -> Option<f64> {
        let eig = SymmetricEigen::new(self.p.clone());
        let scale = self.p.abs().max().max(1.0);
        let tol = 1e-12 * scale;
        let qt = eig.eigenvectors.transpose() * &self.q;
        let mut sup = self.c;
        for (i, &lam) in eig.eigenvalues.iter().enumerate() {
            if lam > tol {
                return None;
            }
            if lam.abs() <= tol {
                if qt[i].abs() > 1e-12 * (1.0 + self.q.norm()) {
                    return None;
                }
            } else {
                sup += qt[i] * qt[i] / (4.0 * lam.abs());
            }
        }
        Some(sup)
    }
}
