use nalgebra::{DVector, SymmetricEigen};

use super::{Backend, FilterResult, SolveStatus, SolverOptions};
use crate::error::{check_dim, Error, Result};
use crate::quadratic::{Curvature, QuadForm};

/// Exact projection of `u_nom` onto `{u : f(u) ≥ 0}` for one affine or
/// concave-quadratic `f`.
///
/// Stationarity gives `u(μ) = (I − μP)⁻¹(u_nom + μq/2)` for the multiplier
/// `μ ≥ 0`, and `μ ↦ f(u(μ))` is non-decreasing, so the active multiplier is
/// found by a safeguarded Newton/bisection search in eigen coordinates.
pub fn project_single(u_nom: &DVector<f64>, f: &QuadForm, opts: &SolverOptions) -> Result<FilterResult> {
    check_dim("projection", f.dim(), u_nom.len())?;
    if matches!(f.curvature(), Curvature::Convex | Curvature::Indefinite) {
        return Err(Error::Precondition(
            "project_single needs an affine or concave-quadratic margin".into(),
        ));
    }
    let base = |u: DVector<f64>, status, iterations| FilterResult {
        worst_margin: f.eval(&u),
        u_star: u,
        status,
        solve_time: 0.0,
        backend: Backend::Projection,
        certificate: None,
        heuristic: false,
        iterations,
    };
    if f.eval(u_nom) >= 0.0 {
        return Ok(base(u_nom.clone(), SolveStatus::Optimal, 0));
    }
    let sup = f.supremum().unwrap_or(f64::INFINITY);
    if sup < 0.0 {
        let mut r = base(u_nom.clone(), SolveStatus::Infeasible, 0);
        r.certificate = Some(sup);
        return Ok(r);
    }

    let eig = SymmetricEigen::new(f.p.clone());
    let v = &eig.eigenvectors;
    let lam: Vec<f64> = eig.eigenvalues.iter().map(|l| l.min(0.0)).collect();
    let a = v.transpose() * u_nom;
    let b = v.transpose() * &f.q * 0.5;
    // In eigen coordinates: ũ_j(μ) = (a_j + μ b_j)/(1 − μ λ_j).
    let point = |mu: f64| -> DVector<f64> {
        DVector::from_fn(a.len(), |j, _| (a[j] + mu * b[j]) / (1.0 - mu * lam[j]))
    };
    let phi = |mu: f64| -> f64 { f.eval(&(v * point(mu))) };
    // dφ/dμ = ∇f(u)ᵀ du/dμ, with du_j/dμ = (b_j + λ_j a_j)/(1 − μλ_j)².
    let dphi = |mu: f64| -> f64 {
        let ut = point(mu);
        let g = v.transpose() * f.gradient(&(v * &ut));
        (0..a.len())
            .map(|j| g[j] * (b[j] + lam[j] * a[j]) / (1.0 - mu * lam[j]).powi(2))
            .sum()
    };

    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    let mut iterations = 0;
    while phi(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        iterations += 1;
        if hi > 1e300 {
            // Supremum is zero and only approached asymptotically.
            let u = v * point(hi);
            return Ok(base(u, SolveStatus::Optimal, iterations));
        }
    }
    let mut mu = hi;
    for _ in 0..300 {
        iterations += 1;
        let val = phi(mu);
        if (0.0..=opts.dual_tol).contains(&val) {
            break;
        }
        if val < 0.0 {
            lo = mu;
        } else {
            hi = mu;
        }
        let d = dphi(mu);
        let newton = mu - val / d;
        mu = if d > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= f64::EPSILON * hi {
            mu = hi;
            break;
        }
    }
    if phi(mu) < 0.0 {
        mu = hi;
    }
    Ok(base(v * point(mu), SolveStatus::Optimal, iterations))
}
