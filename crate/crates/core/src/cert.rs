//! Probability calculus: horizon risk allocation, confidence allocation, and
//! sample sizes for the data-based conditions. All logarithms are natural.

use statrs::function::gamma::ln_gamma;

use crate::error::{check_open_unit, Error, Result};

/// Largest per-step risk `δ = 1 − (1−ε)^{1/H}` giving `ε`-safety over `H` steps.
pub fn delta_for_horizon(epsilon: f64, horizon: usize) -> Result<f64> {
    check_open_unit("epsilon", epsilon)?;
    if horizon == 0 {
        return Err(Error::param("horizon", "must be at least 1"));
    }
    if horizon == 1 {
        return Ok(epsilon);
    }
    // −expm1(log1p(−ε)/H) avoids cancellation for small ε.
    Ok(-((-epsilon).ln_1p() / horizon as f64).exp_m1())
}

/// Lower bound `(1−δ)^H` on the probability of staying safe for `H` steps.
pub fn safety_probability_bound(delta: f64, horizon: usize) -> Result<f64> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::param("delta", format!("must lie in [0, 1), got {delta}")));
    }
    Ok((1.0 - delta).powi(horizon as i32))
}

fn check_range(a: f64, b: f64) -> Result<()> {
    if a < b && a.is_finite() && b.is_finite() {
        Ok(())
    } else {
        Err(Error::param("a", format!("need finite a < b, got a={a}, b={b}")))
    }
}

/// Hoeffding slack `ε = (b−a)·√(ln(2/β)/(2N))`.
pub fn hoeffding_epsilon(n: usize, beta: f64, a: f64, b: f64) -> Result<f64> {
    check_open_unit("beta", beta)?;
    check_range(a, b)?;
    if n == 0 {
        return Err(Error::Empty("dataset"));
    }
    Ok((b - a) * ((2.0 / beta).ln() / (2.0 * n as f64)).sqrt())
}

/// Smallest `N` for which [`hoeffding_epsilon`] is at most `epsilon_h`.
pub fn hoeffding_min_samples(epsilon_h: f64, beta: f64, a: f64, b: f64) -> Result<usize> {
    check_open_unit("beta", beta)?;
    check_range(a, b)?;
    if !(epsilon_h > 0.0) {
        return Err(Error::param("epsilon_h", "must be positive"));
    }
    let raw = (b - a).powi(2) * (2.0 / beta).ln() / (2.0 * epsilon_h * epsilon_h);
    Ok(ceil_snapped(raw).max(1))
}

/// `⌈v⌉`, treating values within a few ulps above an integer as that integer.
fn ceil_snapped(v: f64) -> usize {
    let r = v.round();
    if (v - r).abs() <= 4.0 * f64::EPSILON * v.abs().max(1.0) {
        r as usize
    } else {
        v.ceil() as usize
    }
}

fn ln_choose(n: usize, k: usize) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Scenario confidence `Σ_{i<dim} C(N,i) δⁱ (1−δ)^{N−i}` (log-space terms).
pub fn scenario_beta(n: usize, delta: f64, dim: usize) -> Result<f64> {
    check_open_unit("delta", delta)?;
    if dim == 0 {
        return Err(Error::param("dim", "must be at least 1"));
    }
    let (ld, l1d) = (delta.ln(), (-delta).ln_1p());
    let terms: Vec<f64> = (0..dim.min(n + 1))
        .map(|i| ln_choose(n, i) + i as f64 * ld + (n - i) as f64 * l1d)
        .collect();
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    Ok((max + sum.ln()).exp().min(1.0))
}

/// Closed-form sufficient sample size `⌈(2/δ)(ln(1/β) + dim)⌉`.
pub fn scenario_sufficient_samples(delta: f64, beta: f64, dim: usize) -> Result<usize> {
    check_open_unit("delta", delta)?;
    check_open_unit("beta", beta)?;
    Ok(ceil_snapped(2.0 / delta * ((1.0 / beta).ln() + dim as f64)))
}

/// Smallest `N` with [`scenario_beta`]`(N, δ, dim) ≤ β`, by binary search.
pub fn scenario_min_samples(delta: f64, beta: f64, dim: usize) -> Result<usize> {
    check_open_unit("beta", beta)?;
    let mut hi = scenario_sufficient_samples(delta, beta, dim)?.max(dim);
    while scenario_beta(hi, delta, dim)? > beta {
        hi *= 2;
    }
    let mut lo = dim.saturating_sub(1);
    // Invariant: tail(lo) > β (or lo below any meaningful N), tail(hi) ≤ β.
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if scenario_beta(mid, delta, dim)? <= beta {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Adjusted conformal level `1 − δ + √(ln(1/β)/(2N))`; errors when ≥ 1.
pub fn conformal_level(delta: f64, beta: f64, n: usize) -> Result<f64> {
    check_open_unit("delta", delta)?;
    check_open_unit("beta", beta)?;
    if n == 0 {
        return Err(Error::Empty("dataset"));
    }
    let level = 1.0 - delta + ((1.0 / beta).ln() / (2.0 * n as f64)).sqrt();
    if level >= 1.0 {
        return Err(Error::InsufficientSamples(format!(
            "conformal level {level:.6} ≥ 1 with N = {n}; the quantile is always +∞"
        )));
    }
    Ok(level)
}

/// Smallest `N` for which [`conformal_level`] is below one.
pub fn conformal_min_samples(delta: f64, beta: f64) -> Result<usize> {
    check_open_unit("delta", delta)?;
    check_open_unit("beta", beta)?;
    let mut n = ((1.0 / beta).ln() / (2.0 * delta * delta)).floor().max(1.0) as usize;
    while conformal_level(delta, beta, n).is_err() {
        n += 1;
    }
    Ok(n)
}

/// Total risk and confidence budget over a horizon.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct HorizonBudget {
    pub epsilon: f64,
    pub horizon: usize,
    pub beta_total: f64,
    pub delta_step: f64,
    pub beta_step: f64,
}

impl HorizonBudget {
    /// Budget with the maximal admissible per-step allocations.
    pub fn new(epsilon: f64, horizon: usize, beta_total: f64) -> Result<Self> {
        check_open_unit("beta_total", beta_total)?;
        Ok(Self {
            epsilon,
            horizon,
            beta_total,
            delta_step: delta_for_horizon(epsilon, horizon)?,
            beta_step: beta_total / horizon as f64,
        })
    }

    /// Budget with explicit per-step values, validated against the totals.
    pub fn with_steps(
        epsilon: f64,
        horizon: usize,
        beta_total: f64,
        delta_step: f64,
        beta_step: f64,
    ) -> Result<Self> {
        let max = Self::new(epsilon, horizon, beta_total)?;
        check_open_unit("delta_step", delta_step)?;
        check_open_unit("beta_step", beta_step)?;
        let slack = 1e-12;
        if delta_step > max.delta_step * (1.0 + slack) {
            return Err(Error::Precondition(format!(
                "per-step risk {delta_step} exceeds 1 − (1−ε)^(1/H) = {}",
                max.delta_step
            )));
        }
        if beta_step > max.beta_step * (1.0 + slack) {
            return Err(Error::Precondition(format!(
                "per-step confidence budget {beta_step} exceeds β_total/H = {}",
                max.beta_step
            )));
        }
        Ok(Self {
            delta_step,
            beta_step,
            ..max
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GuaranteeMode {
    Moment,
    Data,
}

/// What a budget certifies.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct GuaranteeReport {
    pub mode: GuaranteeMode,
    pub budget: HorizonBudget,
    /// `(1 − δ_step)^H`
    pub safety_probability: f64,
    /// `1 − H·β_step` for data-based conditions, 1 otherwise.
    pub confidence: f64,
}

impl std::fmt::Display for GuaranteeReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let b = &self.budget;
        writeln!(f, "horizon            {}", b.horizon)?;
        writeln!(f, "epsilon            {}", b.epsilon)?;
        writeln!(f, "delta_step         {:.10}", b.delta_step)?;
        writeln!(
            f,
            "safety_probability {:.10} (>= 1 - epsilon = {:.10})",
            self.safety_probability,
            1.0 - b.epsilon
        )?;
        if self.mode == GuaranteeMode::Data {
            writeln!(f, "beta_total         {}", b.beta_total)?;
            writeln!(f, "beta_step          {:.10}", b.beta_step)?;
            writeln!(f, "confidence         {:.10}", self.confidence)?;
        }
        Ok(())
    }
}

pub fn horizon_guarantee(budget: HorizonBudget, mode: GuaranteeMode) -> Result<GuaranteeReport> {
    // Re-validate in case the budget was assembled by hand.
    HorizonBudget::with_steps(
        budget.epsilon,
        budget.horizon,
        budget.beta_total,
        budget.delta_step,
        budget.beta_step,
    )?;
    let safety_probability = safety_probability_bound(budget.delta_step, budget.horizon)?;
    let confidence = match mode {
        GuaranteeMode::Moment => 1.0,
        GuaranteeMode::Data => 1.0 - budget.horizon as f64 * budget.beta_step,
    };
    Ok(GuaranteeReport {
        mode,
        budget,
        safety_probability,
        confidence,
    })
}
