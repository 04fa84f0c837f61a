//! Disturbance models, closed-form moments of `Δh` for quadratic barriers
//! under Gaussian noise, seeded sampling, datasets and the empirical
//! quantile.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, check_open_unit, Error, Result};
use crate::quadratic::QuadForm;
use crate::system::{check_finite, ControlVec, SafetyModel, StateVec};

/// Deterministic RNG keyed by `(master_seed, stream)`.
///
/// Streams are independent ChaCha8 streams, so work items can be scheduled
/// in any order without changing the numbers each one sees.
pub fn stream_rng(master_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

/// `N(mean, cov)` disturbance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDisturbance {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl GaussianDisturbance {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if !cov.is_square() {
            return Err(Error::param("cov", "must be square"));
        }
        check_dim("gaussian mean", cov.nrows(), mean.len())?;
        check_finite("gaussian mean", &mean)?;
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gaussian covariance"));
        }
        let scale = cov.abs().max().max(1e-300);
        if (&cov - cov.transpose()).abs().max() > 1e-12 * scale {
            return Err(Error::param("cov", "must be symmetric"));
        }
        let factor = psd_factor(&cov)?;
        Ok(Self { mean, cov, factor })
    }

    /// Zero-mean noise with standard deviation `sigma` on the unicycle's
    /// lateral coordinate only.
    pub fn lateral(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::param("sigma", format!("must be non-negative, got {sigma}")));
        }
        let mut cov = DMatrix::zeros(3, 3);
        cov[(1, 1)] = sigma * sigma;
        Self::new(DVector::zeros(3), cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// `L` with `L·Lᵀ = cov`.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// Per-coordinate standard deviations.
    pub fn std_devs(&self) -> DVector<f64> {
        self.cov.diagonal().map(|v| v.max(0.0).sqrt())
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + &self.factor * z
    }
}

fn psd_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    let scale = cov.abs().max().max(1e-300);
    let is_diagonal = (0..n).all(|i| (0..n).all(|j| i == j || cov[(i, j)] == 0.0));
    if is_diagonal {
        let mut l = DMatrix::zeros(n, n);
        for i in 0..n {
            let v = cov[(i, i)];
            if v < -1e-12 * scale {
                return Err(Error::param("cov", "must be positive semidefinite"));
            }
            l[(i, i)] = v.max(0.0).sqrt();
        }
        return Ok(l);
    }
    let eig = SymmetricEigen::new(cov.clone());
    if eig.eigenvalues.min() < -1e-10 * scale {
        return Err(Error::param("cov", "must be positive semidefinite"));
    }
    let sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt))
}

/// Disturbance knowledge available to a condition builder.
#[derive(Debug, Clone)]
pub enum DisturbanceModel {
    Gaussian(GaussianDisturbance),
    /// Samples only; no analytic moments.
    Empirical(DisturbanceDataset),
}

impl DisturbanceModel {
    pub fn dim(&self) -> usize {
        match self {
            DisturbanceModel::Gaussian(g) => g.dim(),
            DisturbanceModel::Empirical(d) => d.dim(),
        }
    }

    pub fn as_gaussian(&self) -> Result<&GaussianDisturbance> {
        match self {
            DisturbanceModel::Gaussian(g) => Ok(g),
            DisturbanceModel::Empirical(_) => Err(Error::UnsupportedModel(
                "analytic moments require a Gaussian disturbance model".into(),
            )),
        }
    }
}

impl From<GaussianDisturbance> for DisturbanceModel {
    fn from(g: GaussianDisturbance) -> Self {
        DisturbanceModel::Gaussian(g)
    }
}

/// `N` i.i.d. disturbance samples. Immutable after construction; the sample
/// mean and second moment are cached for the sample-average conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceDataset {
    samples: Vec<DVector<f64>>,
    source_seed: Option<u64>,
    mean: DVector<f64>,
    second_moment: DMatrix<f64>,
}

impl DisturbanceDataset {
    pub fn new(samples: Vec<DVector<f64>>, source_seed: Option<u64>) -> Result<Self> {
        let first = samples.first().ok_or(Error::Empty("disturbance dataset"))?;
        let dim = first.len();
        let mut mean = DVector::zeros(dim);
        let mut second = DMatrix::zeros(dim, dim);
        for s in &samples {
            check_dim("dataset sample", dim, s.len())?;
            check_finite("dataset sample", s)?;
            mean += s;
            second.ger(1.0, s, s, 1.0);
        }
        let n = samples.len() as f64;
        mean /= n;
        second /= n;
        Ok(Self {
            samples,
            source_seed,
            mean,
            second_moment: second,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn samples(&self) -> &[DVector<f64>] {
        &self.samples
    }

    pub fn source_seed(&self) -> Option<u64> {
        self.source_seed
    }

    pub fn sample_mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// `(1/N) Σ d dᵀ`
    pub fn second_moment(&self) -> &DMatrix<f64> {
        &self.second_moment
    }

    /// Plain-text form: optional `# d=<dim> n=<count>` header, then one
    /// whitespace-separated sample per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("# d={} n={}\n", self.dim(), self.len());
        for s in &self.samples {
            let line: Vec<String> = s.iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut header: Option<(usize, usize)> = None;
        let mut samples = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if header.is_none() && samples.is_empty() {
                    header = parse_header(rest);
                }
                continue;
            }
            let values: std::result::Result<Vec<f64>, _> =
                line.split_whitespace().map(str::parse::<f64>).collect();
            let values = values.map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
            samples.push(DVector::from_vec(values));
        }
        if let Some((d, n)) = header {
            if let Some(bad) = samples.iter().find(|s| s.len() != d) {
                return Err(Error::Parse(format!(
                    "header declares d={d} but a sample has {} entries",
                    bad.len()
                )));
            }
            if samples.len() != n {
                return Err(Error::Parse(format!(
                    "header declares n={n} but {} samples were read",
                    samples.len()
                )));
            }
        }
        Self::new(samples, None)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

fn parse_header(rest: &str) -> Option<(usize, usize)> {
    let mut d = None;
    let mut n = None;
    for tok in rest.split_whitespace() {
        if let Some(v) = tok.strip_prefix("d=") {
            d = v.parse().ok();
        } else if let Some(v) = tok.strip_prefix("n=") {
            n = v.parse().ok();
        }
    }
    Some((d?, n?))
}

/// Draws `n` samples from stream 0 of `seed`.
pub fn sample(dist: &DisturbanceModel, n: usize, seed: u64) -> Result<DisturbanceDataset> {
    let mut rng = stream_rng(seed, 0);
    let mut data = sample_with(dist, n, &mut rng)?;
    data.source_seed = Some(seed);
    Ok(data)
}

/// Draws `n` samples using the given RNG. Empirical models are resampled
/// with replacement.
pub fn sample_with<R: Rng + ?Sized>(
    dist: &DisturbanceModel,
    n: usize,
    rng: &mut R,
) -> Result<DisturbanceDataset> {
    if n == 0 {
        return Err(Error::param("n", "sample count must be at least 1"));
    }
    let samples = match dist {
        DisturbanceModel::Gaussian(g) => (0..n).map(|_| g.draw(rng)).collect(),
        DisturbanceModel::Empirical(data) => (0..n)
            .map(|_| data.samples[rng.random_range(0..data.len())].clone())
            .collect(),
    };
    DisturbanceDataset::new(samples, None)
}

/// First two moments of `Δh` and of the next state.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSummary {
    pub mean_dh: f64,
    pub var_dh: f64,
    pub next_mean: DVector<f64>,
    pub next_cov_trace: f64,
}

/// Mean and covariance of `F(x, u, d)` for additive disturbance.
pub fn next_state_moments(
    model: &SafetyModel,
    x: &StateVec,
    u: &ControlVec,
    dist: &GaussianDisturbance,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let dynamics = model.dynamics.as_ref();
    let mean = crate::system::step(dynamics, x, u, dist.mean())?;
    Ok((mean, dist.cov().clone()))
}

/// Mean and variance of `u ↦ Δh(x, u, d)` as quadratics in `u`.
///
/// With `m(u) = a(x) + B(x)u + μ` and `Σ = Cov(d)`:
/// `E[Δh] = h(m) + Tr(QΣ) − αh(x)` and
/// `Var(Δh) = (g + 2Qm)ᵀ Σ (g + 2Qm) + 2 Tr((QΣ)²)`.
pub fn delta_h_moment_forms(
    model: &SafetyModel,
    x: &StateVec,
    dist: &DisturbanceModel,
) -> Result<(QuadForm, QuadForm)> {
    let gauss = dist.as_gaussian()?;
    let h = &model.barrier;
    let sigma = gauss.cov();
    let q = h.quadratic();
    let q_sigma = q * sigma;
    let trace_q_sigma = q_sigma.trace();
    let trace_sq = (&q_sigma * &q_sigma).trace();

    let mean_form = model.delta_h_form(x, gauss.mean())?.shifted(trace_q_sigma);

    let b = model.dynamics.input_map(x);
    let base = model.dynamics.drift(x) + gauss.mean();
    let v0 = h.linear() + (q * &base) * 2.0;
    let v_mat = (q * &b) * 2.0;
    let sigma_v = sigma * &v_mat;
    let c = v0.dot(&(sigma * &v0)) + 2.0 * trace_sq;
    let lin = (v_mat.transpose() * (sigma * &v0)) * 2.0;
    let quad = v_mat.transpose() * sigma_v;
    Ok((mean_form, QuadForm::new(c, lin, quad)))
}

/// Closed-form moments of `Δh(x, u, d)` for a quadratic barrier under
/// Gaussian additive disturbance.
pub fn delta_h_moments(
    model: &SafetyModel,
    x: &StateVec,
    u: &ControlVec,
    dist: &DisturbanceModel,
) -> Result<MomentSummary> {
    check_dim("delta_h_moments input", model.input_dim(), u.len())?;
    let (mean_form, var_form) = delta_h_moment_forms(model, x, dist)?;
    let gauss = dist.as_gaussian()?;
    let (next_mean, next_cov) = next_state_moments(model, x, u, gauss)?;
    Ok(MomentSummary {
        mean_dh: mean_form.eval(u),
        var_dh: var_form.eval(u).max(0.0),
        next_mean,
        next_cov_trace: next_cov.trace().max(0.0),
    })
}

/// `Quantile_{1−δ}(R₁, …, R_k, ∞)`: the `p`-th smallest of the values with
/// `+∞` appended, `p = ⌈(k+1)(1−δ)⌉`. No interpolation.
pub fn empirical_quantile(values: &[f64], delta: f64) -> Result<f64> {
    check_open_unit("delta", delta)?;
    if values.is_empty() {
        return Err(Error::Empty("quantile values"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("quantile values"));
    }
    let k = values.len();
    let p = quantile_rank(k, 1.0 - delta);
    if p > k {
        return Ok(f64::INFINITY);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    Ok(sorted[p - 1])
}

/// `⌈(k+1)·level⌉`, clamped to at least 1.
///
/// Products within a few ulps of an integer are snapped to it, so decimal
/// inputs such as `δ = 0.1` give the rank the rational formula prescribes.
pub fn quantile_rank(k: usize, level: f64) -> usize {
    let x = (k as f64 + 1.0) * level;
    let nearest = x.round();
    let p = if (x - nearest).abs() <= 8.0 * f64::EPSILON * nearest.abs().max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    (p.max(1.0)) as usize
}
