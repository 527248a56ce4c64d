//! Gaussian process prior on η, its finite-basis surrogate in coefficient
//! space, and priors on the noise scale σ.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma as GammaDist, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma};
use statrs::function::gamma::ln_gamma;

use crate::domain::CompactDomain;
use crate::error::{invalid, Error, Result};
use crate::function::{Basis, BasisExpansion, ClosedForm, GridFunction, RegressionFunction, Repr, TrigTerm};
use crate::numeric::{derive_seed, normal_cdf, rng_from};
use crate::quadrature::gauss_hermite_normal;

/// Default cap on the number of points for exact grid sampling.
pub const MAX_GRID_POINTS: usize = 4096;
const JITTER_START: f64 = 1e-12;
const JITTER_MAX: f64 = 1e-8;

/// Stationary isotropic covariance functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    SquaredExponential { amplitude: f64, lengthscale: f64 },
    /// Half-integer smoothness `ν = p + ½` with `p ≥ 2`.
    Matern { nu: f64, amplitude: f64, lengthscale: f64 },
}

impl Kernel {
    pub fn squared_exponential(amplitude: f64, lengthscale: f64) -> Result<Self> {
        let k = Kernel::SquaredExponential { amplitude, lengthscale };
        k.validate()?;
        Ok(k)
    }

    pub fn matern(nu: f64, amplitude: f64, lengthscale: f64) -> Result<Self> {
        let k = Kernel::Matern {
            nu,
            amplitude,
            lengthscale,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let (amp, ell) = (self.amplitude(), self.lengthscale());
        if !(amp > 0.0 && amp.is_finite()) {
            return Err(invalid(format!("kernel amplitude must be positive, got {amp}")));
        }
        if !(ell > 0.0 && ell.is_finite()) {
            return Err(invalid(format!("kernel lengthscale must be positive, got {ell}")));
        }
        if let Kernel::Matern { nu, .. } = self {
            let p = nu - 0.5;
            if p < 2.0 || p.fract() != 0.0 || p > 20.0 {
                return Err(invalid(format!(
                    "Matérn smoothness must be a half-integer in [5/2, 41/2], got {nu}"
                )));
            }
        }
        Ok(())
    }

    /// τ²
    pub fn amplitude(&self) -> f64 {
        match *self {
            Kernel::SquaredExponential { amplitude, .. } | Kernel::Matern { amplitude, .. } => amplitude,
        }
    }

    pub fn lengthscale(&self) -> f64 {
        match *self {
            Kernel::SquaredExponential { lengthscale, .. } | Kernel::Matern { lengthscale, .. } => lengthscale,
        }
    }

    /// Covariance as a function of Euclidean distance.
    pub fn at_distance(&self, r: f64) -> f64 {
        match *self {
            Kernel::SquaredExponential { amplitude, lengthscale } => {
                amplitude * (-0.5 * (r / lengthscale).powi(2)).exp()
            }
            Kernel::Matern {
                nu,
                amplitude,
                lengthscale,
            } => {
                let p = (nu - 0.5).round() as u32;
                let z = (2.0 * nu).sqrt() * r / lengthscale;
                // Γ(p+1)/Γ(2p+1) Σ (p+i)!/(i!(p−i)!) (2z)^{p−i}
                let lead = ln_factorial(p) - ln_factorial(2 * p);
                let mut sum = 0.0;
                for i in 0..=p {
                    let c = ln_factorial(p + i) - ln_factorial(i) - ln_factorial(p - i) + lead;
                    sum += c.exp() * (2.0 * z).powi((p - i) as i32);
                }
                amplitude * (-z).exp() * sum
            }
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let r = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        self.at_distance(r)
    }

    /// Unnormalized one-dimensional spectral density at angular frequency ω.
    pub fn spectral_1d(&self, omega: f64) -> f64 {
        match *self {
            Kernel::SquaredExponential { lengthscale, .. } => (-0.5 * (omega * lengthscale).powi(2)).exp(),
            Kernel::Matern { nu, lengthscale, .. } => {
                let base = 2.0 * nu / (lengthscale * lengthscale);
                ((base + omega * omega) / base).powf(-(nu + 0.5))
            }
        }
    }

    /// One draw from the normalized spectral measure in `d` dimensions.
    fn draw_frequency<R: Rng + ?Sized>(&self, d: usize, rng: &mut R) -> Vec<f64> {
        let g: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        match *self {
            Kernel::SquaredExponential { lengthscale, .. } => g.into_iter().map(|v| v / lengthscale).collect(),
            Kernel::Matern { nu, lengthscale, .. } => {
                let w: f64 = ChiSquared::new(2.0 * nu).expect("positive dof").sample(rng);
                let s = (2.0 * nu / w).sqrt() / lengthscale;
                g.into_iter().map(|v| v * s).collect()
            }
        }
    }
}

fn ln_factorial(k: u32) -> f64 {
    ln_gamma(k as f64 + 1.0)
}

/// How the GP is reduced to a finite coefficient vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    /// Tensor cosine basis with independent coefficients weighted by the
    /// kernel's spectral density at the basis frequencies.
    #[default]
    Cosine,
    /// Fourier features: Gauss-Hermite frequencies for the squared
    /// exponential kernel in one dimension, otherwise random frequencies
    /// drawn once from `seed`.
    Fourier { seed: u64 },
}

/// Coefficient law: Gaussian, or Student-t with the same scales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoefficientTail {
    #[default]
    Gaussian,
    StudentT { dof: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpSpec {
    pub mean: RegressionFunction,
    pub kernel: Kernel,
    /// Starting jitter relative to τ².
    pub jitter: f64,
    pub max_points: usize,
}

impl GpSpec {
    pub fn new(mean: RegressionFunction, kernel: Kernel) -> Result<Self> {
        kernel.validate()?;
        Ok(Self {
            mean,
            kernel,
            jitter: JITTER_START,
            max_points: MAX_GRID_POINTS,
        })
    }

    /// Zero-mean process on `domain`.
    pub fn centered(domain: CompactDomain, kernel: Kernel) -> Result<Self> {
        Self::new(RegressionFunction::zero(domain), kernel)
    }

    pub fn domain(&self) -> &CompactDomain {
        &self.mean.domain
    }
}

/// Cholesky factor of a jittered Gram matrix, reusable across draws.
#[derive(Debug, Clone)]
pub struct GramFactor {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
    jitter: f64,
}

impl GramFactor {
    pub fn new(spec: &GpSpec, points: &[Vec<f64>]) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(invalid("need at least one point"));
        }
        if n > spec.max_points {
            return Err(invalid(format!("{n} points exceed the limit of {}", spec.max_points)));
        }
        for p in points {
            spec.domain().check(p)?;
        }
        let mut sorted: Vec<&Vec<f64>> = points.iter().collect();
        sorted.sort_by(|a, b| a.iter().zip(b.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("sampling points must be distinct"));
        }
        let tau2 = spec.kernel.amplitude();
        let gram = DMatrix::from_fn(n, n, |i, j| spec.kernel.eval(&points[i], &points[j]));
        let mean = DVector::from_iterator(n, points.iter().map(|p| spec.mean.value(p)));
        let mut rel = spec.jitter.max(JITTER_START);
        loop {
            let jitter = rel * tau2;
            let mut m = gram.clone();
            for i in 0..n {
                m[(i, i)] += jitter;
            }
            if let Some(ch) = Cholesky::new(m) {
                return Ok(Self {
                    mean,
                    factor: ch.l(),
                    jitter,
                });
            }
            if rel >= JITTER_MAX * (1.0 - 1e-9) {
                return Err(Error::IllConditionedKernel { jitter });
            }
            rel = (rel * 10.0).min(JITTER_MAX);
        }
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn draw(&self, seed: u64) -> Vec<f64> {
        let mut rng = rng_from(seed);
        let z = DVector::from_iterator(self.mean.len(), (0..self.mean.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        (&self.mean + &self.factor * z).iter().copied().collect()
    }
}

/// One joint draw of η at `points`.
pub fn sample_at_points(spec: &GpSpec, points: &[Vec<f64>], seed: u64) -> Result<Vec<f64>> {
    Ok(GramFactor::new(spec, points)?.draw(seed))
}

/// One draw on the tensor grid spanned by `axes`, returned as a
/// piecewise-linear grid function.
pub fn sample_path_on_grid(spec: &GpSpec, axes: Vec<Vec<f64>>, seed: u64) -> Result<GridFunction> {
    if axes.len() != spec.domain().dim() {
        return Err(invalid("one axis per dimension is required"));
    }
    let points = tensor_points(&axes);
    let values = sample_at_points(spec, &points, seed)?;
    GridFunction::new(axes, values)
}

fn tensor_points(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![Vec::new()];
    for axis in axes {
        out = out
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    out
}

/// `x_1..x_d, eta` rows for a sampled path.
pub fn write_path_csv<W: Write>(points: &[Vec<f64>], values: &[f64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = points.first().map_or(1, Vec::len);
    let mut header: Vec<String> = if d == 1 {
        vec!["x".into()]
    } else {
        (1..=d).map(|j| format!("x_{j}")).collect()
    };
    header.push("eta".into());
    w.write_record(&header)?;
    for (p, v) in points.iter().zip(values) {
        let mut rec: Vec<String> = p.iter().map(|x| format!("{x:.17e}")).collect();
        rec.push(format!("{v:.17e}"));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Independent-coefficient prior over a fixed basis: `η = μ + Σ w_k ψ_k`
/// with `w_k = √v_k · ξ_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientPrior {
    pub mean: RegressionFunction,
    pub basis: Basis,
    pub variances: Vec<f64>,
    pub tail: CoefficientTail,
}

impl CoefficientPrior {
    pub fn from_spec(spec: &GpSpec, k: usize, features: FeatureKind) -> Result<Self> {
        if k == 0 {
            return Err(invalid("basis size K must be at least 1"));
        }
        let domain = spec.domain();
        let tau2 = spec.kernel.amplitude();
        let (basis, variances) = match features {
            FeatureKind::Cosine => {
                let basis = Basis::cosine(domain, k);
                let mut raw = Vec::with_capacity(k);
                let mut avg = 0.0;
                for t in basis.terms() {
                    let TrigTerm::Tensor { freq, .. } = t else { unreachable!() };
                    let v: f64 = freq.iter().map(|&w| spec.kernel.spectral_1d(w)).product();
                    let mean_sq: f64 = freq.iter().map(|&w| if w == 0.0 { 1.0 } else { 0.5 }).product();
                    avg += v * mean_sq;
                    raw.push(v);
                }
                let scale = tau2 / avg;
                (basis, raw.into_iter().map(|v| v * scale).collect())
            }
            FeatureKind::Fourier { seed } => match spec.kernel {
                Kernel::SquaredExponential { lengthscale, .. } if domain.dim() == 1 => hermite_features(k, lengthscale, tau2),
                _ => random_features(&spec.kernel, domain.dim(), k, seed),
            },
        };
        Ok(Self {
            mean: spec.mean.clone(),
            basis,
            variances,
            tail: CoefficientTail::Gaussian,
        })
    }

    /// No coefficients: `η = μ`.
    pub fn mean_only(mean: RegressionFunction) -> Self {
        Self {
            mean,
            basis: Basis::empty(),
            variances: Vec::new(),
            tail: CoefficientTail::Gaussian,
        }
    }

    pub fn with_tail(mut self, tail: CoefficientTail) -> Result<Self> {
        if let CoefficientTail::StudentT { dof } = tail {
            if !(dof > 0.0) {
                return Err(invalid("Student-t degrees of freedom must be positive"));
            }
        }
        self.tail = tail;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    pub fn domain(&self) -> &CompactDomain {
        &self.mean.domain
    }

    pub fn sample_coefficients<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.variances
            .iter()
            .map(|v| {
                let z: f64 = rng.sample(StandardNormal);
                let z = match self.tail {
                    CoefficientTail::Gaussian => z,
                    CoefficientTail::StudentT { dof } => {
                        let c: f64 = ChiSquared::new(dof).expect("positive dof").sample(rng);
                        z / (c / dof).sqrt()
                    }
                };
                v.sqrt() * z
            })
            .collect()
    }

    /// Log prior density of the coefficients, up to an additive constant.
    pub fn log_density(&self, w: &[f64]) -> f64 {
        w.iter()
            .zip(&self.variances)
            .map(|(wk, v)| {
                let q = wk * wk / v;
                match self.tail {
                    CoefficientTail::Gaussian => -0.5 * q,
                    CoefficientTail::StudentT { dof } => -0.5 * (dof + 1.0) * (q / dof).ln_1p(),
                }
            })
            .sum()
    }

    /// The path `μ + Σ w_k ψ_k` as a basis expansion.
    pub fn path(&self, w: &[f64]) -> Result<RegressionFunction> {
        if w.len() != self.len() {
            return Err(invalid(format!("expected {} coefficients, got {}", self.len(), w.len())));
        }
        if w.is_empty() {
            return Ok(self.mean.clone());
        }
        let domain = self.mean.domain.clone();
        let mut terms = self.basis.terms().to_vec();
        let mut coefficients = w.to_vec();
        match &self.mean.repr {
            Repr::Closed(ClosedForm::Constant { value }) => {
                if *value != 0.0 {
                    match self.basis.constant_index() {
                        Some(i) => coefficients[i] += value,
                        None => {
                            terms.push(TrigTerm::Tensor {
                                freq: vec![0.0; domain.dim()],
                                phase: vec![0.0; domain.dim()],
                            });
                            coefficients.push(*value);
                        }
                    }
                }
            }
            Repr::Basis(BasisExpansion { basis, coefficients: mc }) => {
                terms.extend_from_slice(basis.terms());
                coefficients.extend_from_slice(mc);
            }
            _ => {
                return Err(Error::UnsupportedCombination(
                    "coefficient paths need a constant or basis-expansion mean".into(),
                ))
            }
        }
        RegressionFunction::expansion(domain, Basis::new(terms), coefficients)
    }

    /// Prior covariance of `η(x)` and `η(y)` implied by the surrogate.
    pub fn covariance(&self, x: &[f64], y: &[f64]) -> f64 {
        let (a, b) = (self.basis.row(x), self.basis.row(y));
        a.iter().zip(&b).zip(&self.variances).map(|((p, q), v)| p * q * v).sum()
    }
}

fn hermite_features(k: usize, lengthscale: f64, tau2: f64) -> (Basis, Vec<f64>) {
    let (nodes, weights) = gauss_hermite_normal(k);
    let mut terms = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    for (g, p) in nodes.iter().zip(&weights) {
        if *g < 0.0 {
            continue;
        }
        let omega = g / lengthscale;
        if *g == 0.0 {
            terms.push(TrigTerm::Plane { freq: vec![0.0], phase: 0.0 });
            variances.push(tau2 * p);
        } else {
            terms.push(TrigTerm::Plane { freq: vec![omega], phase: 0.0 });
            terms.push(TrigTerm::Plane {
                freq: vec![omega],
                phase: -0.5 * PI,
            });
            variances.push(2.0 * tau2 * p);
            variances.push(2.0 * tau2 * p);
        }
    }
    (Basis::new(terms), variances)
}

fn random_features(kernel: &Kernel, d: usize, k: usize, seed: u64) -> (Basis, Vec<f64>) {
    let mut rng = rng_from(derive_seed(seed, &[0xFEA7]));
    let tau2 = kernel.amplitude();
    let mut terms = Vec::with_capacity(k);
    for _ in 0..k {
        let freq = kernel.draw_frequency(d, &mut rng);
        let phase = 2.0 * PI * rng.random::<f64>();
        terms.push(TrigTerm::Plane { freq, phase });
    }
    (Basis::new(terms), vec![2.0 * tau2 / k as f64; k])
}

/// One draw of `μ + Σ w_k ψ_k` from the coefficient prior.
pub fn sample_coefficient_path(prior: &CoefficientPrior, seed: u64) -> Result<RegressionFunction> {
    let mut rng = rng_from(seed);
    let w = prior.sample_coefficients(&mut rng);
    prior.path(&w)
}

/// Prior on the noise scale σ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SigmaPrior {
    /// `log σ ~ N(location, scale²)`
    LogNormal { location: f64, scale: f64 },
    /// `σ² ~ InverseGamma(shape, rate)`
    InverseGammaOnVariance { shape: f64, rate: f64 },
    /// Discrete prior on finitely many atoms.
    Grid { values: Vec<f64>, weights: Vec<f64> },
}

impl Default for SigmaPrior {
    fn default() -> Self {
        SigmaPrior::LogNormal {
            location: 0.0,
            scale: 1.0,
        }
    }
}

impl SigmaPrior {
    pub fn validate(&self) -> Result<()> {
        match self {
            SigmaPrior::LogNormal { location, scale } => {
                if !(location.is_finite() && *scale > 0.0 && scale.is_finite()) {
                    return Err(invalid("log-normal σ prior needs a finite location and positive scale"));
                }
            }
            SigmaPrior::InverseGammaOnVariance { shape, rate } => {
                if !(*shape > 0.0 && *rate > 0.0) {
                    return Err(invalid("inverse-gamma σ² prior needs positive shape and rate"));
                }
            }
            SigmaPrior::Grid { values, weights } => {
                if values.is_empty() || values.len() != weights.len() {
                    return Err(invalid("grid σ prior needs matching nonempty values and weights"));
                }
                if values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                    return Err(invalid("grid σ values must be positive"));
                }
                if weights.iter().any(|w| !(*w > 0.0)) {
                    return Err(invalid("grid σ weights must be positive"));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(invalid(format!("grid σ weights sum to {total}, not 1")));
                }
            }
        }
        Ok(())
    }

    pub fn uniform_grid(values: Vec<f64>) -> Result<Self> {
        let w = 1.0 / values.len().max(1) as f64;
        let p = SigmaPrior::Grid {
            weights: vec![w; values.len()],
            values,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            SigmaPrior::LogNormal { location, scale } => (location + scale * rng.sample::<f64, _>(StandardNormal)).exp(),
            SigmaPrior::InverseGammaOnVariance { shape, rate } => {
                let g: f64 = GammaDist::new(*shape, 1.0 / rate).expect("valid gamma").sample(rng);
                1.0 / g.sqrt()
            }
            SigmaPrior::Grid { values, weights } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (v, w) in values.iter().zip(weights) {
                    acc += w;
                    if u < acc {
                        return *v;
                    }
                }
                *values.last().expect("nonempty grid")
            }
        }
    }

    /// Log prior density of `t = log σ` (log probability for grid atoms).
    pub fn log_density_log_scale(&self, sigma: f64) -> f64 {
        if !(sigma > 0.0) {
            return f64::NEG_INFINITY;
        }
        let t = sigma.ln();
        match self {
            SigmaPrior::LogNormal { location, scale } => {
                let z = (t - location) / scale;
                -0.5 * z * z - scale.ln() - 0.5 * (2.0 * PI).ln()
            }
            SigmaPrior::InverseGammaOnVariance { shape, rate } => {
                // density of v = σ² times |dv/dt| = 2σ²
                let v = sigma * sigma;
                shape * rate.ln() - ln_gamma(*shape) - (shape + 1.0) * v.ln() - rate / v + (2.0 * v).ln()
            }
            SigmaPrior::Grid { values, weights } => values
                .iter()
                .zip(weights)
                .find(|(v, _)| **v == sigma)
                .map_or(f64::NEG_INFINITY, |(_, w)| w.ln()),
        }
    }

    /// `P(σ ≤ s)`.
    pub fn cdf(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        match self {
            SigmaPrior::LogNormal { location, scale } => normal_cdf((s.ln() - location) / scale),
            SigmaPrior::InverseGammaOnVariance { shape, rate } => {
                if s.is_infinite() {
                    return 1.0;
                }
                let g = Gamma::new(*shape, *rate).expect("valid gamma");
                g.sf(1.0 / (s * s))
            }
            SigmaPrior::Grid { values, weights } => values
                .iter()
                .zip(weights)
                .filter(|(v, _)| **v <= s)
                .map(|(_, w)| w)
                .sum(),
        }
    }

    /// `P(lo ≤ σ ≤ hi)`.
    pub fn band_mass(&self, lo: f64, hi: f64) -> f64 {
        match self {
            SigmaPrior::Grid { values, weights } => values
                .iter()
                .zip(weights)
                .filter(|(v, _)| **v >= lo && **v <= hi)
                .map(|(_, w)| w)
                .sum(),
            _ => (self.cdf(hi) - self.cdf(lo)).max(0.0),
        }
    }
}

/// σ band `[exp(−(βn)^{1/4}), exp((βn)^{1/4})]`.
pub fn sigma_band(n: u64, beta: f64) -> Result<(f64, f64)> {
    if !(beta > 0.0) || n == 0 {
        return Err(invalid("β must be positive and n at least 1"));
    }
    let e = (beta * n as f64).powf(0.25);
    Ok(((-e).exp(), e.exp()))
}

/// Exact prior mass of the σ band at `(n, β)`.
pub fn sigma_prior_band_mass(prior: &SigmaPrior, n: u64, beta: f64) -> Result<f64> {
    prior.validate()?;
    let (lo, hi) = sigma_band(n, beta)?;
    Ok(prior.band_mass(lo, hi))
}

/// Monte Carlo band mass with its binomial standard error.
pub fn sigma_prior_band_mass_monte_carlo(
    prior: &SigmaPrior,
    n: u64,
    beta: f64,
    draws: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    prior.validate()?;
    if draws == 0 {
        return Err(invalid("draws must be positive"));
    }
    let (lo, hi) = sigma_band(n, beta)?;
    let mut rng = rng_from(seed);
    let hits = (0..draws)
        .filter(|_| {
            let s = prior.sample(&mut rng);
            s >= lo && s <= hi
        })
        .count();
    let p = hits as f64 / draws as f64;
    Ok((p, (p * (1.0 - p) / draws as f64).sqrt()))
}

/// One σ draw for a given seed.
pub fn sigma_prior_sample(prior: &SigmaPrior, seed: u64) -> f64 {
    prior.sample(&mut rng_from(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function::{partial_derivative, sup_norm};

    fn unit() -> CompactDomain {
        CompactDomain::unit(1)
    }

    #[test]
    fn matern_closed_forms() {
        let k = Kernel::matern(2.5, 1.0, 1.0).unwrap();
        let r: f64 = 0.7;
        let z = 5f64.sqrt() * r;
        assert!((k.at_distance(r) - (1.0 + z + z * z / 3.0) * (-z).exp()).abs() < 1e-14);
        let k = Kernel::matern(3.5, 2.0, 0.5).unwrap();
        let z = 7f64.sqrt() * r / 0.5;
        let exact = 2.0 * (1.0 + z + 2.0 * z * z / 5.0 + z.powi(3) / 15.0) * (-z).exp();
        assert!((k.at_distance(r) - exact).abs() < 1e-13);
        assert!(Kernel::matern(1.5, 1.0, 1.0).is_err());
        assert!(Kernel::matern(2.7, 1.0, 1.0).is_err());
    }

    #[test]
    fn degenerate_prior_returns_mean() {
        let mean = RegressionFunction::sinusoid(unit(), 0, 1.0, 1.0).unwrap();
        let spec = GpSpec::new(mean.clone(), Kernel::squared_exponential(1e-16, 0.2).unwrap()).unwrap();
        let pts: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 19.0]).collect();
        let draw = sample_at_points(&spec, &pts, 3).unwrap();
        for (p, v) in pts.iter().zip(draw) {
            assert!((v - mean.value(p)).abs() < 1e-6);
        }
    }

    #[test]
    fn single_point_is_standard_normal() {
        let spec = GpSpec::centered(unit(), Kernel::squared_exponential(1.0, 0.3).unwrap()).unwrap();
        let f = GramFactor::new(&spec, &[vec![0.4]]).unwrap();
        let draws: Vec<f64> = (0..100_000).map(|s| f.draw(s)[0]).collect();
        let m = crate::numeric::mean(&draws);
        assert!(m.abs() < 0.02);
    }

    #[test]
    fn far_points_are_uncorrelated() {
        let spec = GpSpec::centered(unit(), Kernel::squared_exponential(1.0, 0.05).unwrap()).unwrap();
        let f = GramFactor::new(&spec, &[vec![0.0], vec![1.0]]).unwrap();
        let mut s = 0.0;
        let n = 100_000;
        for seed in 0..n {
            let d = f.draw(seed);
            s += d[0] * d[1];
        }
        assert!((s / n as f64).abs() < 0.02);
    }

    #[test]
    fn duplicate_points_rejected() {
        let spec = GpSpec::centered(unit(), Kernel::squared_exponential(1.0, 0.3).unwrap()).unwrap();
        assert!(sample_at_points(&spec, &[vec![0.1], vec![0.1]], 0).is_err());
    }

    #[test]
    fn dense_se_grid_escalates_or_fails_cleanly() {
        let spec = GpSpec::centered(unit(), Kernel::squared_exponential(1.0, 2.0).unwrap()).unwrap();
        let pts: Vec<Vec<f64>> = (0..400).map(|i| vec![i as f64 / 399.0]).collect();
        match GramFactor::new(&spec, &pts) {
            Ok(f) => assert!(f.jitter() <= 1e-8 * (1.0 + 1e-9)),
            Err(e) => assert!(matches!(e, Error::IllConditionedKernel { .. })),
        }
    }

    #[test]
    fn k1_hermite_feature_is_constant_with_variance_tau2() {
        let spec = GpSpec::centered(unit(), Kernel::squared_exponential(2.5, 0.3).unwrap()).unwrap();
        let prior = CoefficientPrior::from_spec(&spec, 1, FeatureKind::Fourier { seed: 0 }).unwrap();
        assert_eq!(prior.len(), 1);
        assert!((prior.variances[0] - 2.5).abs() < 1e-12);
        assert_eq!(prior.basis.row(&[0.37]), vec![1.0]);
    }

    #[test]
    fn hermite_features_reproduce_the_kernel() {
        let spec = GpSpec::centered(unit(), Kernel::squared_exponential(1.0, 0.2).unwrap()).unwrap();
        let prior = CoefficientPrior::from_spec(&spec, 24, FeatureKind::Fourier { seed: 0 }).unwrap();
        for (x, y) in [(0.1, 0.15), (0.0, 0.4), (0.2, 0.9)] {
            let exact = spec.kernel.eval(&[x], &[y]);
            assert!((prior.covariance(&[x], &[y]) - exact).abs() < 1e-6, "{x} {y}");
        }
    }

    #[test]
    fn cosine_prior_average_variance_is_tau2() {
        let spec = GpSpec::centered(unit(), Kernel::matern(2.5, 1.7, 0.1).unwrap()).unwrap();
        let prior = CoefficientPrior::from_spec(&spec, 32, FeatureKind::Cosine).unwrap();
        let m = 4000;
        let avg: f64 = (0..m).map(|i| (i as f64 + 0.5) / m as f64).map(|x| prior.covariance(&[x], &[x])).sum::<f64>() / m as f64;
        assert!((avg - 1.7).abs() < 1e-9);
    }

    #[test]
    fn coefficient_paths_have_finite_derivative_norms() {
        let spec = GpSpec::new(RegressionFunction::constant(unit(), 0.3), Kernel::matern(2.5, 1.0, 0.2).unwrap()).unwrap();
        let prior = CoefficientPrior::from_spec(&spec, 16, FeatureKind::Cosine).unwrap();
        for seed in 0..50 {
            let path = sample_coefficient_path(&prior, seed).unwrap();
            let d = partial_derivative(&path, 0).unwrap();
            assert!(sup_norm(&d, 256).unwrap().best_upper().is_finite());
        }
    }

    #[test]
    fn path_includes_constant_mean() {
        let spec = GpSpec::new(RegressionFunction::constant(unit(), 0.3), Kernel::squared_exponential(1.0, 0.2).unwrap()).unwrap();
        let prior = CoefficientPrior::from_spec(&spec, 5, FeatureKind::Cosine).unwrap();
        let path = prior.path(&[0.0; 5]).unwrap();
        assert!((path.value(&[0.6]) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn band_mass_examples() {
        let ln = SigmaPrior::default();
        let m = sigma_prior_band_mass(&ln, 1, 1.0).unwrap();
        assert!((m - 0.682_689_492_137_085_9).abs() < 1e-12, "{m:.18}");
        assert!(sigma_prior_band_mass(&ln, 1_000_000, 1.0).unwrap() > 0.999_999);
        let grid = SigmaPrior::uniform_grid(vec![0.5, 1.0, 2.0]).unwrap();
        assert!((grid.band_mass(0.6, 1.9) - 1.0 / 3.0).abs() < 1e-15);
        let ig = SigmaPrior::InverseGammaOnVariance { shape: 2.0, rate: 1.0 };
        let (mc, se) = sigma_prior_band_mass_monte_carlo(&ig, 1, 1.0, 200_000, 1).unwrap();
        assert!((mc - sigma_prior_band_mass(&ig, 1, 1.0).unwrap()).abs() < 4.0 * se);
    }

    #[test]
    fn log_scale_density_integrates_to_one() {
        for p in [SigmaPrior::default(), SigmaPrior::InverseGammaOnVariance { shape: 2.0, rate: 0.5 }] {
            let r = crate::quadrature::integrate(
                |t| p.log_density_log_scale(t.exp()).exp(),
                -15.0,
                15.0,
                &[],
                Default::default(),
            )
            .unwrap();
            assert!((r.value - 1.0).abs() < 1e-9);
        }
    }
}
