//! KL-divergence rate `h(θ)` of a postulated regression model against the
//! truth, excess divergence `J(θ) = h(θ) − h(Θ)`, the sets `N_ε`, and
//! estimation of `h(Θ)` over a basis span.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{q_expectation, Expectation, Hyperplane, MeasureQ};
use crate::error::{invalid, Error, Result};
use crate::function::{l2q_distance_sq, Basis, RegressionFunction};
use crate::noise::{expected_log_phi, phi_entropy_constant, NoiseFamily, NoiseModel};
use crate::numeric::{derive_seed, normal_cdf, rng_from};

/// Absolute tolerance for the inner integrals over y.
pub const INNER_TOL: f64 = 1e-9;

/// Parameter `θ = (η, σ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub eta: RegressionFunction,
    pub sigma: f64,
}

impl Theta {
    pub fn new(eta: RegressionFunction, sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        Ok(Self { eta, sigma })
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("σ must be positive, got {sigma}")))
    }
}

/// Data-generating `θ₀ = (η₀, σ₀)` together with the true error family.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueModel {
    pub theta: Theta,
    pub family: NoiseFamily,
}

impl TrueModel {
    pub fn new(eta0: RegressionFunction, sigma0: f64, family: NoiseFamily) -> Result<Self> {
        Ok(Self {
            theta: Theta::new(eta0, sigma0)?,
            family,
        })
    }

    pub fn eta0(&self) -> &RegressionFunction {
        &self.theta.eta
    }

    pub fn sigma0(&self) -> f64 {
        self.theta.sigma
    }

    pub fn noise(&self) -> NoiseModel {
        NoiseModel {
            family: self.family.clone(),
            scale: self.theta.sigma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ClosedForm,
    Quadrature,
    MonteCarlo,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::ClosedForm => "closed-form",
            Method::Quadrature => "quadrature",
            Method::MonteCarlo => "monte-carlo",
        }
    }
}

/// `h(θ)`, optionally `J(θ)`, and how they were obtained. `h` may be `+∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlRateReport {
    pub h: f64,
    pub j: Option<f64>,
    pub method: Method,
    pub error: f64,
}

impl KlRateReport {
    pub fn with_h_inf(mut self, h_inf: f64) -> Self {
        self.j = Some(self.h - h_inf);
        self
    }

    pub fn is_infinite(&self) -> bool {
        self.h == f64::INFINITY
    }
}

fn same_domain(theta: &Theta, truth: &TrueModel, q: &MeasureQ) -> Result<()> {
    if theta.eta.domain != truth.eta0().domain || q.domain() != &theta.eta.domain {
        return Err(invalid("θ, θ₀ and Q must share one domain"));
    }
    Ok(())
}

fn breaks_of(a: &RegressionFunction, b: &RegressionFunction) -> Vec<Hyperplane> {
    let mut v = a.discontinuities();
    v.extend(b.discontinuities());
    v
}

/// `E_X f(η(X) − η₀(X))` with cells split at declared discontinuities.
fn expect_delta(theta: &Theta, truth: &TrueModel, q: &MeasureQ, f: impl Fn(f64) -> f64) -> Result<Expectation> {
    let q = q.with_breaks(&breaks_of(&theta.eta, truth.eta0()));
    q_expectation(&q, |x| f(theta.eta.value(x) - truth.eta0().value(x)))
}

/// Normal errors: `log(σ/σ₀) − ½ + σ₀²/(2σ²) + E_X(η − η₀)²/(2σ²)`.
pub fn h_normal(theta: &Theta, truth: &TrueModel, q: &MeasureQ) -> Result<KlRateReport> {
    check_sigma(theta.sigma)?;
    if truth.family != NoiseFamily::Normal {
        return Err(invalid("h_normal needs Normal true errors"));
    }
    same_domain(theta, truth, q)?;
    let (s, s0) = (theta.sigma, truth.sigma0());
    let m = l2q_distance_sq(&theta.eta, truth.eta0(), q)?;
    let s2 = 2.0 * s * s;
    Ok(KlRateReport {
        h: (s / s0).ln() - 0.5 + s0 * s0 / s2 + m.value / s2,
        j: None,
        method: Method::ClosedForm,
        error: m.error / s2,
    })
}

/// Laplace errors: `log(σ/σ₀) − 1 + E_X|η − η₀|/σ + (σ₀/σ) E_X exp(−|η − η₀|/σ₀)`.
pub fn h_laplace(theta: &Theta, truth: &TrueModel, q: &MeasureQ) -> Result<KlRateReport> {
    check_sigma(theta.sigma)?;
    if truth.family != NoiseFamily::Laplace {
        return Err(invalid("h_laplace needs Laplace true errors"));
    }
    same_domain(theta, truth, q)?;
    let (s, s0) = (theta.sigma, truth.sigma0());
    let a = expect_delta(theta, truth, q, f64::abs)?;
    // E exp(−|Δ|/σ₀) as 1 + E expm1(·) keeps h(θ₀) exactly zero
    let b = expect_delta(theta, truth, q, |d| (-d.abs() / s0).exp_m1())?;
    Ok(KlRateReport {
        h: (s / s0).ln() - 1.0 + a.value / s + (s0 / s) * (1.0 + b.value),
        j: None,
        method: Method::ClosedForm,
        error: a.error / s + (s0 / s) * b.error,
    })
}

/// `g_{η,σ}(x) = ∫ log φ((σ₀z + η₀(x) − η(x))/σ) φ(z) dz`.
pub fn g_eta_sigma(theta: &Theta, truth: &TrueModel, x: &[f64]) -> Result<f64> {
    check_sigma(theta.sigma)?;
    let delta = truth.eta0().evaluate(x)? - theta.eta.evaluate(x)?;
    expected_log_phi(&truth.family, &truth.family, truth.sigma0(), delta, theta.sigma)
}

/// General symmetric φ: `log(σ/σ₀) + c − E_X g_{η,σ}(X)`.
pub fn h_general(theta: &Theta, truth: &TrueModel, q: &MeasureQ) -> Result<KlRateReport> {
    h_cross_family(theta, &truth.family, truth, q)
}

/// Divergence rate when the postulated family differs from the truth:
/// `E_X ∫ (log f_{θ₀} − log f_θ)(y|x) f_{θ₀}(y|x) dy` by nested quadrature.
pub fn h_cross_family(theta: &Theta, postulated: &NoiseFamily, truth: &TrueModel, q: &MeasureQ) -> Result<KlRateReport> {
    check_sigma(theta.sigma)?;
    same_domain(theta, truth, q)?;
    let (s, s0) = (theta.sigma, truth.sigma0());
    let c = phi_entropy_constant(&truth.family)?;
    let qb = q.with_breaks(&breaks_of(&theta.eta, truth.eta0()));
    let inner = |x: &[f64]| -> f64 {
        let delta = truth.eta0().value(x) - theta.eta.value(x);
        expected_log_phi(&truth.family, postulated, s0, delta, s).unwrap_or(f64::NAN)
    };
    let g = match q_expectation(&qb, inner) {
        Ok(g) => g,
        Err(Error::Evaluation { .. }) => return Ok(infinite_report()),
        Err(e) => return Err(e),
    };
    if !g.value.is_finite() {
        return Ok(infinite_report());
    }
    Ok(KlRateReport {
        h: (s / s0).ln() + c - g.value,
        j: None,
        method: Method::Quadrature,
        error: g.error + INNER_TOL,
    })
}

fn infinite_report() -> KlRateReport {
    KlRateReport {
        h: f64::INFINITY,
        j: None,
        method: Method::Quadrature,
        error: 0.0,
    }
}

/// `h(θ)` for any pairing of postulated and true families, using the
/// closed forms when they apply.
pub fn kl_rate(theta: &Theta, postulated: &NoiseFamily, truth: &TrueModel, q: &MeasureQ) -> Result<KlRateReport> {
    match (postulated, &truth.family) {
        (NoiseFamily::Normal, NoiseFamily::Normal) => h_normal(theta, truth, q),
        (NoiseFamily::Laplace, NoiseFamily::Laplace) => h_laplace(theta, truth, q),
        _ => h_cross_family(theta, postulated, truth, q),
    }
}

/// `h(θ) ≤ h(Θ) + ε`; an infinite `h` is never a member.
pub fn within_n_epsilon(h: f64, h_inf: f64, epsilon: f64) -> bool {
    h.is_finite() && h <= h_inf + epsilon
}

/// Membership of θ in `N_ε = {θ : h(θ) ≤ h(Θ) + ε}`.
pub fn n_epsilon_member(
    theta: &Theta,
    h_inf: f64,
    epsilon: f64,
    postulated: &NoiseFamily,
    truth: &TrueModel,
    q: &MeasureQ,
) -> Result<bool> {
    if !(epsilon > 0.0) {
        return Err(invalid("ε must be positive"));
    }
    Ok(within_n_epsilon(kl_rate(theta, postulated, truth, q)?.h, h_inf, epsilon))
}

/// Normal σ-profile: `σ*² = σ₀² E z² + m` with `m = E_X(η − η₀)²`.
pub fn normal_sigma_star(sigma0: f64, second_moment: f64, m: f64) -> f64 {
    (sigma0 * sigma0 * second_moment + m).sqrt()
}

/// Laplace σ-profile: `σ* = a + b′`, `a = E_X|η − η₀|`,
/// `b′ = σ₀ E_X exp(−|η − η₀|/σ₀)`.
pub fn laplace_sigma_star(a: f64, b_prime: f64) -> f64 {
    a + b_prime
}

/// Profile-optimal σ for fixed η and the resulting `h`.
pub fn sigma_profile(eta: &RegressionFunction, postulated: &NoiseFamily, truth: &TrueModel, q: &MeasureQ) -> Result<(f64, KlRateReport)> {
    let probe = Theta::new(eta.clone(), 1.0)?;
    let s0 = truth.sigma0();
    let sigma = match postulated {
        NoiseFamily::Normal => {
            let m = l2q_distance_sq(eta, truth.eta0(), q)?.value;
            normal_sigma_star(s0, truth.family.second_moment()?, m)
        }
        NoiseFamily::Laplace => {
            let a = abs_moment_field(&probe, truth, q)?;
            laplace_sigma_star(a.0, a.1)
        }
        NoiseFamily::General(_) => {
            return Err(Error::UnsupportedCombination(
                "closed-form σ profile exists only for Normal and Laplace postulates".into(),
            ))
        }
    };
    let theta = Theta::new(eta.clone(), sigma)?;
    Ok((sigma, kl_rate(&theta, postulated, truth, q)?))
}

/// `(a, b′)` with `a + b′ = E_X E_z |σ₀z + η₀ − η|`; for Laplace truth
/// `a = E_X|Δ|` and `b′ = σ₀ E_X exp(−|Δ|/σ₀)`.
fn abs_moment_field(theta: &Theta, truth: &TrueModel, q: &MeasureQ) -> Result<(f64, f64)> {
    let s0 = truth.sigma0();
    match truth.family {
        NoiseFamily::Laplace => {
            let a = expect_delta(theta, truth, q, f64::abs)?.value;
            let b = expect_delta(theta, truth, q, |d| (-d.abs() / s0).exp())?.value;
            Ok((a, s0 * b))
        }
        NoiseFamily::Normal => {
            let total = expect_delta(theta, truth, q, |d| folded_normal_mean(d, s0))?.value;
            Ok((total, 0.0))
        }
        NoiseFamily::General(_) => Err(Error::UnsupportedCombination(
            "absolute moments of a general φ have no closed form".into(),
        )),
    }
}

/// `E|σ₀z + Δ|` for standard normal z.
fn folded_normal_mean(delta: f64, s0: f64) -> f64 {
    let u = delta / s0;
    s0 * (2.0 / std::f64::consts::PI).sqrt() * (-0.5 * u * u).exp() + delta * (2.0 * normal_cdf(u) - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HInfMethod {
    Projection,
    NewtonProfile,
    Multistart,
}

/// Estimate of `h(Θ)` over `span(basis) × (0, ∞)` with its minimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HInfEstimate {
    pub h: f64,
    pub theta: Theta,
    pub method: HInfMethod,
    pub converged: bool,
    pub k: usize,
    /// `E_X(η* − η₀)²` at the minimizer.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct HInfOptions {
    pub starts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for HInfOptions {
    fn default() -> Self {
        Self {
            starts: 4,
            max_iter: 4000,
            seed: 0,
        }
    }
}

/// Weighted least-squares design over the nodes of Q.
struct NodeDesign {
    phi: DMatrix<f64>,
    target: DVector<f64>,
    weights: Vec<f64>,
    points: Vec<Vec<f64>>,
}

fn node_design(basis: &Basis, truth: &TrueModel, q: &MeasureQ) -> NodeDesign {
    let q = q.with_breaks(&truth.eta0().discontinuities()).refined();
    let n = q.len();
    let k = basis.len();
    let mut phi = DMatrix::zeros(n, k);
    let mut target = DVector::zeros(n);
    let mut points = Vec::with_capacity(n);
    for (i, (x, _)) in q.nodes().enumerate() {
        for (j, v) in basis.row(x).into_iter().enumerate() {
            phi[(i, j)] = v;
        }
        target[i] = truth.eta0().value(x);
        points.push(x.to_vec());
    }
    NodeDesign {
        phi,
        target,
        weights: q.weights().to_vec(),
        points,
    }
}

/// `L²(Q)` projection coefficients of η₀ onto the span.
pub fn project_onto_span(basis: &Basis, truth: &TrueModel, q: &MeasureQ) -> Result<Vec<f64>> {
    if basis.is_empty() {
        return Ok(Vec::new());
    }
    let nd = node_design(basis, truth, q);
    Ok(weighted_lstsq(&nd))
}

fn weighted_lstsq(nd: &NodeDesign) -> Vec<f64> {
    let mut a = nd.phi.clone();
    let mut b = nd.target.clone();
    for (i, w) in nd.weights.iter().enumerate() {
        let r = w.sqrt();
        a.row_mut(i).scale_mut(r);
        b[i] *= r;
    }
    let svd = a.svd(true, true);
    let tol = 1e-13 * svd.singular_values.max();
    svd.solve(&b, tol).expect("SVD carries both factors").iter().copied().collect()
}

/// `h(Θ)` over the span of `basis` for the postulated family.
pub fn h_inf_estimate(
    postulated: &NoiseFamily,
    basis: &Basis,
    truth: &TrueModel,
    q: &MeasureQ,
    opts: HInfOptions,
) -> Result<HInfEstimate> {
    let domain = truth.eta0().domain.clone();
    let build = |w: &[f64]| -> Result<RegressionFunction> {
        if basis.is_empty() {
            Ok(RegressionFunction::zero(domain.clone()))
        } else {
            RegressionFunction::expansion(domain.clone(), basis.clone(), w.to_vec())
        }
    };
    let w0 = project_onto_span(basis, truth, q)?;
    let finish = |w: Vec<f64>, sigma: f64, method: HInfMethod, converged: bool, h: Option<f64>| -> Result<HInfEstimate> {
        let eta = build(&w)?;
        let residual = l2q_distance_sq(&eta, truth.eta0(), q)?.value;
        let theta = Theta::new(eta, sigma)?;
        let h = match h {
            Some(h) => h,
            None => kl_rate(&theta, postulated, truth, q)?.h,
        };
        Ok(HInfEstimate {
            h,
            theta,
            method,
            converged,
            k: basis.len(),
            residual,
        })
    };
    match postulated {
        NoiseFamily::Normal => {
            let eta = build(&w0)?;
            let m = l2q_distance_sq(&eta, truth.eta0(), q)?.value;
            let sigma = normal_sigma_star(truth.sigma0(), truth.family.second_moment()?, m);
            let h = if truth.family == NoiseFamily::Normal {
                Some(0.5 * (m / (truth.sigma0() * truth.sigma0())).ln_1p())
            } else {
                None
            };
            finish(w0, sigma, HInfMethod::Projection, true, h)
        }
        NoiseFamily::Laplace if !matches!(truth.family, NoiseFamily::General(_)) => {
            let (w, converged) = laplace_newton(basis, truth, q, w0)?;
            let theta = Theta::new(build(&w)?, 1.0)?;
            let (a, b) = abs_moment_field(&theta, truth, q)?;
            let sigma = laplace_sigma_star(a, b);
            let h = if truth.family == NoiseFamily::Laplace {
                Some((sigma / truth.sigma0()).ln())
            } else {
                None
            };
            finish(w, sigma, HInfMethod::NewtonProfile, converged, h)
        }
        _ => {
            let (w, sigma, converged) = multistart(postulated, basis, truth, q, w0, opts)?;
            finish(w, sigma, HInfMethod::Multistart, converged, None)
        }
    }
}

/// Per-node `A(Δ) = E_z|σ₀z + Δ|` with its first two derivatives in Δ.
fn abs_moment_derivs(family: &NoiseFamily, s0: f64, d: f64) -> (f64, f64, f64) {
    match family {
        NoiseFamily::Laplace => {
            let e = (-d.abs() / s0).exp();
            (d.abs() + s0 * e, d.signum() * (1.0 - e), e / s0)
        }
        _ => {
            let u = d / s0;
            let dens = (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt();
            (folded_normal_mean(d, s0), 2.0 * normal_cdf(u) - 1.0, 2.0 * dens / s0)
        }
    }
}

/// Damped Newton on `w ↦ E_X A(η_w − η₀)`, convex and twice differentiable.
fn laplace_newton(basis: &Basis, truth: &TrueModel, q: &MeasureQ, start: Vec<f64>) -> Result<(Vec<f64>, bool)> {
    if basis.is_empty() {
        return Ok((start, true));
    }
    let nd = node_design(basis, truth, q);
    let s0 = truth.sigma0();
    let k = basis.len();
    let objective = |w: &DVector<f64>| -> f64 {
        let eta = &nd.phi * w;
        nd.weights
            .iter()
            .enumerate()
            .map(|(i, wt)| wt * abs_moment_derivs(&truth.family, s0, eta[i] - nd.target[i]).0)
            .sum()
    };
    let mut w = DVector::from_vec(start);
    let mut f = objective(&w);
    let mut converged = false;
    for _ in 0..200 {
        let eta = &nd.phi * &w;
        let mut grad = DVector::zeros(k);
        let mut hess = DMatrix::zeros(k, k);
        for i in 0..nd.points.len() {
            let (_, d1, d2) = abs_moment_derivs(&truth.family, s0, eta[i] - nd.target[i]);
            let row = nd.phi.row(i);
            grad.axpy(nd.weights[i] * d1, &row.transpose(), 1.0);
            hess.ger(nd.weights[i] * d2, &row.transpose(), &row.transpose(), 1.0);
        }
        if grad.norm() < 1e-13 {
            converged = true;
            break;
        }
        let mut lambda = 1e-12 * hess.diagonal().max().max(1e-300);
        let step = loop {
            let mut h = hess.clone();
            for j in 0..k {
                h[(j, j)] += lambda;
            }
            if let Some(ch) = h.cholesky() {
                break ch.solve(&grad);
            }
            lambda *= 10.0;
        };
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..60 {
            let cand = &w - t * &step;
            let fc = objective(&cand);
            if fc <= f - 1e-4 * t * grad.dot(&step) {
                let rel = (f - fc).abs();
                w = cand;
                f = fc;
                improved = true;
                if rel <= 1e-15 * f.abs().max(1.0) {
                    converged = true;
                }
                break;
            }
            t *= 0.5;
        }
        if !improved || converged {
            converged = converged || grad.norm() < 1e-8;
            break;
        }
    }
    Ok((w.iter().copied().collect(), converged))
}

/// Nelder-Mead from several starts over `(w, log σ)`, run in parallel and
/// reduced by the smallest value found.
fn multistart(
    postulated: &NoiseFamily,
    basis: &Basis,
    truth: &TrueModel,
    q: &MeasureQ,
    w0: Vec<f64>,
    opts: HInfOptions,
) -> Result<(Vec<f64>, f64, bool)> {
    let domain = truth.eta0().domain.clone();
    let qb = q.with_breaks(&truth.eta0().discontinuities());
    let s0 = truth.sigma0();
    let c = phi_entropy_constant(&truth.family)?;
    let nodes: Vec<(Vec<f64>, f64, f64)> = qb.nodes().map(|(x, w)| (x.to_vec(), w, truth.eta0().value(x))).collect();
    let rows: Vec<Vec<f64>> = nodes.iter().map(|(x, _, _)| basis.row(x)).collect();
    let objective = |p: &[f64]| -> f64 {
        let (w, t) = p.split_at(p.len() - 1);
        let sigma = t[0].exp();
        let mut acc = 0.0;
        for ((_, wt, target), row) in nodes.iter().zip(&rows) {
            let eta: f64 = row.iter().zip(w).map(|(a, b)| a * b).sum();
            match expected_log_phi(&truth.family, postulated, s0, target - eta, sigma) {
                Ok(g) if g.is_finite() => acc += wt * g,
                _ => return f64::INFINITY,
            }
        }
        (sigma / s0).ln() + c - acc
    };
    let start_sigma = {
        let eta = if basis.is_empty() {
            RegressionFunction::zero(domain.clone())
        } else {
            RegressionFunction::expansion(domain.clone(), basis.clone(), w0.clone())?
        };
        let m = l2q_distance_sq(&eta, truth.eta0(), q)?.value;
        normal_sigma_star(s0, truth.family.second_moment()?, m)
    };
    let mut base = w0.clone();
    base.push(start_sigma.ln());
    let results: Vec<(Vec<f64>, f64, bool)> = (0..opts.starts.max(1))
        .into_par_iter()
        .map(|s| {
            let mut p = base.clone();
            if s > 0 {
                let mut rng = rng_from(derive_seed(opts.seed, &[s as u64]));
                for v in p.iter_mut() {
                    *v += 0.3 * (2.0 * rng.random::<f64>() - 1.0);
                }
            }
            nelder_mead(&objective, p, 0.1, opts.max_iter)
        })
        .collect();
    let best = results
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("at least one start");
    let (mut p, _, converged) = best;
    let t = p.pop().expect("σ coordinate");
    Ok((p, t.exp(), converged))
}

/// Nelder-Mead simplex minimizer; returns `(argmin, min, converged)`.
pub fn nelder_mead(f: &(dyn Fn(&[f64]) -> f64 + Sync), start: Vec<f64>, step: f64, max_iter: usize) -> (Vec<f64>, f64, bool) {
    let n = start.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = f(&start);
    simplex.push((start.clone(), f0));
    for i in 0..n {
        let mut p = start.clone();
        p[i] += step;
        let v = f(&p);
        simplex.push((p, v));
    }
    let mut converged = false;
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[n].1 - simplex[0].1;
        let size = simplex[1..]
            .iter()
            .map(|(p, _)| p.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread.abs() <= 1e-13 * simplex[0].1.abs().max(1e-3) && size < 1e-7 {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|(p, _)| p[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&simplex[n].0).map(|(c, w)| c + t * (w - c)).collect() };
        let xr = along(-1.0);
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = f(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let x = along(-0.5);
                let v = f(&x);
                (x, v)
            } else {
                let x = along(0.5);
                let v = f(&x);
                (x, v)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for item in simplex.iter_mut().skip(1) {
                    let p: Vec<f64> = item.0.iter().zip(&best).map(|(a, b)| b + 0.5 * (a - b)).collect();
                    let v = f(&p);
                    *item = (p, v);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (p, v) = simplex.swap_remove(0);
    (p, v, converged)
}

/// One row of an h-grid export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HGridRow {
    pub theta_id: usize,
    pub sigma: f64,
    pub h: f64,
    pub j: Option<f64>,
    pub method: Method,
    pub err: f64,
}

pub fn write_h_grid_csv<W: Write>(rows: &[HGridRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["theta_id", "sigma", "h", "J", "method", "err"])?;
    for r in rows {
        w.write_record([
            r.theta_id.to_string(),
            format!("{:.17e}", r.sigma),
            format!("{:.17e}", r.h),
            r.j.map_or_else(String::new, |j| format!("{j:.17e}")),
            r.method.as_str().to_string(),
            format!("{:.3e}", r.err),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::CompactDomain;

    fn dom() -> CompactDomain {
        CompactDomain::unit(1)
    }

    fn truth(family: NoiseFamily, sigma0: f64) -> TrueModel {
        let eta0 = RegressionFunction::sinusoid(dom(), 0, 0.7, 1.0).unwrap();
        TrueModel::new(eta0, sigma0, family).unwrap()
    }

    #[test]
    fn zero_at_truth_is_exact() {
        let q = MeasureQ::uniform(dom());
        for fam in [NoiseFamily::Normal, NoiseFamily::Laplace] {
            let t = truth(fam, 0.8);
            assert_eq!(kl_rate(&t.theta, &t.family, &t, &q).unwrap().h, 0.0);
        }
    }

    #[test]
    fn normal_examples() {
        let q = MeasureQ::uniform(dom());
        let t = truth(NoiseFamily::Normal, 1.0);
        let th = Theta::new(t.eta0().clone(), 2.0).unwrap();
        assert!((h_normal(&th, &t, &q).unwrap().h - 0.318_147_180_559_945_3).abs() < 1e-15);
        let th = Theta::new(t.eta0().shifted(1.0), 1.0).unwrap();
        assert!((h_normal(&th, &t, &q).unwrap().h - 0.5).abs() < 1e-14);
    }

    #[test]
    fn laplace_examples() {
        let q = MeasureQ::uniform(dom());
        let t = truth(NoiseFamily::Laplace, 1.0);
        let th = Theta::new(t.eta0().shifted(1.0), 1.0).unwrap();
        assert!((h_laplace(&th, &t, &q).unwrap().h - (-1f64).exp()).abs() < 1e-14);
        let th = Theta::new(t.eta0().clone(), 2.0).unwrap();
        assert!((h_laplace(&th, &t, &q).unwrap().h - 0.193_147_180_559_945_3).abs() < 1e-15);
    }

    #[test]
    fn g_examples() {
        let t = TrueModel::new(RegressionFunction::constant(dom(), 1.0), 1.0, NoiseFamily::Laplace).unwrap();
        let th = Theta::new(RegressionFunction::zero(dom()), 1.0).unwrap();
        assert!((g_eta_sigma(&th, &t, &[0.3]).unwrap() + 2.061_026_621_731_387_6).abs() < 1e-10);
        let t = TrueModel::new(RegressionFunction::constant(dom(), 0.4), 1.3, NoiseFamily::Normal).unwrap();
        let th = Theta::new(RegressionFunction::zero(dom()), 0.9).unwrap();
        let exact = -0.5 * (2.0 * std::f64::consts::PI).ln() - (1.3f64.powi(2) + 0.16) / (2.0 * 0.81);
        assert!((g_eta_sigma(&th, &t, &[0.3]).unwrap() - exact).abs() < 1e-8);
    }

    #[test]
    fn cross_family_example() {
        let q = MeasureQ::uniform(dom());
        let t = TrueModel::new(RegressionFunction::zero(dom()), 1.0, NoiseFamily::Laplace).unwrap();
        let th = Theta::new(RegressionFunction::zero(dom()), 2f64.sqrt()).unwrap();
        let r = h_cross_family(&th, &NoiseFamily::Normal, &t, &q).unwrap();
        assert!((r.h - 0.072_364_942_924_700_08).abs() < 1e-9, "{}", r.h);
        let (sigma, _) = sigma_profile(&th.eta, &NoiseFamily::Normal, &t, &q).unwrap();
        assert!((sigma - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn n_epsilon_arithmetic() {
        assert!(!within_n_epsilon(0.5, 0.0, 0.3));
        assert!(within_n_epsilon(0.5, 0.4, 0.1));
        assert!(!within_n_epsilon(f64::INFINITY, 0.0, 1e9));
    }

    #[test]
    fn well_specified_h_inf_is_zero() {
        let q = MeasureQ::uniform(dom());
        let basis = Basis::cosine(&dom(), 6);
        let eta0 = RegressionFunction::expansion(dom(), basis.clone(), vec![0.2, -0.5, 0.3, 0.0, 0.1, 0.0]).unwrap();
        for fam in [NoiseFamily::Normal, NoiseFamily::Laplace] {
            let t = TrueModel::new(eta0.clone(), 0.5, fam.clone()).unwrap();
            let est = h_inf_estimate(&fam, &basis, &t, &q, HInfOptions::default()).unwrap();
            assert!(est.h.abs() < 1e-10, "{} {}", fam.name(), est.h);
            assert!((est.theta.sigma - 0.5).abs() < 1e-8);
        }
    }

    #[test]
    fn step_projection_residual_decreases_with_k() {
        let q = MeasureQ::uniform(dom());
        let t = TrueModel::new(RegressionFunction::unit_step(dom(), 0.5), 0.5, NoiseFamily::Normal).unwrap();
        let mut prev = f64::INFINITY;
        for k in [2, 8, 32] {
            let est = h_inf_estimate(&NoiseFamily::Normal, &Basis::cosine(&dom(), k), &t, &q, HInfOptions::default()).unwrap();
            assert!(est.h < prev);
            prev = est.h;
        }
    }

    #[test]
    fn laplace_newton_matches_multistart_on_step() {
        let q = MeasureQ::uniform(dom());
        let t = TrueModel::new(RegressionFunction::unit_step(dom(), 0.5), 0.5, NoiseFamily::Laplace).unwrap();
        let basis = Basis::cosine(&dom(), 3);
        let newton = h_inf_estimate(&NoiseFamily::Laplace, &basis, &t, &q, HInfOptions::default()).unwrap();
        let general = TrueModel::new(t.eta0().clone(), 0.5, NoiseFamily::General(crate::noise::GeneralPhi::laplace())).unwrap();
        let ms = h_inf_estimate(&general.family, &basis, &general, &q, HInfOptions::default()).unwrap();
        assert!(newton.converged);
        assert!(newton.h <= ms.h + 1e-7, "{} {}", newton.h, ms.h);
        assert!((newton.h - ms.h).abs() < 1e-5, "{} {}", newton.h, ms.h);
    }

    #[test]
    fn h_grid_csv_header() {
        let mut buf = Vec::new();
        write_h_grid_csv(
            &[HGridRow {
                theta_id: 0,
                sigma: 1.0,
                h: 0.0,
                j: Some(0.0),
                method: Method::ClosedForm,
                err: 0.0,
            }],
            &mut buf,
        )
        .unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("theta_id,sigma,h,J,method,err\n"));
    }
}
