//! Surrogate posteriors: exact weights over a finite set of parameters and
//! random-walk Metropolis over basis coefficients and σ. Also posterior
//! set masses, their exponential rates, and posterior-predictive distances.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::domain::MeasureQ;
use crate::equipartition::Dataset;
use crate::error::{invalid, Error, Result};
use crate::gp::{CoefficientPrior, SigmaPrior};
use crate::klrate::{kl_rate, Theta, TrueModel};
use crate::noise::{log_density, NoiseFamily};
use crate::numeric::{effective_sample_size, least_squares_slope, log_sum_exp, mean, normal_cdf, rng_from, CompensatedSum};

/// Finite parameter set with prior weights and attached `h` values.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteThetaSpace {
    pub atoms: Vec<Theta>,
    pub weights: Vec<f64>,
    pub h: Vec<f64>,
}

impl DiscreteThetaSpace {
    pub fn new(atoms: Vec<Theta>, weights: Vec<f64>, h: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != weights.len() || atoms.len() != h.len() {
            return Err(invalid("atoms, weights and h must be nonempty and of equal length"));
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(invalid("prior weights must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("prior weights sum to {total}, not 1")));
        }
        if h.iter().any(|v| v.is_nan()) {
            return Err(invalid("h values must be numbers or +∞"));
        }
        Ok(Self { atoms, weights, h })
    }

    /// Attach `h` computed against the truth with the postulated family.
    pub fn with_rates(atoms: Vec<Theta>, weights: Vec<f64>, postulated: &NoiseFamily, truth: &TrueModel, q: &MeasureQ) -> Result<Self> {
        let h = atoms
            .iter()
            .map(|t| kl_rate(t, postulated, truth, q).map(|r| r.h))
            .collect::<Result<Vec<_>>>()?;
        Self::new(atoms, weights, h)
    }

    pub fn uniform(atoms: Vec<Theta>, postulated: &NoiseFamily, truth: &TrueModel, q: &MeasureQ) -> Result<Self> {
        let w = 1.0 / atoms.len().max(1) as f64;
        let weights = vec![w; atoms.len()];
        Self::with_rates(atoms, weights, postulated, truth, q)
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// `h(Θ)` as the minimum over atoms with positive prior weight.
    pub fn h_inf(&self) -> f64 {
        self.h
            .iter()
            .zip(&self.weights)
            .filter(|(_, w)| **w > 0.0)
            .map(|(h, _)| *h)
            .fold(f64::INFINITY, f64::min)
    }

    /// `J(A) = min_{k∈A} h_k − h(Θ)`.
    pub fn j_of(&self, subset: &[usize]) -> Result<f64> {
        check_subset(subset, self.len())?;
        let m = subset.iter().map(|&k| self.h[k]).fold(f64::INFINITY, f64::min);
        Ok(m - self.h_inf())
    }
}

fn check_subset(subset: &[usize], len: usize) -> Result<()> {
    if subset.is_empty() {
        return Err(invalid("subset A must be nonempty"));
    }
    if subset.iter().any(|&k| k >= len) {
        return Err(invalid("subset index out of range"));
    }
    Ok(())
}

/// Posterior weights over the atoms after each prefix length in `ns`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretePosterior {
    pub ns: Vec<usize>,
    /// Normalized log weights, one row per n.
    pub log_weights: Vec<Vec<f64>>,
    /// Set when every unnormalized weight underflowed at some n.
    pub underflow: bool,
}

impl DiscretePosterior {
    pub fn weights(&self, row: usize) -> Vec<f64> {
        self.log_weights[row].iter().map(|l| l.exp()).collect()
    }

    /// `log π(A | Y_n)` for each n.
    pub fn log_mass(&self, subset: &[usize]) -> Result<Vec<f64>> {
        let len = self.log_weights.first().map_or(0, Vec::len);
        check_subset(subset, len)?;
        Ok(self
            .log_weights
            .iter()
            .map(|row| {
                let v: Vec<f64> = subset.iter().map(|&k| row[k]).collect();
                log_sum_exp(&v).min(0.0)
            })
            .collect())
    }
}

/// Per-observation `log f_θ(y_i|x_i) − log f_{θ₀}(y_i|x_i)`.
pub fn log_ratio_increments(dataset: &Dataset, theta: &Theta, postulated: &NoiseFamily, truth: &TrueModel) -> Vec<f64> {
    dataset
        .design
        .points()
        .zip(&dataset.y)
        .map(|(x, y)| {
            log_density(postulated, theta.sigma, y - theta.eta.value(x))
                - log_density(&truth.family, truth.sigma0(), y - truth.eta0().value(x))
        })
        .collect()
}

/// Weights `∝ prior_k R_n(θ_k)` at each n in `ns` (n = 0 gives the prior).
pub fn discrete_posterior(
    space: &DiscreteThetaSpace,
    dataset: &Dataset,
    postulated: &NoiseFamily,
    truth: &TrueModel,
    ns: &[usize],
) -> Result<DiscretePosterior> {
    if ns.iter().any(|&n| n > dataset.len()) || ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("n values must be increasing and within the dataset"));
    }
    let per_atom: Vec<Vec<f64>> = space
        .atoms
        .iter()
        .map(|t| {
            let inc = log_ratio_increments(dataset, t, postulated, truth);
            let mut acc = CompensatedSum::new();
            let mut out = Vec::with_capacity(ns.len());
            let mut i = 0;
            for &n in ns {
                while i < n {
                    acc.add(inc[i]);
                    i += 1;
                }
                out.push(acc.value());
            }
            out
        })
        .collect();
    let log_ratios: Vec<Vec<f64>> = (0..ns.len()).map(|r| per_atom.iter().map(|a| a[r]).collect()).collect();
    Ok(posterior_from_log_ratios(space, ns, &log_ratios))
}

/// Normalize `log prior_k + log R_n(θ_k)` row by row.
pub fn posterior_from_log_ratios(space: &DiscreteThetaSpace, ns: &[usize], log_ratios: &[Vec<f64>]) -> DiscretePosterior {
    let mut underflow = false;
    let log_weights = log_ratios
        .iter()
        .map(|row| {
            let un: Vec<f64> = row.iter().zip(&space.weights).map(|(l, w)| l + w.ln()).collect();
            let z = log_sum_exp(&un);
            if !z.is_finite() {
                underflow = true;
                return un;
            }
            un.into_iter().map(|u| u - z).collect()
        })
        .collect();
    DiscretePosterior {
        ns: ns.to_vec(),
        log_weights,
        underflow,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateDiagnostic {
    pub ns: Vec<usize>,
    /// `log π(A | Y_n)`
    pub log_mass: Vec<f64>,
    /// `(1/n) log π(A | Y_n)`
    pub rate: Vec<f64>,
    pub j: f64,
    /// Least-squares slope of `log π(A|Y_n)` on n over the top decade.
    pub slope: f64,
}

/// Trace of `(1/n) log π(A|Y_n)` with its target `−J(A)` and the fitted
/// slope over `n ≥ n_max/10`.
pub fn posterior_rate_diagnostic(
    space: &DiscreteThetaSpace,
    dataset: &Dataset,
    postulated: &NoiseFamily,
    truth: &TrueModel,
    subset: &[usize],
    ns: &[usize],
) -> Result<RateDiagnostic> {
    check_subset(subset, space.len())?;
    if ns.is_empty() || ns[0] == 0 {
        return Err(invalid("n values must be positive"));
    }
    let post = discrete_posterior(space, dataset, postulated, truth, ns)?;
    let log_mass = post.log_mass(subset)?;
    let rate: Vec<f64> = log_mass.iter().zip(ns).map(|(l, n)| l / *n as f64).collect();
    let n_max = *ns.last().expect("nonempty");
    let (xs, ys): (Vec<f64>, Vec<f64>) = ns
        .iter()
        .zip(&log_mass)
        .filter(|(n, _)| **n * 10 >= n_max)
        .map(|(n, l)| (*n as f64, *l))
        .unzip();
    let slope = if xs.len() >= 2 { least_squares_slope(&xs, &ys) } else { f64::NAN };
    Ok(RateDiagnostic {
        ns: ns.to_vec(),
        log_mass,
        rate,
        j: space.j_of(subset)?,
        slope,
    })
}

/// Prior on `(w, σ)` for the sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPrior {
    pub coefficients: CoefficientPrior,
    pub sigma: SigmaPrior,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub length: usize,
    pub burnin: usize,
    pub thin: usize,
    /// Multiplier on the initial proposal scales.
    pub step: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            length: 20_000,
            burnin: 2_000,
            thin: 10,
            step: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub w: Vec<f64>,
    pub sigma: f64,
    pub log_posterior: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSamples {
    pub draws: Vec<Draw>,
    /// Acceptance rate of coefficient moves after burn-in (σ moves when K = 0).
    pub acceptance_rate: f64,
    pub sigma_acceptance_rate: f64,
    pub config: ChainConfig,
    pub seed: u64,
    pub warning: Option<String>,
    pub prior: CoefficientPrior,
}

impl PosteriorSamples {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn theta(&self, i: usize) -> Result<Theta> {
        let d = &self.draws[i];
        Theta::new(self.prior.path(&d.w)?, d.sigma)
    }

    pub fn coefficient_chain(&self, k: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d.w[k]).collect()
    }

    pub fn sigma_chain(&self) -> Vec<f64> {
        self.draws.iter().map(|d| d.sigma).collect()
    }

    /// Posterior mean with Monte Carlo error `sd/√ESS`.
    pub fn mean_with_error(chain: &[f64]) -> (f64, f64, f64) {
        let m = mean(chain);
        let sd = crate::numeric::variance(chain).sqrt();
        let ess = effective_sample_size(chain);
        (m, sd / ess.sqrt(), ess)
    }

    /// `η_m(x)` for every retained draw.
    pub fn eta_at(&self, x: &[f64]) -> Vec<f64> {
        let mu = self.prior.mean.value(x);
        let row = self.prior.basis.row(x);
        self.draws
            .iter()
            .map(|d| mu + row.iter().zip(&d.w).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }

    /// Equal-weight predictive mixture at `x`.
    pub fn predictive_mixture(&self, x: &[f64], family: &NoiseFamily) -> Mixture {
        let etas = self.eta_at(x);
        let w = 1.0 / etas.len().max(1) as f64;
        Mixture {
            family: family.clone(),
            components: etas.into_iter().zip(&self.draws).map(|(e, d)| (e, d.sigma, w)).collect(),
        }
    }
}

enum Likelihood {
    /// `Σ(r − Φw)² = c − 2wᵀb + wᵀSw` with `r = y − μ(x)`.
    Normal { s: DMatrix<f64>, b: DVector<f64>, c: f64, n: f64 },
    PerObservation { phi: DMatrix<f64>, r: DVector<f64>, family: NoiseFamily },
}

impl Likelihood {
    fn build(prior: &ModelPrior, dataset: &Dataset, family: &NoiseFamily) -> Self {
        let k = prior.coefficients.len();
        let n = dataset.len();
        let mut phi = DMatrix::zeros(n, k);
        let mut r = DVector::zeros(n);
        for (i, x) in dataset.design.points().enumerate() {
            r[i] = dataset.y[i] - prior.coefficients.mean.value(x);
            for (j, v) in prior.coefficients.basis.row(x).into_iter().enumerate() {
                phi[(i, j)] = v;
            }
        }
        match family {
            NoiseFamily::Normal => Likelihood::Normal {
                s: phi.transpose() * &phi,
                b: phi.transpose() * &r,
                c: r.dot(&r),
                n: n as f64,
            },
            _ => Likelihood::PerObservation {
                phi,
                r,
                family: family.clone(),
            },
        }
    }

    fn eval(&self, w: &DVector<f64>, sigma: f64) -> f64 {
        match self {
            Likelihood::Normal { s, b, c, n } => {
                let ss = (c - 2.0 * w.dot(b) + w.dot(&(s * w))).max(0.0);
                -n * sigma.ln() - 0.5 * n * (2.0 * std::f64::consts::PI).ln() - ss / (2.0 * sigma * sigma)
            }
            Likelihood::PerObservation { phi, r, family } => {
                let fit = if phi.ncols() == 0 { DVector::zeros(r.len()) } else { phi * w };
                let mut acc = CompensatedSum::new();
                for i in 0..r.len() {
                    acc.add(log_density(family, sigma, r[i] - fit[i]));
                }
                acc.value()
            }
        }
    }

    fn gram(&self) -> DMatrix<f64> {
        match self {
            Likelihood::Normal { s, .. } => s.clone(),
            Likelihood::PerObservation { phi, .. } => phi.transpose() * phi,
        }
    }

    fn cross(&self) -> DVector<f64> {
        match self {
            Likelihood::Normal { b, .. } => b.clone(),
            Likelihood::PerObservation { phi, r, .. } => phi.transpose() * r,
        }
    }

    fn residual_ss(&self, w: &DVector<f64>) -> (f64, f64) {
        match self {
            Likelihood::Normal { s, b, c, n } => ((c - 2.0 * w.dot(b) + w.dot(&(s * w))).max(0.0), *n),
            Likelihood::PerObservation { phi, r, .. } => {
                let fit = if phi.ncols() == 0 { DVector::zeros(r.len()) } else { phi * w };
                ((r - fit).norm_squared(), r.len() as f64)
            }
        }
    }
}

/// Conditional Gaussian mode and covariance of w given σ (Normal errors).
fn conditional_gaussian(lik: &Likelihood, variances: &[f64], sigma: f64) -> (DVector<f64>, DMatrix<f64>) {
    let k = variances.len();
    let mut prec = lik.gram() / (sigma * sigma);
    for j in 0..k {
        prec[(j, j)] += 1.0 / variances[j];
    }
    let ch = prec.clone().cholesky().expect("prior precision makes this positive definite");
    let cov = ch.inverse();
    let mode = &cov * (lik.cross() / (sigma * sigma));
    (mode, cov)
}

/// Random-walk Metropolis on coefficients `w` and `log σ`. The coefficient
/// proposal is shaped by the conditional Gaussian covariance at a pilot σ;
/// both proposal scales adapt during burn-in and are frozen afterwards.
pub fn mcmc_posterior(prior: &ModelPrior, dataset: &Dataset, family: &NoiseFamily, chain: ChainConfig, seed: u64) -> Result<PosteriorSamples> {
    prior.sigma.validate()?;
    if chain.length < 10 * chain.burnin || chain.length == 0 {
        return Err(invalid("chain length must be at least 10 × burn-in"));
    }
    if chain.thin == 0 || !(chain.step > 0.0) {
        return Err(invalid("thinning must be ≥ 1 and step positive"));
    }
    if dataset.is_empty() {
        return Err(invalid("dataset must be nonempty"));
    }
    let k = prior.coefficients.len();
    let variances = &prior.coefficients.variances;
    let lik = Likelihood::build(prior, dataset, family);

    // pilot σ from two rounds of ridge fits
    let mut pilot = {
        let (ss, n) = lik.residual_ss(&DVector::zeros(k));
        (ss / n).sqrt().max(1e-6)
    };
    let mut w = DVector::zeros(k);
    let mut chol_cov = DMatrix::zeros(k, k);
    if k > 0 {
        for _ in 0..3 {
            let (mode, cov) = conditional_gaussian(&lik, variances, pilot);
            let (ss, n) = lik.residual_ss(&mode);
            pilot = (ss / n).sqrt().max(1e-6);
            w = mode;
            chol_cov = cov;
        }
        chol_cov = chol_cov.cholesky().expect("covariance is positive definite").l();
    }

    let grid = match &prior.sigma {
        SigmaPrior::Grid { values, .. } => Some(values.clone()),
        _ => None,
    };
    let mut sigma = match &grid {
        Some(v) => *v.iter().min_by(|a, b| (a.ln() - pilot.ln()).abs().total_cmp(&(b.ln() - pilot.ln()).abs())).expect("nonempty"),
        None => pilot,
    };
    let log_post = |w: &DVector<f64>, sigma: f64| -> f64 {
        prior.coefficients.log_density(w.as_slice()) + prior.sigma.log_density_log_scale(sigma) + lik.eval(w, sigma)
    };
    let mut current = log_post(&w, sigma);
    if !current.is_finite() {
        return Err(Error::SamplerFailure("initial state has zero posterior density".into()));
    }

    let mut rng = rng_from(seed);
    let mut log_scale_w = ((2.38 / (k.max(1) as f64).sqrt()) * chain.step).ln();
    let mut log_scale_s = (0.5 * chain.step / (dataset.len() as f64).sqrt().max(1.0)).ln();
    let sigma_moves = grid.as_ref().is_none_or(|v| v.len() > 1);
    let (mut acc_w, mut acc_s, mut tried_w, mut tried_s) = (0usize, 0usize, 0usize, 0usize);
    let mut draws = Vec::with_capacity((chain.length - chain.burnin) / chain.thin + 1);

    for it in 0..chain.length {
        let burn = it < chain.burnin;
        let gain = 1.0 / ((it + 1) as f64).powf(0.6);

        if k > 0 {
            let z = DVector::from_iterator(k, (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let prop = &w + log_scale_w.exp() * (&chol_cov * z);
            let lp = log_post(&prop, sigma);
            let alpha = (lp - current).min(0.0).exp();
            let accept = rng.random::<f64>() < alpha;
            if accept {
                w = prop;
                current = lp;
            }
            if burn {
                log_scale_w += gain * (alpha - 0.234);
            } else {
                tried_w += 1;
                acc_w += accept as usize;
            }
        }

        if sigma_moves {
            let (prop, alpha) = match &grid {
                Some(values) => {
                    let i = values.iter().position(|v| *v == sigma).expect("σ is an atom");
                    let mut j = rng.random_range(0..values.len() - 1);
                    if j >= i {
                        j += 1;
                    }
                    let lp = log_post(&w, values[j]);
                    ((values[j], lp), (lp - current).min(0.0).exp())
                }
                None => {
                    let t = sigma.ln() + log_scale_s.exp() * rng.sample::<f64, _>(StandardNormal);
                    let s = t.exp();
                    let lp = log_post(&w, s);
                    ((s, lp), (lp - current).min(0.0).exp())
                }
            };
            let accept = rng.random::<f64>() < alpha;
            if accept {
                sigma = prop.0;
                current = prop.1;
            }
            if burn {
                if grid.is_none() {
                    log_scale_s += gain * (alpha - 0.44);
                }
            } else {
                tried_s += 1;
                acc_s += accept as usize;
            }
        }

        if !burn && (it - chain.burnin).is_multiple_of(chain.thin) {
            draws.push(Draw {
                w: w.iter().copied().collect(),
                sigma,
                log_posterior: current,
            });
        }
    }

    let movable = k > 0 || sigma_moves;
    if movable && acc_w + acc_s == 0 {
        return Err(Error::SamplerFailure("no proposal was accepted after burn-in".into()));
    }
    let rate = |a: usize, t: usize| if t == 0 { 1.0 } else { a as f64 / t as f64 };
    let acceptance_rate = if k > 0 { rate(acc_w, tried_w) } else { rate(acc_s, tried_s) };
    let sigma_acceptance_rate = rate(acc_s, tried_s);
    let warning = if k > 0 && !(0.15..=0.5).contains(&acceptance_rate) {
        Some(format!("coefficient acceptance rate {acceptance_rate:.3} outside [0.15, 0.5]"))
    } else {
        None
    };
    Ok(PosteriorSamples {
        draws,
        acceptance_rate,
        sigma_acceptance_rate,
        config: chain,
        seed,
        warning,
        prior: prior.coefficients.clone(),
    })
}

/// Posterior probability of a set, with Monte Carlo error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetMass {
    pub mass: f64,
    pub error: f64,
}

/// Fraction of draws satisfying the predicate; the error uses the ESS of
/// the indicator chain.
pub fn posterior_set_mass<F>(samples: &PosteriorSamples, predicate: F) -> Result<SetMass>
where
    F: Fn(&Theta) -> Result<bool>,
{
    if samples.is_empty() {
        return Err(invalid("no draws"));
    }
    let ind: Vec<f64> = (0..samples.len())
        .map(|i| samples.theta(i).and_then(|t| predicate(&t)).map(|b| b as u8 as f64))
        .collect::<Result<_>>()?;
    let p = mean(&ind);
    let ess = effective_sample_size(&ind).max(1.0);
    Ok(SetMass {
        mass: p,
        error: (p * (1.0 - p) / ess).sqrt(),
    })
}

/// Exact posterior weight of the atoms satisfying the predicate.
pub fn discrete_set_mass<F>(space: &DiscreteThetaSpace, posterior: &DiscretePosterior, row: usize, predicate: F) -> Result<SetMass>
where
    F: Fn(&Theta, f64) -> bool,
{
    let lw = posterior.log_weights.get(row).ok_or_else(|| invalid("row out of range"))?;
    let mass = space
        .atoms
        .iter()
        .zip(&space.h)
        .zip(lw)
        .filter(|((t, h), _)| predicate(t, **h))
        .map(|(_, l)| l.exp())
        .sum::<f64>();
    Ok(SetMass { mass, error: 0.0 })
}

/// Location-scale mixture `Σ w_m (1/σ_m) φ((y − η_m)/σ_m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub family: NoiseFamily,
    /// `(η_m(x), σ_m, weight)`
    pub components: Vec<(f64, f64, f64)>,
}

impl Mixture {
    pub fn single(family: NoiseFamily, eta: f64, sigma: f64) -> Self {
        Self {
            family,
            components: vec![(eta, sigma, 1.0)],
        }
    }

    pub fn density(&self, y: f64) -> f64 {
        self.components
            .iter()
            .map(|(e, s, w)| w * log_density(&self.family, *s, y - e).exp())
            .sum()
    }

    /// Mixture mass inside `[lo, hi]` from the component CDFs.
    pub fn mass_between(&self, lo: f64, hi: f64) -> f64 {
        self.components
            .iter()
            .map(|(e, s, w)| w * (standard_cdf(&self.family, (hi - e) / s) - standard_cdf(&self.family, (lo - e) / s)))
            .sum()
    }

    fn reach(&self) -> (f64, f64) {
        let r = tail_radius(&self.family);
        let lo = self.components.iter().map(|(e, s, _)| e - r * s).fold(f64::INFINITY, f64::min);
        let hi = self.components.iter().map(|(e, s, _)| e + r * s).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

fn tail_radius(family: &NoiseFamily) -> f64 {
    match family {
        NoiseFamily::Normal => 10.0,
        NoiseFamily::Laplace => 25.0,
        NoiseFamily::General(g) => g.radius(),
    }
}

fn standard_cdf(family: &NoiseFamily, z: f64) -> f64 {
    match family {
        NoiseFamily::Normal => normal_cdf(z),
        NoiseFamily::Laplace => {
            if z < 0.0 {
                0.5 * z.exp()
            } else {
                1.0 - 0.5 * (-z).exp()
            }
        }
        NoiseFamily::General(_) => {
            let r = family.radius();
            if z <= -r {
                return 0.0;
            }
            if z >= r {
                return 1.0;
            }
            family
                .integrate_against(|_| 1.0, &[], crate::quadrature::QuadOptions::with_abs_tol(1e-12))
                .map(|total| {
                    let part = crate::quadrature::integrate(
                        |t| family.log_phi(t).exp(),
                        -r,
                        z,
                        &[0.0],
                        crate::quadrature::QuadOptions::with_abs_tol(1e-12),
                    )
                    .map(|i| i.value)
                    .unwrap_or(f64::NAN);
                    part / total
                })
                .unwrap_or(f64::NAN)
        }
    }
}

/// Uniform y-grid with an odd number of points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

pub const DEFAULT_Y_POINTS: usize = 40_001;
pub const MAX_REFINEMENTS: usize = 4;

impl YGrid {
    pub fn new(lo: f64, hi: f64, points: usize) -> Result<Self> {
        if !(lo < hi) || points < 5 || points.is_multiple_of(2) {
            return Err(invalid("y-grid needs lo < hi and an odd number (≥ 5) of points"));
        }
        Ok(Self { lo, hi, points })
    }

    /// Covers every component of each mixture out to its family's tail radius.
    pub fn covering(mixtures: &[&Mixture], points: usize) -> Result<Self> {
        let (lo, hi) = mixtures.iter().map(|m| m.reach()).fold((f64::INFINITY, f64::NEG_INFINITY), |a, b| (a.0.min(b.0), a.1.max(b.1)));
        Self::new(lo, hi, points)
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.points - 1) as f64
    }

    pub fn values(&self) -> Vec<f64> {
        crate::numeric::linspace(self.lo, self.hi, self.points)
    }
}

/// Composite Simpson sum on a uniform grid with stride `stride`.
fn simpson(values: &[f64], h: f64, stride: usize) -> f64 {
    let idx: Vec<usize> = (0..values.len()).step_by(stride).collect();
    let m = idx.len();
    let hs = h * stride as f64;
    let mut acc = CompensatedSum::new();
    for (j, &i) in idx.iter().enumerate() {
        let c = if j == 0 || j == m - 1 {
            1.0
        } else if j % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc.add(c * values[i]);
    }
    acc.value() * hs / 3.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDensity {
    pub grid: YGrid,
    pub values: Vec<f64>,
    /// Quadrature mass on the grid (renormalization factor).
    pub mass: f64,
    /// Mass inside the grid from the component CDFs.
    pub captured: f64,
}

/// Mixture density on the grid; fails when the grid misses more than 1e-8
/// of the mass or the quadrature mass is off by more than 1e-6.
pub fn posterior_predictive_density(mixture: &Mixture, grid: &YGrid) -> Result<PredictiveDensity> {
    if mixture.components.is_empty() {
        return Err(invalid("mixture has no components"));
    }
    let values: Vec<f64> = grid.values().into_iter().map(|y| mixture.density(y)).collect();
    let mass = simpson(&values, grid.step(), 1);
    let captured = mixture.mass_between(grid.lo, grid.hi);
    if captured < 1.0 - 1e-8 {
        return Err(Error::GridTooNarrow { mass: captured });
    }
    if (mass - 1.0).abs() > 1e-6 {
        return Err(Error::GridTooCoarse { mass });
    }
    Ok(PredictiveDensity {
        grid: *grid,
        values,
        mass,
        captured,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveReport {
    pub hellinger_sq: f64,
    pub tv: f64,
    pub quadrature_error: f64,
    pub x_new: Vec<f64>,
    pub n: usize,
    pub mass: f64,
}

/// Squared Hellinger `1 − ∫√(pq)` and total variation `½∫|p − q|` between
/// the true conditional law at `x_new` and the predictive mixture.
///
/// A grid whose quadrature mass misses 1 by more than 1e-6 is refined by
/// halving its step, up to `MAX_REFINEMENTS` times.
pub fn predictive_distance(truth: &TrueModel, x_new: &[f64], mixture: &Mixture, n: usize, points: usize) -> Result<PredictiveReport> {
    let p = Mixture::single(truth.family.clone(), truth.eta0().evaluate(x_new)?, truth.sigma0());
    let mut grid = YGrid::covering(&[&p, mixture], points)?;
    let mut refinements = 0;
    let (pd, qd) = loop {
        let both = posterior_predictive_density(&p, &grid).and_then(|pd| Ok((pd, posterior_predictive_density(mixture, &grid)?)));
        match both {
            Err(Error::GridTooCoarse { .. }) if refinements < MAX_REFINEMENTS => {
                grid.points = 2 * grid.points - 1;
                refinements += 1;
            }
            other => break other?,
        }
    };
    let root: Vec<f64> = pd.values.iter().zip(&qd.values).map(|(a, b)| (a * b).sqrt()).collect();
    let diff: Vec<f64> = pd.values.iter().zip(&qd.values).map(|(a, b)| (a - b).abs()).collect();
    let h = grid.step();
    let bc = simpson(&root, h, 1);
    let tv = 0.5 * simpson(&diff, h, 1);
    let bc_half = simpson(&root, h, 2);
    let tv_half = 0.5 * simpson(&diff, h, 2);
    Ok(PredictiveReport {
        hellinger_sq: (1.0 - bc).clamp(0.0, 1.0),
        tv: tv.clamp(0.0, 1.0),
        quadrature_error: (bc - bc_half).abs().max((tv - tv_half).abs()),
        x_new: x_new.to_vec(),
        n,
        mass: qd.mass,
    })
}

pub fn write_predictive_csv<W: Write>(rows: &[(usize, PredictiveReport)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "replicate", "x_new", "hellinger_sq", "tv", "quadrature_error", "mass"])?;
    for (rep, r) in rows {
        let x: Vec<String> = r.x_new.iter().map(|v| v.to_string()).collect();
        w.write_record([
            r.n.to_string(),
            rep.to_string(),
            x.join(" "),
            format!("{:.17e}", r.hellinger_sq),
            format!("{:.17e}", r.tv),
            format!("{:.3e}", r.quadrature_error),
            format!("{:.15}", r.mass),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{make_design, CompactDomain, DesignKind};
    use crate::equipartition::{log_ratio, simulate};
    use crate::function::RegressionFunction;

    fn dom() -> CompactDomain {
        CompactDomain::unit(1)
    }

    fn setup(n: usize, seed: u64) -> (TrueModel, Dataset, DiscreteThetaSpace, MeasureQ) {
        let q = MeasureQ::uniform(dom());
        let eta0 = RegressionFunction::sinusoid(dom(), 0, 0.5, 1.0).unwrap();
        let truth = TrueModel::new(eta0.clone(), 1.0, NoiseFamily::Normal).unwrap();
        let design = make_design(&q, DesignKind::IidFromQ { seed }, n).unwrap();
        let ds = simulate(&truth, &design, seed).unwrap();
        let atoms = vec![truth.theta.clone(), Theta::new(eta0.shifted(1.0), 1.0).unwrap()];
        let space = DiscreteThetaSpace::uniform(atoms, &NoiseFamily::Normal, &truth, &q).unwrap();
        (truth, ds, space, q)
    }

    #[test]
    fn n_zero_gives_prior_and_weights_normalize() {
        let (truth, ds, space, _) = setup(200, 1);
        let post = discrete_posterior(&space, &ds, &NoiseFamily::Normal, &truth, &[0, 10, 200]).unwrap();
        assert_eq!(post.weights(0), vec![0.5, 0.5]);
        for r in 0..3 {
            assert!((post.weights(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_log_ratio_route() {
        let (truth, ds, space, _) = setup(300, 2);
        let ns = [300];
        let a = discrete_posterior(&space, &ds, &NoiseFamily::Normal, &truth, &ns).unwrap();
        let lr: Vec<f64> = space.atoms.iter().map(|t| log_ratio(&ds, t, &truth, &NoiseFamily::Normal).unwrap()).collect();
        let b = posterior_from_log_ratios(&space, &ns, &[lr]);
        for (x, y) in a.log_weights[0].iter().zip(&b.log_weights[0]) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn permutation_invariance() {
        let (truth, ds, space, q) = setup(100, 3);
        let rev = DiscreteThetaSpace::uniform(space.atoms.iter().rev().cloned().collect(), &NoiseFamily::Normal, &truth, &q).unwrap();
        let a = discrete_posterior(&space, &ds, &NoiseFamily::Normal, &truth, &[100]).unwrap();
        let b = discrete_posterior(&rev, &ds, &NoiseFamily::Normal, &truth, &[100]).unwrap();
        assert!((a.log_weights[0][0] - b.log_weights[0][1]).abs() < 1e-12);
    }

    #[test]
    fn rate_diagnostic_trivial_sets() {
        let (truth, ds, space, _) = setup(2000, 4);
        let ns: Vec<usize> = (1..=20).map(|i| i * 100).collect();
        let all = posterior_rate_diagnostic(&space, &ds, &NoiseFamily::Normal, &truth, &[0, 1], &ns).unwrap();
        assert!(all.log_mass.iter().all(|l| *l == 0.0));
        let best = posterior_rate_diagnostic(&space, &ds, &NoiseFamily::Normal, &truth, &[0], &ns).unwrap();
        assert_eq!(best.j, 0.0);
        assert!(best.rate.last().unwrap().abs() < 1e-6);
        let bad = posterior_rate_diagnostic(&space, &ds, &NoiseFamily::Normal, &truth, &[1], &ns).unwrap();
        assert!((bad.j - 0.5).abs() < 1e-12);
        assert!(posterior_rate_diagnostic(&space, &ds, &NoiseFamily::Normal, &truth, &[], &ns).is_err());
    }

    #[test]
    fn bhattacharyya_closed_form() {
        let truth = TrueModel::new(RegressionFunction::zero(dom()), 1.0, NoiseFamily::Normal).unwrap();
        let mix = Mixture::single(NoiseFamily::Normal, 1.0, 1.0);
        let r = predictive_distance(&truth, &[0.5], &mix, 0, DEFAULT_Y_POINTS).unwrap();
        assert!((r.hellinger_sq - 0.117_503_097_415_404_6).abs() < 1e-9);
        assert!(r.tv >= r.hellinger_sq / 2.0);
        let same = Mixture::single(NoiseFamily::Normal, 0.0, 1.0);
        let r = predictive_distance(&truth, &[0.5], &same, 0, DEFAULT_Y_POINTS).unwrap();
        assert!(r.hellinger_sq < 1e-8 && r.tv < 1e-8);
    }

    #[test]
    fn laplace_predictive_mass() {
        let mix = Mixture {
            family: NoiseFamily::Laplace,
            components: vec![(0.0, 0.5, 0.5), (0.3, 0.4, 0.5)],
        };
        let grid = YGrid::covering(&[&mix], DEFAULT_Y_POINTS).unwrap();
        let pd = posterior_predictive_density(&mix, &grid).unwrap();
        assert!((pd.mass - 1.0).abs() < 1e-6);
        let narrow = YGrid::new(-1.0, 1.0, 1001).unwrap();
        assert!(matches!(posterior_predictive_density(&mix, &narrow), Err(Error::GridTooNarrow { .. })));
    }

    #[test]
    fn conjugate_mean_within_mc_error() {
        use crate::gp::{FeatureKind, GpSpec, Kernel};
        let q = MeasureQ::uniform(dom());
        let spec = GpSpec::centered(dom(), Kernel::matern(2.5, 1.0, 0.3).unwrap()).unwrap();
        let cp = CoefficientPrior::from_spec(&spec, 3, FeatureKind::Cosine).unwrap();
        let eta0 = RegressionFunction::sinusoid(dom(), 0, 0.7, 1.0).unwrap();
        let truth = TrueModel::new(eta0, 0.5, NoiseFamily::Normal).unwrap();
        let design = make_design(&q, DesignKind::IidFromQ { seed: 5 }, 100).unwrap();
        let ds = simulate(&truth, &design, 5).unwrap();
        let prior = ModelPrior {
            coefficients: cp.clone(),
            sigma: SigmaPrior::uniform_grid(vec![0.5]).unwrap(),
        };
        let chain = ChainConfig { length: 40_000, burnin: 4_000, thin: 1, step: 1.0 };
        let s = mcmc_posterior(&prior, &ds, &NoiseFamily::Normal, chain, 9).unwrap();
        assert!(s.warning.is_none(), "{:?}", s.warning);
        let lik = Likelihood::build(&prior, &ds, &NoiseFamily::Normal);
        let (mode, _) = conditional_gaussian(&lik, &cp.variances, 0.5);
        for k in 0..3 {
            let (m, err, _) = PosteriorSamples::mean_with_error(&s.coefficient_chain(k));
            assert!((m - mode[k]).abs() < 3.0 * err, "k={k} {m} {} {err}", mode[k]);
        }
    }

    #[test]
    fn grid_sigma_matches_enumeration() {
        let (truth, ds, _, q) = setup(60, 6);
        let values = vec![0.7, 1.0, 1.4];
        let atoms: Vec<Theta> = values.iter().map(|s| Theta::new(truth.eta0().clone(), *s).unwrap()).collect();
        let space = DiscreteThetaSpace::uniform(atoms, &NoiseFamily::Normal, &truth, &q).unwrap();
        let exact = discrete_posterior(&space, &ds, &NoiseFamily::Normal, &truth, &[60]).unwrap().weights(0);
        let prior = ModelPrior {
            coefficients: CoefficientPrior::mean_only(truth.eta0().clone()),
            sigma: SigmaPrior::uniform_grid(values.clone()).unwrap(),
        };
        let chain = ChainConfig { length: 50_000, burnin: 1_000, thin: 1, step: 1.0 };
        let s = mcmc_posterior(&prior, &ds, &NoiseFamily::Normal, chain, 3).unwrap();
        let tv: f64 = values
            .iter()
            .zip(&exact)
            .map(|(v, p)| (s.draws.iter().filter(|d| d.sigma == *v).count() as f64 / s.len() as f64 - p).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv <= 0.05, "tv {tv}");
    }

    #[test]
    fn chain_length_guard() {
        let (truth, ds, _, _) = setup(20, 7);
        let prior = ModelPrior {
            coefficients: CoefficientPrior::mean_only(truth.eta0().clone()),
            sigma: SigmaPrior::default(),
        };
        let chain = ChainConfig { length: 100, burnin: 20, thin: 1, step: 1.0 };
        assert!(mcmc_posterior(&prior, &ds, &NoiseFamily::Normal, chain, 1).is_err());
    }
}
