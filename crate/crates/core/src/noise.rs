//! Symmetric error families: Normal, Laplace (double exponential), and a
//! general log-Lipschitz density φ tabulated for sampling.
//!
//! Every family is described on the standardized scale through `log φ(z)`;
//! a [`NoiseModel`] attaches the scale σ so the error density is
//! `(1/σ) φ(ε/σ)`.

use std::f64::consts::{LN_2, PI};
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::function::{sup_norm_of_difference, RegressionFunction};
use crate::numeric::{open_unit, rng_from, CompensatedSum};
use crate::quadrature::{gauss_legendre, integrate, QuadOptions};

/// Default truncation radius for integrals against φ, in standardized units.
pub const DEFAULT_RADIUS: f64 = 40.0;
const CDF_CELLS: usize = 20_000;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

type LogDensity = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

struct CdfTable {
    lo: f64,
    step: f64,
    cdf: Vec<f64>,
}

/// User-supplied symmetric density on the standardized scale.
#[derive(Clone)]
pub struct GeneralPhi {
    name: String,
    log_phi: LogDensity,
    lipschitz: f64,
    radius: f64,
    table: Arc<CdfTable>,
}

impl fmt::Debug for GeneralPhi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeneralPhi")
            .field("name", &self.name)
            .field("lipschitz", &self.lipschitz)
            .field("radius", &self.radius)
            .finish()
    }
}

impl GeneralPhi {
    /// Validates symmetry, the Lipschitz constant of `log φ` on a probe grid,
    /// and normalization (within 1e-8 on `[-radius, radius]`), then tabulates
    /// the CDF.
    pub fn new<F>(name: impl Into<String>, log_phi: F, lipschitz: f64, radius: f64) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let name = name.into();
        if !(lipschitz > 0.0 && radius > 0.0) {
            return Err(Error::InvalidModel(format!("{name}: lipschitz and radius must be positive")));
        }
        let probe: Vec<f64> = (0..=4000).map(|i| -radius + 2.0 * radius * i as f64 / 4000.0).collect();
        for &z in &probe {
            let (a, b) = (log_phi(z), log_phi(-z));
            if !a.is_finite() {
                return Err(Error::InvalidModel(format!("{name}: log φ({z}) = {a}")));
            }
            if (a - b).abs() > 1e-12 * a.abs().max(1.0) {
                return Err(Error::InvalidModel(format!("{name}: φ is not symmetric at {z}")));
            }
        }
        for w in probe.windows(2) {
            let slope = (log_phi(w[1]) - log_phi(w[0])).abs() / (w[1] - w[0]);
            if slope > lipschitz * (1.0 + 1e-9) {
                return Err(Error::InvalidModel(format!(
                    "{name}: log φ has slope {slope} > L = {lipschitz} near {}",
                    w[0]
                )));
            }
        }
        let mass = integrate(|z| log_phi(z).exp(), -radius, radius, &[0.0], QuadOptions::default())
            .map_err(|e| Error::InvalidModel(format!("{name}: normalization integral failed: {e}")))?
            .value;
        if (mass - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidModel(format!("{name}: φ integrates to {mass}, not 1")));
        }
        let table = Arc::new(tabulate_cdf(&log_phi, radius));
        Ok(Self {
            name,
            log_phi: Arc::new(log_phi),
            lipschitz,
            radius,
            table,
        })
    }

    pub fn laplace() -> Self {
        Self::new("laplace", |z: f64| -LN_2 - z.abs(), 1.0, DEFAULT_RADIUS).expect("Laplace density is valid")
    }

    /// Standard normal; `log φ` is only Lipschitz on the truncated range.
    pub fn normal() -> Self {
        Self::new("normal", |z: f64| -HALF_LN_2PI - 0.5 * z * z, DEFAULT_RADIUS, DEFAULT_RADIUS)
            .expect("normal density is valid")
    }

    /// Standard logistic density `e^{-z}/(1+e^{-z})²`, with `L = 1`.
    pub fn logistic() -> Self {
        Self::new(
            "logistic",
            |z: f64| {
                let a = z.abs();
                -a - 2.0 * (-a).exp().ln_1p()
            },
            1.0,
            DEFAULT_RADIUS,
        )
        .expect("logistic density is valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    fn inverse_cdf(&self, u: f64) -> f64 {
        let t = &self.table;
        let i = t.cdf.partition_point(|&c| c < u).clamp(1, t.cdf.len() - 1) - 1;
        let x0 = t.lo + t.step * i as f64;
        let (c0, c1) = (t.cdf[i], t.cdf[i + 1]);
        let mut x = if c1 > c0 {
            x0 + t.step * ((u - c0) / (c1 - c0)).clamp(0.0, 1.0)
        } else {
            x0
        };
        let (gx, gw) = gauss_legendre(4);
        for _ in 0..2 {
            let h = 0.5 * (x - x0);
            let c = 0.5 * (x + x0);
            let partial: f64 = gx.iter().zip(&gw).map(|(g, w)| w * (self.log_phi)(c + h * g).exp()).sum::<f64>() * h;
            let dens = (self.log_phi)(x).exp();
            if dens <= 0.0 {
                break;
            }
            x -= (c0 + partial - u) / dens;
            x = x.clamp(x0, x0 + t.step);
        }
        x
    }
}

fn tabulate_cdf(log_phi: &dyn Fn(f64) -> f64, radius: f64) -> CdfTable {
    let (gx, gw) = gauss_legendre(8);
    let step = 2.0 * radius / CDF_CELLS as f64;
    let lo = -radius;
    let mut cdf = Vec::with_capacity(CDF_CELLS + 1);
    let mut acc = CompensatedSum::new();
    cdf.push(0.0);
    for i in 0..CDF_CELLS {
        let c = lo + step * (i as f64 + 0.5);
        let cell: f64 = gx.iter().zip(&gw).map(|(g, w)| w * log_phi(c + 0.5 * step * g).exp()).sum::<f64>() * 0.5 * step;
        acc.add(cell);
        cdf.push(acc.value());
    }
    let total = acc.value();
    cdf.iter_mut().for_each(|c| *c /= total);
    CdfTable { lo, step, cdf }
}

/// Error family on the standardized scale.
#[derive(Debug, Clone)]
pub enum NoiseFamily {
    Normal,
    Laplace,
    General(GeneralPhi),
}

impl PartialEq for NoiseFamily {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (NoiseFamily::Normal, NoiseFamily::Normal) | (NoiseFamily::Laplace, NoiseFamily::Laplace) => true,
            (NoiseFamily::General(a), NoiseFamily::General(b)) => Arc::ptr_eq(&a.log_phi, &b.log_phi),
            _ => false,
        }
    }
}

impl NoiseFamily {
    /// Resolve `normal`, `laplace`, or a general family by name
    /// (`general:laplace`, `general:normal`, `logistic`).
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "normal" | "gaussian" => Ok(Self::Normal),
            "laplace" | "double_exponential" => Ok(Self::Laplace),
            "logistic" | "general:logistic" => Ok(Self::General(GeneralPhi::logistic())),
            "general:laplace" => Ok(Self::General(GeneralPhi::laplace())),
            "general:normal" => Ok(Self::General(GeneralPhi::normal())),
            other => Err(invalid(format!("unknown noise family `{other}`"))),
        }
    }

    pub fn name(&self) -> String {
        match self {
            NoiseFamily::Normal => "normal".into(),
            NoiseFamily::Laplace => "laplace".into(),
            NoiseFamily::General(g) => format!("general:{}", g.name),
        }
    }

    /// `log φ(z)` on the standardized scale.
    #[inline]
    pub fn log_phi(&self, z: f64) -> f64 {
        match self {
            NoiseFamily::Normal => -HALF_LN_2PI - 0.5 * z * z,
            NoiseFamily::Laplace => -LN_2 - z.abs(),
            NoiseFamily::General(g) => (g.log_phi)(z),
        }
    }

    /// Truncation radius used for integrals against φ.
    pub fn radius(&self) -> f64 {
        match self {
            NoiseFamily::General(g) => g.radius,
            _ => DEFAULT_RADIUS,
        }
    }

    /// Points where `log φ` may fail to be smooth.
    fn kinks(&self) -> &'static [f64] {
        match self {
            NoiseFamily::Normal => &[],
            _ => &[0.0],
        }
    }

    /// One standardized draw.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            NoiseFamily::Normal => rng.sample(StandardNormal),
            NoiseFamily::Laplace => {
                let u = open_unit(rng);
                if u < 0.5 {
                    (2.0 * u).ln()
                } else {
                    -(2.0 * (1.0 - u)).ln()
                }
            }
            NoiseFamily::General(g) => g.inverse_cdf(open_unit(rng)),
        }
    }

    /// `∫ h(z) φ(z) dz` over the truncated range, with extra breakpoints.
    pub fn integrate_against(&self, h: impl Fn(f64) -> f64, breaks: &[f64], opts: QuadOptions) -> Result<f64> {
        let r = self.radius();
        let mut cuts = self.kinks().to_vec();
        cuts.extend_from_slice(breaks);
        Ok(integrate(|z| h(z) * self.log_phi(z).exp(), -r, r, &cuts, opts)?.value)
    }

    /// `E z²` under φ.
    pub fn second_moment(&self) -> Result<f64> {
        match self {
            NoiseFamily::Normal => Ok(1.0),
            NoiseFamily::Laplace => Ok(2.0),
            NoiseFamily::General(_) => self.integrate_against(|z| z * z, &[], QuadOptions::default()),
        }
    }
}

/// Error distribution `(1/σ) φ(ε/σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub family: NoiseFamily,
    pub scale: f64,
}

impl NoiseModel {
    pub fn new(family: NoiseFamily, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(invalid(format!("noise scale must be positive, got {scale}")));
        }
        Ok(Self { family, scale })
    }

    pub fn normal(scale: f64) -> Self {
        Self::new(NoiseFamily::Normal, scale).expect("positive scale")
    }

    pub fn laplace(scale: f64) -> Self {
        Self::new(NoiseFamily::Laplace, scale).expect("positive scale")
    }

    pub fn log_density(&self, residual: f64) -> f64 {
        log_density(&self.family, self.scale, residual)
    }
}

/// `log[(1/σ) φ(ε/σ)]`.
#[inline]
pub fn log_density(family: &NoiseFamily, sigma: f64, residual: f64) -> f64 {
    family.log_phi(residual / sigma) - sigma.ln()
}

/// `n` i.i.d. draws from the model, reproducible for a fixed seed.
pub fn sample(model: &NoiseModel, n: usize, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(invalid("sample size must be at least 1"));
    }
    let mut rng = rng_from(seed);
    Ok((0..n).map(|_| model.scale * model.family.draw(&mut rng)).collect())
}

/// `E|ε + Δ|` for Laplace errors with scale σ₀: `|Δ| + σ₀ exp(−|Δ|/σ₀)`.
pub fn laplace_abs_moment(delta: f64, sigma0: f64) -> f64 {
    let a = delta.abs();
    a + sigma0 * (-a / sigma0).exp()
}

/// `c = ∫ log φ(z) φ(z) dz`; closed form for Normal and Laplace.
pub fn phi_entropy_constant(family: &NoiseFamily) -> Result<f64> {
    match family {
        NoiseFamily::Normal => Ok(-HALF_LN_2PI - 0.5),
        NoiseFamily::Laplace => Ok(-LN_2 - 1.0),
        NoiseFamily::General(_) => entropy_by_quadrature(family),
    }
}

/// `c` by quadrature for any family.
pub fn entropy_by_quadrature(family: &NoiseFamily) -> Result<f64> {
    family.integrate_against(|z| family.log_phi(z), &[], QuadOptions::default())
}

/// `∫ log φ((σ₀ z + Δ)/σ) φ(z) dz` where φ is the standardized density of
/// `truth` and `post` is the postulated family evaluated inside the log.
pub fn expected_log_phi(
    truth: &NoiseFamily,
    post: &NoiseFamily,
    sigma0: f64,
    delta: f64,
    sigma: f64,
) -> Result<f64> {
    let breaks = [-delta / sigma0];
    truth.integrate_against(
        |z| post.log_phi((sigma0 * z + delta) / sigma),
        if post.kinks().is_empty() { &[] } else { &breaks },
        QuadOptions::with_abs_tol(1e-11),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Holds,
    Violated,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MgfPoint {
    pub lambda: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub bound: f64,
    pub status: CheckStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MgfReport {
    pub c1: f64,
    pub c2: f64,
    pub s: f64,
    pub sup_diff: f64,
    pub draws: usize,
    pub points: Vec<MgfPoint>,
    pub status: CheckStatus,
}

/// Inputs for the sub-exponential MGF check at one covariate point.
#[derive(Debug, Clone)]
pub struct MgfSetting<'a> {
    pub truth: &'a NoiseModel,
    pub eta: &'a RegressionFunction,
    pub eta0: &'a RegressionFunction,
    pub sigma: f64,
    pub x: &'a [f64],
}

/// λ values `{−0.8, −0.4, 0, 0.4, 0.8} / s`.
pub fn default_lambda_grid(s: f64) -> Vec<f64> {
    [-0.8, -0.4, 0.0, 0.4, 0.8].iter().map(|f| f / s).collect()
}

/// `s = (c₁‖η − η₀‖ + c₂)/σ`.
pub fn subexponential_scale(setting: &MgfSetting<'_>, c1: f64, c2: f64) -> Result<(f64, f64)> {
    let m = crate::function::default_resolution(setting.eta.dim());
    let diff = sup_norm_of_difference(setting.eta, setting.eta0, m)?;
    Ok(((c1 * diff + c2) / setting.sigma, diff))
}

/// Monte Carlo estimate of `E exp(λU)`, `U = log φ((y − η(x))/σ) − g(x)`,
/// against the bound `exp(λ² s² / 2)` on each λ.
pub fn subexponential_mgf_check(
    setting: &MgfSetting<'_>,
    lambdas: &[f64],
    c1: f64,
    c2: f64,
    draws: usize,
    seed: u64,
) -> Result<MgfReport> {
    if !(setting.sigma > 0.0) || !(c1 > 0.0 && c2 > 0.0) {
        return Err(invalid("σ, c₁ and c₂ must be positive"));
    }
    if draws < 2 {
        return Err(invalid("need at least two draws"));
    }
    let (s, diff) = subexponential_scale(setting, c1, c2)?;
    if let Some(l) = lambdas.iter().find(|l| l.abs() > 1.0 / s + 1e-15) {
        return Err(invalid(format!("|λ| = {} exceeds 1/s = {}", l.abs(), 1.0 / s)));
    }
    let family = &setting.truth.family;
    let sigma0 = setting.truth.scale;
    let eta_x = setting.eta.evaluate(setting.x)?;
    let eta0_x = setting.eta0.evaluate(setting.x)?;
    let g = expected_log_phi(family, family, sigma0, eta0_x - eta_x, setting.sigma)?;

    let mut rng = rng_from(seed);
    let u: Vec<f64> = (0..draws)
        .map(|_| {
            let y = eta0_x + sigma0 * family.draw(&mut rng);
            family.log_phi((y - eta_x) / setting.sigma) - g
        })
        .collect();

    let mut points = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let mut sum = CompensatedSum::new();
        let mut sq = CompensatedSum::new();
        for &ui in &u {
            let e = (lambda * ui).exp();
            sum.add(e);
            sq.add(e * e);
        }
        let n = draws as f64;
        let mean = sum.value() / n;
        let var = ((sq.value() / n) - mean * mean).max(0.0) * n / (n - 1.0);
        let se = (var / n).sqrt();
        let bound = (0.5 * lambda * lambda * s * s).exp();
        let status = if mean - 3.0 * se <= bound {
            CheckStatus::Holds
        } else if se > 0.05 * mean {
            CheckStatus::Inconclusive
        } else {
            CheckStatus::Violated
        };
        points.push(MgfPoint {
            lambda,
            estimate: mean,
            std_error: se,
            bound,
            status,
        });
    }
    let status = if points.iter().any(|p| p.status == CheckStatus::Violated) {
        CheckStatus::Violated
    } else if points.iter().all(|p| p.status == CheckStatus::Holds) {
        CheckStatus::Holds
    } else {
        CheckStatus::Inconclusive
    };
    Ok(MgfReport {
        c1,
        c2,
        s,
        sup_diff: diff,
        draws,
        points,
        status,
    })
}

/// Smallest `(c₁, c₂)` on a grid (ordered by `c₁ + c₂`, then `c₂`) for which
/// the MGF bound holds on the default λ grid.
pub fn search_mgf_constants(
    setting: &MgfSetting<'_>,
    grid: &[f64],
    draws: usize,
    seed: u64,
) -> Result<Option<MgfReport>> {
    let mut pairs: Vec<(f64, f64)> = grid.iter().flat_map(|&a| grid.iter().map(move |&b| (a, b))).collect();
    pairs.sort_by(|p, q| (p.0 + p.1).total_cmp(&(q.0 + q.1)).then(p.1.total_cmp(&q.1)));
    for (c1, c2) in pairs {
        let (s, _) = subexponential_scale(setting, c1, c2)?;
        let report = subexponential_mgf_check(setting, &default_lambda_grid(s), c1, c2, draws, seed)?;
        if report.status == CheckStatus::Holds {
            return Ok(Some(report));
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrabilityReport {
    /// `∫ |log φ((σ₀/σ) z)| φ(z) dz`
    pub abs_log_integral: f64,
    /// `∫ |z| φ(z) dz`
    pub abs_moment: f64,
    /// Smallest `c₃` with `abs_log_integral ≤ c₃/σ`.
    pub c3_required: f64,
    pub c3: Option<f64>,
    pub envelope_holds: Option<bool>,
    pub status: CheckStatus,
}

/// Integrability diagnostics for φ at scale σ; a value that keeps moving
/// when the truncation radius grows is reported as a violation.
pub fn a9_integrability_check(truth: &NoiseModel, sigma: f64, c3: Option<f64>) -> Result<IntegrabilityReport> {
    if !(sigma > 0.0) {
        return Err(invalid("σ must be positive"));
    }
    let family = &truth.family;
    let ratio = truth.scale / sigma;
    let r = family.radius();
    let tail_integral = |radius: f64, h: &dyn Fn(f64) -> f64| -> Result<f64> {
        Ok(integrate(
            |z| h(z) * family.log_phi(z).exp(),
            -radius,
            radius,
            &[0.0],
            QuadOptions::with_abs_tol(1e-12),
        )?
        .value)
    };
    let abs_log = |z: f64| family.log_phi(ratio * z).abs();
    let abs_z = |z: f64| z.abs();
    let (l1, l2) = (tail_integral(r, &abs_log)?, tail_integral(1.5 * r, &abs_log)?);
    let (m1, m2) = (tail_integral(r, &abs_z)?, tail_integral(1.5 * r, &abs_z)?);
    let stable = |a: f64, b: f64| a.is_finite() && b.is_finite() && (a - b).abs() <= 1e-8 * a.abs().max(1.0);
    let status = if stable(l1, l2) && stable(m1, m2) {
        CheckStatus::Holds
    } else {
        CheckStatus::Violated
    };
    let c3_required = l1 * sigma;
    Ok(IntegrabilityReport {
        abs_log_integral: l1,
        abs_moment: m1,
        c3_required,
        c3,
        envelope_holds: c3.map(|c| l1 <= c / sigma),
        status,
    })
}

/// Half-normal mean `√(2/π)`, exposed for diagnostics output.
pub fn half_normal_mean() -> f64 {
    (2.0 / PI).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::CompactDomain;
    use crate::numeric::{mean, variance};

    #[test]
    fn log_density_examples() {
        let lap = NoiseModel::laplace(1.0);
        assert!((lap.log_density(0.0) - 0.5f64.ln()).abs() < 1e-15);
        let nor = NoiseModel::normal(1.0);
        assert!((nor.log_density(0.0) + 0.5 * (2.0 * PI).ln()).abs() < 1e-15);
        let lap2 = NoiseModel::laplace(2.0);
        assert!((lap2.log_density(3.0) - (-(4.0f64).ln() - 1.5)).abs() < 1e-15);
    }

    #[test]
    fn symmetry_of_closed_forms_is_exact() {
        for m in [NoiseModel::laplace(0.7), NoiseModel::normal(1.3)] {
            for e in [0.1, 1.0, 7.5] {
                assert_eq!(m.log_density(e), m.log_density(-e));
            }
        }
    }

    #[test]
    fn laplace_sampling_moments() {
        let draws = sample(&NoiseModel::laplace(1.0), 1_000_000, 11).unwrap();
        assert!(mean(&draws).abs() < 0.006);
        let abs: Vec<f64> = draws.iter().map(|v| v.abs()).collect();
        assert!((mean(&abs) - 1.0).abs() < 0.005);
    }

    #[test]
    fn normal_sampling_variance() {
        let draws = sample(&NoiseModel::normal(2.0), 1_000_000, 12).unwrap();
        assert!((variance(&draws) - 4.0).abs() < 0.03);
    }

    #[test]
    fn sampling_is_reproducible() {
        let m = NoiseModel::new(NoiseFamily::General(GeneralPhi::logistic()), 1.0).unwrap();
        assert_eq!(sample(&m, 100, 5).unwrap(), sample(&m, 100, 5).unwrap());
        assert!(sample(&m, 0, 5).is_err());
    }

    #[test]
    fn general_sampler_matches_target_variance() {
        // logistic variance is π²/3
        let m = NoiseModel::new(NoiseFamily::General(GeneralPhi::logistic()), 1.0).unwrap();
        let draws = sample(&m, 400_000, 9).unwrap();
        assert!((variance(&draws) - PI * PI / 3.0).abs() < 0.03);
        let lap = NoiseModel::new(NoiseFamily::General(GeneralPhi::laplace()), 1.0).unwrap();
        let d = sample(&lap, 400_000, 10).unwrap();
        let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
        assert!((mean(&abs) - 1.0).abs() < 0.006);
    }

    #[test]
    fn unnormalized_phi_is_invalid() {
        let r = GeneralPhi::new("half", |z: f64| -LN_2 - z.abs() - LN_2, 1.0, 40.0);
        assert!(matches!(r, Err(Error::InvalidModel(_))));
        let asym = GeneralPhi::new("asym", |z: f64| -LN_2 - z.abs() + 1e-3 * z, 2.0, 40.0);
        assert!(matches!(asym, Err(Error::InvalidModel(_))));
        let steep = GeneralPhi::new("steep", |z: f64| -LN_2 - z.abs(), 0.5, 40.0);
        assert!(matches!(steep, Err(Error::InvalidModel(_))));
    }

    #[test]
    fn laplace_abs_moment_examples() {
        assert_eq!(laplace_abs_moment(0.0, 1.7), 1.7);
        assert!((laplace_abs_moment(1.0, 1.0) - 1.367_879_441_171_442_3).abs() < 1e-15);
        assert_eq!(laplace_abs_moment(-0.4, 2.0), laplace_abs_moment(0.4, 2.0));
    }

    #[test]
    fn entropy_constants() {
        let lap = phi_entropy_constant(&NoiseFamily::Laplace).unwrap();
        assert!((lap + 1.693_147_180_559_945).abs() < 1e-14);
        let nor = phi_entropy_constant(&NoiseFamily::Normal).unwrap();
        assert!((nor + 1.418_938_533_204_672_7).abs() < 1e-14);
        assert!((entropy_by_quadrature(&NoiseFamily::Laplace).unwrap() - lap).abs() < 1e-8);
        assert!((entropy_by_quadrature(&NoiseFamily::Normal).unwrap() - nor).abs() < 1e-8);
        let logi = phi_entropy_constant(&NoiseFamily::General(GeneralPhi::logistic())).unwrap();
        assert!((logi + 2.0).abs() < 1e-8);
    }

    #[test]
    fn normalization_of_every_family() {
        for f in [
            NoiseFamily::Normal,
            NoiseFamily::Laplace,
            NoiseFamily::General(GeneralPhi::logistic()),
        ] {
            for sigma in [0.3, 1.0, 2.5] {
                let r = 40.0 * sigma;
                let mass = integrate(|e| log_density(&f, sigma, e).exp(), -r, r, &[0.0], QuadOptions::default())
                    .unwrap()
                    .value;
                assert!((mass - 1.0).abs() < 1e-8, "{} σ={sigma}", f.name());
            }
        }
    }

    #[test]
    fn mgf_check_examples() {
        let dom = CompactDomain::unit(1);
        let eta0 = RegressionFunction::sinusoid(dom.clone(), 0, 0.5, 1.0).unwrap();
        for truth in [NoiseModel::laplace(1.0), NoiseModel::normal(1.0)] {
            let setting = MgfSetting {
                truth: &truth,
                eta: &eta0,
                eta0: &eta0,
                sigma: 1.0,
                x: &[0.3],
            };
            let r = subexponential_mgf_check(&setting, &[0.0, 0.2], 1.0, 2.0, 1_000_000, 3).unwrap();
            assert_eq!(r.points[0].estimate, 1.0);
            assert_eq!(r.status, CheckStatus::Holds);
            assert!(subexponential_mgf_check(&setting, &[0.6], 1.0, 2.0, 1000, 3).is_err());
        }
    }

    #[test]
    fn mgf_constant_search_finds_a_pair() {
        let dom = CompactDomain::unit(1);
        let eta0 = RegressionFunction::zero(dom.clone());
        let eta = RegressionFunction::constant(dom, 0.5);
        let truth = NoiseModel::laplace(1.0);
        let setting = MgfSetting {
            truth: &truth,
            eta: &eta,
            eta0: &eta0,
            sigma: 1.0,
            x: &[0.5],
        };
        let found = search_mgf_constants(&setting, &[0.5, 1.0, 2.0], 200_000, 4).unwrap();
        assert!(found.is_some());
    }

    #[test]
    fn a9_examples() {
        let lap = a9_integrability_check(&NoiseModel::laplace(1.0), 1.0, Some(2.0)).unwrap();
        assert!((lap.abs_moment - 1.0).abs() < 1e-6);
        assert!((lap.abs_log_integral - (LN_2 + 1.0)).abs() < 1e-6);
        assert_eq!(lap.status, CheckStatus::Holds);
        assert_eq!(lap.envelope_holds, Some(true));
        let nor = a9_integrability_check(&NoiseModel::normal(1.0), 1.0, None).unwrap();
        assert!((nor.abs_moment - half_normal_mean()).abs() < 1e-6);
    }

    #[test]
    fn a9_flags_divergent_tail() {
        // Cauchy-like tail: ∫|z|φ diverges and keeps growing with the radius
        let cauchy = GeneralPhi {
            name: "cauchy".into(),
            log_phi: Arc::new(|z: f64| -(PI * (1.0 + z * z)).ln()),
            lipschitz: 1.0,
            radius: 40.0,
            table: Arc::new(CdfTable {
                lo: 0.0,
                step: 1.0,
                cdf: vec![0.0, 1.0],
            }),
        };
        let m = NoiseModel::new(NoiseFamily::General(cauchy), 1.0).unwrap();
        let r = a9_integrability_check(&m, 1.0, None).unwrap();
        assert_eq!(r.status, CheckStatus::Violated);
    }
}
