//! Sieves `G_n = {‖η‖∞ ≤ T, ‖∂_j η‖∞ ≤ T, σ ∈ [1/T, T]}` with
//! `T = exp((βn)^{1/4})`, membership with evidence, and Monte Carlo prior
//! mass of the complement.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::function::{partial_derivative, sup_norm, SupNormMethod};
use crate::gp::{CoefficientPrior, SigmaPrior};
use crate::klrate::Theta;
use crate::numeric::{derive_seed, rng_from};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SieveSpec {
    pub beta: f64,
    pub n: u64,
}

impl SieveSpec {
    pub fn new(beta: f64, n: u64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) || n == 0 {
            return Err(invalid("sieve needs β > 0 and n ≥ 1"));
        }
        Ok(Self { beta, n })
    }

    /// `log T = (βn)^{1/4}`
    pub fn log_threshold(&self) -> f64 {
        (self.beta * self.n as f64).powf(0.25)
    }

    pub fn threshold(&self) -> f64 {
        self.log_threshold().exp()
    }

    pub fn sigma_band(&self) -> (f64, f64) {
        let l = self.log_threshold();
        ((-l).exp(), l.exp())
    }
}

pub fn sieve_thresholds(beta: f64, n: u64) -> Result<SieveSpec> {
    SieveSpec::new(beta, n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Membership {
    Member,
    NotMember,
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub passed: Option<bool>,
    /// Value is a grid lower bound rather than a certified upper bound.
    pub approximate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SieveEvidence {
    pub membership: Membership,
    pub checks: Vec<Check>,
}

impl SieveEvidence {
    pub fn is_member(&self) -> bool {
        self.membership == Membership::Member
    }

    pub fn sigma_failed(&self) -> bool {
        self.checks.iter().any(|c| c.name == "sigma" && c.passed == Some(false))
    }
}

/// Comparisons are made on the log scale against `(βn)^{1/4}`, so nesting
/// in n and monotonicity in β are exact.
pub fn sieve_member(theta: &Theta, spec: &SieveSpec, resolution: usize) -> Result<SieveEvidence> {
    let l = spec.log_threshold();
    let mut checks = Vec::with_capacity(theta.eta.dim() + 2);
    let norm_check = |name: String, f: &crate::function::RegressionFunction| -> Result<Check> {
        let r = sup_norm(f, resolution)?;
        let approximate = r.certified_upper.is_none() && r.method != SupNormMethod::Analytic;
        let value = r.best_upper();
        Ok(Check {
            name,
            value,
            passed: Some(value.ln() <= l),
            approximate,
        })
    };
    checks.push(norm_check("eta".into(), &theta.eta)?);
    for j in 0..theta.eta.dim() {
        let name = format!("d_eta_{j}");
        match partial_derivative(&theta.eta, j) {
            Ok(d) => checks.push(norm_check(name, &d)?),
            Err(Error::NotDifferentiable(_)) => checks.push(Check {
                name,
                value: f64::NAN,
                passed: None,
                approximate: false,
            }),
            Err(e) => return Err(e),
        }
    }
    checks.push(Check {
        name: "sigma".into(),
        value: theta.sigma,
        passed: Some(theta.sigma.ln().abs() <= l),
        approximate: false,
    });
    let membership = if checks.iter().any(|c| c.passed == Some(false)) {
        Membership::NotMember
    } else if checks.iter().any(|c| c.passed.is_none()) {
        Membership::Indeterminate
    } else {
        Membership::Member
    };
    Ok(SieveEvidence { membership, checks })
}

pub const MIN_DRAWS: usize = 10_000;
const CHUNKS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SieveReport {
    pub beta: f64,
    pub n: u64,
    #[serde(rename = "T")]
    pub threshold: f64,
    pub sigma_band: (f64, f64),
    pub estimate: f64,
    pub stderr: f64,
    /// One-sided 95% bound `3/draws`, present when no draw failed.
    pub upper_bound: Option<f64>,
    pub sigma_failure: f64,
    pub sigma_failure_stderr: f64,
    pub indeterminate: usize,
    pub draws: usize,
    pub beta_check: Option<BetaCheck>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaCheck {
    pub h_inf: f64,
    pub satisfied: bool,
}

/// Whether `β > 2h(Θ)`; reported, not enforced.
pub fn beta_check(beta: f64, h_inf: f64) -> BetaCheck {
    BetaCheck {
        h_inf,
        satisfied: beta > 2.0 * h_inf,
    }
}

/// Fraction of prior draws `(w, σ)` outside `G_n`. Draws are split into a
/// fixed number of seeded chunks, so the result does not depend on the
/// worker count; the same seed gives the same draws for every `spec`.
/// Indeterminate draws count as failures.
pub fn prior_sieve_complement_mass(
    prior: &CoefficientPrior,
    sigma_prior: &SigmaPrior,
    spec: &SieveSpec,
    draws: usize,
    seed: u64,
    resolution: usize,
) -> Result<SieveReport> {
    if draws < MIN_DRAWS {
        return Err(invalid(format!("need at least {MIN_DRAWS} draws")));
    }
    sigma_prior.validate()?;
    let per = draws.div_ceil(CHUNKS);
    let counts = (0..CHUNKS)
        .into_par_iter()
        .map(|c| -> Result<(usize, usize, usize)> {
            let todo = per.min(draws.saturating_sub(c * per));
            let mut rng = rng_from(derive_seed(seed, &[0x51E, c as u64]));
            let (mut fail, mut sigma_fail, mut indet) = (0, 0, 0);
            for _ in 0..todo {
                let w = prior.sample_coefficients(&mut rng);
                let sigma = sigma_prior.sample(&mut rng);
                let ev = sieve_member(&Theta::new(prior.path(&w)?, sigma)?, spec, resolution)?;
                match ev.membership {
                    Membership::Member => {}
                    Membership::NotMember => fail += 1,
                    Membership::Indeterminate => {
                        fail += 1;
                        indet += 1;
                    }
                }
                sigma_fail += ev.sigma_failed() as usize;
            }
            Ok((fail, sigma_fail, indet))
        })
        .collect::<Result<Vec<_>>>()?;
    let (fail, sigma_fail, indet) = counts.iter().fold((0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    let n = draws as f64;
    let p = fail as f64 / n;
    let ps = sigma_fail as f64 / n;
    Ok(SieveReport {
        beta: spec.beta,
        n: spec.n,
        threshold: spec.threshold(),
        sigma_band: spec.sigma_band(),
        estimate: p,
        stderr: (p * (1.0 - p) / n).sqrt(),
        upper_bound: (fail == 0).then(|| 3.0 / n),
        sigma_failure: ps,
        sigma_failure_stderr: (ps * (1.0 - ps) / n).sqrt(),
        indeterminate: indet,
        draws,
        beta_check: None,
    })
}

pub fn write_sieve_json<W: std::io::Write>(reports: &[SieveReport], out: W) -> Result<()> {
    serde_json::to_writer_pretty(out, reports)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::CompactDomain;
    use crate::function::RegressionFunction;
    use crate::gp::{sigma_prior_band_mass, FeatureKind, GpSpec, Kernel};

    fn dom() -> CompactDomain {
        CompactDomain::unit(1)
    }

    #[test]
    fn thresholds() {
        let e2 = 7.389_056_098_930_65;
        assert!((SieveSpec::new(1.0, 16).unwrap().threshold() - e2).abs() < 1e-12);
        assert!((SieveSpec::new(16.0, 1).unwrap().threshold() - e2).abs() < 1e-12);
        let t: Vec<f64> = [1, 10, 100].iter().map(|&n| SieveSpec::new(1.0, n).unwrap().threshold()).collect();
        assert!(t[0] < t[1] && t[1] < t[2]);
        assert!(SieveSpec::new(0.0, 1).is_err());
    }

    #[test]
    fn membership_examples() {
        // 2 sin(1.5x): sup-norm below 2, derivative sup-norm 3
        let eta = RegressionFunction::sinusoid(dom(), 0, 2.0, 1.5 / std::f64::consts::TAU).unwrap();
        let spec = SieveSpec::new(1.0, 16).unwrap();
        let ev = sieve_member(&Theta::new(eta.clone(), 1.0).unwrap(), &spec, 512).unwrap();
        assert!(ev.is_member(), "{ev:?}");
        let ev = sieve_member(&Theta::new(eta, 8.0).unwrap(), &spec, 512).unwrap();
        assert_eq!(ev.membership, Membership::NotMember);
        assert!(ev.sigma_failed());
        let zero = Theta::new(RegressionFunction::zero(dom()), 1.0).unwrap();
        assert!(sieve_member(&zero, &SieveSpec::new(1e-6, 1).unwrap(), 16).unwrap().is_member());
    }

    #[test]
    fn step_is_indeterminate() {
        let step = RegressionFunction::unit_step(dom(), 0.5);
        let ev = sieve_member(&Theta::new(step, 1.0).unwrap(), &SieveSpec::new(1.0, 16).unwrap(), 64).unwrap();
        assert_eq!(ev.membership, Membership::Indeterminate);
    }

    #[test]
    fn complement_mass_trends() {
        let spec = GpSpec::centered(dom(), Kernel::matern(2.5, 1.0, 0.2).unwrap()).unwrap();
        let prior = CoefficientPrior::from_spec(&spec, 8, FeatureKind::Cosine).unwrap();
        let sp = SigmaPrior::default();
        let est: Vec<SieveReport> = [1, 4, 16]
            .iter()
            .map(|&n| prior_sieve_complement_mass(&prior, &sp, &SieveSpec::new(0.05, n).unwrap(), 10_000, 3, 64).unwrap())
            .collect();
        assert!(est[0].estimate >= est[1].estimate && est[1].estimate >= est[2].estimate);
        assert!(est[0].estimate > 0.0);
        let band = sigma_prior_band_mass(&sp, 4, 0.05).unwrap();
        assert!((est[1].sigma_failure - (1.0 - band)).abs() <= 2.0 * est[1].sigma_failure_stderr + 1e-12, "{} {}", est[1].sigma_failure, 1.0 - band);
        let huge = prior_sieve_complement_mass(&prior, &sp, &SieveSpec::new(1.0, 1 << 40).unwrap(), 10_000, 3, 64).unwrap();
        assert_eq!(huge.estimate, 0.0);
        assert_eq!(huge.upper_bound, Some(3e-4));
        let json = serde_json::to_value(&huge).unwrap();
        for k in ["beta", "n", "T", "sigma_band", "estimate", "stderr"] {
            assert!(json.get(k).is_some(), "{k}");
        }
    }
}
