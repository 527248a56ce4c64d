//! Scenario configuration: TOML with dotted keys, strict key checking,
//! scenario-dependent defaults and per-key provenance.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::Value;

use crate::domain::{CompactDomain, DesignKind, MeasureQ};
use crate::function::{Basis, RegressionFunction, TrigTerm};
use crate::gp::{CoefficientPrior, CoefficientTail, FeatureKind, GpSpec, Kernel, SigmaPrior};
use crate::klrate::TrueModel;
use crate::noise::NoiseFamily;
use crate::posterior::{ChainConfig, ModelPrior};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    WellSpecifiedNormal,
    StepTruthNormal,
    LaplaceErrors,
    CrossFamilyMisspec,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::WellSpecifiedNormal,
        Scenario::StepTruthNormal,
        Scenario::LaplaceErrors,
        Scenario::CrossFamilyMisspec,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::WellSpecifiedNormal => "well_specified_normal",
            Scenario::StepTruthNormal => "step_truth_normal",
            Scenario::LaplaceErrors => "laplace_errors",
            Scenario::CrossFamilyMisspec => "cross_family_misspec",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where a resolved value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Default,
    ScenarioDefault,
    File,
    Override,
}

/// One validation problem, tied to a key path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigIssue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn issue(path: &str, message: impl Into<String>) -> ConfigIssue {
    ConfigIssue {
        path: path.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Eta0Form {
    Zero,
    Cosine,
    Sinusoid,
    Step,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaNotion {
    /// Infimum over the basis span.
    Span,
    /// Minimum over the atoms of the discrete surrogate.
    Atoms,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthConfig {
    pub eta0: Eta0Form,
    pub amplitude: f64,
    pub frequency: f64,
    pub location: f64,
    pub sigma0: f64,
    pub family: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriorConfig {
    pub kernel: String,
    pub nu: f64,
    pub amplitude: f64,
    pub lengthscale: f64,
    pub k: usize,
    pub features: String,
    pub feature_seed: u64,
    pub tail: String,
    pub dof: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SigmaPriorConfig {
    pub kind: String,
    pub location: f64,
    pub scale: f64,
    pub shape: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Schedules {
    pub equipartition: Vec<usize>,
    pub posterior: Vec<usize>,
    pub rate: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SieveConfig {
    pub beta: f64,
    pub n: Vec<u64>,
    pub draws: usize,
    pub resolution: usize,
}

/// Fully resolved scenario configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub dim: usize,
    pub design: String,
    pub truth: TruthConfig,
    /// Postulated family.
    pub family: String,
    pub prior: PriorConfig,
    pub sigma_prior: SigmaPriorConfig,
    pub schedule: Schedules,
    pub replicates: usize,
    pub seed: u64,
    pub chain: ChainConfig,
    pub theta_notion: ThetaNotion,
    pub equipartition_shift: f64,
    pub equipartition_sigma_ratio: f64,
    pub x_new: Vec<f64>,
    pub y_points: usize,
    pub epsilon_power: f64,
    pub sieve: SieveConfig,
    #[serde(skip)]
    pub output_dir: PathBuf,
    #[serde(skip)]
    pub provenance: BTreeMap<String, Provenance>,
}

/// Every accepted key. `noise.sigma0` is an alias of `truth.sigma0`.
pub const KEYS: &[&str] = &[
    "scenario",
    "domain.dim",
    "design.kind",
    "truth.eta0",
    "truth.amplitude",
    "truth.frequency",
    "truth.location",
    "truth.sigma0",
    "truth.family",
    "noise.family",
    "noise.sigma0",
    "prior.kernel",
    "prior.nu",
    "prior.amplitude",
    "prior.lengthscale",
    "prior.K",
    "prior.features",
    "prior.feature_seed",
    "prior.tail",
    "prior.dof",
    "sigma_prior.kind",
    "sigma_prior.location",
    "sigma_prior.scale",
    "sigma_prior.shape",
    "sigma_prior.rate",
    "schedule.equipartition",
    "schedule.posterior",
    "schedule.rate",
    "replicates",
    "seed",
    "chain.length",
    "chain.burnin",
    "chain.thin",
    "chain.step",
    "theta.notion",
    "equipartition.shift",
    "equipartition.sigma_ratio",
    "predictive.x_new",
    "predictive.points",
    "nepsilon.power",
    "sieve.beta",
    "sieve.n",
    "sieve.draws",
    "sieve.resolution",
    "output.dir",
];

/// Keys whose defaults depend on the scenario.
const SCENARIO_KEYS: &[&str] = &[
    "truth.eta0",
    "truth.amplitude",
    "truth.sigma0",
    "truth.family",
    "noise.family",
    "prior.lengthscale",
    "prior.K",
    "equipartition.shift",
    "equipartition.sigma_ratio",
];

impl ScenarioConfig {
    pub fn defaults(scenario: Scenario) -> Self {
        let mut cfg = ScenarioConfig {
            scenario,
            dim: 1,
            design: "iid".into(),
            truth: TruthConfig {
                eta0: Eta0Form::Cosine,
                amplitude: 1.0,
                frequency: 1.0,
                location: 0.5,
                sigma0: 0.5,
                family: "normal".into(),
            },
            family: "normal".into(),
            prior: PriorConfig {
                kernel: "matern".into(),
                nu: 2.5,
                amplitude: 1.0,
                lengthscale: 0.2,
                k: 8,
                features: "cosine".into(),
                feature_seed: 0,
                tail: "gaussian".into(),
                dof: 5.0,
            },
            sigma_prior: SigmaPriorConfig {
                kind: "lognormal".into(),
                location: 0.0,
                scale: 1.0,
                shape: 2.0,
                rate: 1.0,
            },
            schedule: Schedules {
                equipartition: vec![500, 5000, 50000],
                posterior: vec![50, 200, 2000],
                rate: (2..=20).map(|i| i * 500).collect(),
            },
            replicates: 20,
            seed: 20_240_601,
            chain: ChainConfig::default(),
            theta_notion: ThetaNotion::Span,
            equipartition_shift: 0.0,
            equipartition_sigma_ratio: 2.0,
            x_new: vec![0.25],
            y_points: crate::posterior::DEFAULT_Y_POINTS,
            epsilon_power: 0.5,
            sieve: SieveConfig {
                beta: 1.0,
                n: vec![1, 100, 10_000],
                draws: 10_000,
                resolution: 32,
            },
            output_dir: PathBuf::from("out"),
            provenance: BTreeMap::new(),
        };
        match scenario {
            Scenario::WellSpecifiedNormal => {}
            Scenario::StepTruthNormal => {
                cfg.truth.eta0 = Eta0Form::Step;
                cfg.prior.k = 32;
                cfg.prior.lengthscale = 0.1;
            }
            Scenario::LaplaceErrors => {
                cfg.truth.family = "laplace".into();
                cfg.family = "laplace".into();
                cfg.equipartition_shift = 0.5;
                cfg.equipartition_sigma_ratio = 1.0;
            }
            Scenario::CrossFamilyMisspec => {
                cfg.truth.family = "laplace".into();
            }
        }
        for k in KEYS {
            let p = if SCENARIO_KEYS.contains(k) {
                Provenance::ScenarioDefault
            } else {
                Provenance::Default
            };
            cfg.provenance.insert((*k).to_string(), p);
        }
        cfg.provenance.remove("noise.sigma0");
        cfg
    }

    /// Hex SHA-256 of the semantic fields (the output directory is excluded).
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Set one key from a TOML value, recording its provenance, then
    /// revalidate the whole configuration.
    pub fn set(&mut self, key: &str, value: &Value, source: Provenance) -> Result<(), Vec<ConfigIssue>> {
        if key == "scenario" {
            return Err(vec![issue(key, "the scenario can only be chosen in the file")]);
        }
        self.apply(key, value).map_err(|m| vec![issue(key, m)])?;
        let canonical = if key == "noise.sigma0" { "truth.sigma0" } else { key };
        self.provenance.insert(canonical.to_string(), source);
        let problems = self.check();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems)
        }
    }

    fn apply(&mut self, key: &str, v: &Value) -> Result<(), String> {
        match key {
            "domain.dim" => self.dim = uint(v)?,
            "design.kind" => self.design = string(v)?,
            "truth.eta0" => {
                self.truth.eta0 = match string(v)?.as_str() {
                    "zero" => Eta0Form::Zero,
                    "cosine" => Eta0Form::Cosine,
                    "sinusoid" => Eta0Form::Sinusoid,
                    "step" => Eta0Form::Step,
                    other => return Err(format!("unknown form `{other}` (zero, cosine, sinusoid, step)")),
                }
            }
            "truth.amplitude" => self.truth.amplitude = float(v)?,
            "truth.frequency" => self.truth.frequency = float(v)?,
            "truth.location" => self.truth.location = float(v)?,
            "truth.sigma0" | "noise.sigma0" => self.truth.sigma0 = float(v)?,
            "truth.family" => self.truth.family = string(v)?,
            "noise.family" => self.family = string(v)?,
            "prior.kernel" => self.prior.kernel = string(v)?,
            "prior.nu" => self.prior.nu = float(v)?,
            "prior.amplitude" => self.prior.amplitude = float(v)?,
            "prior.lengthscale" => self.prior.lengthscale = float(v)?,
            "prior.K" => self.prior.k = uint(v)?,
            "prior.features" => self.prior.features = string(v)?,
            "prior.feature_seed" => self.prior.feature_seed = uint(v)? as u64,
            "prior.tail" => self.prior.tail = string(v)?,
            "prior.dof" => self.prior.dof = float(v)?,
            "sigma_prior.kind" => self.sigma_prior.kind = string(v)?,
            "sigma_prior.location" => self.sigma_prior.location = float(v)?,
            "sigma_prior.scale" => self.sigma_prior.scale = float(v)?,
            "sigma_prior.shape" => self.sigma_prior.shape = float(v)?,
            "sigma_prior.rate" => self.sigma_prior.rate = float(v)?,
            "schedule.equipartition" => self.schedule.equipartition = uint_list(v)?,
            "schedule.posterior" => self.schedule.posterior = uint_list(v)?,
            "schedule.rate" => self.schedule.rate = uint_list(v)?,
            "replicates" => self.replicates = uint(v)?,
            "seed" => self.seed = uint(v)? as u64,
            "chain.length" => self.chain.length = uint(v)?,
            "chain.burnin" => self.chain.burnin = uint(v)?,
            "chain.thin" => self.chain.thin = uint(v)?,
            "chain.step" => self.chain.step = float(v)?,
            "theta.notion" => {
                self.theta_notion = match string(v)?.as_str() {
                    "span" => ThetaNotion::Span,
                    "atoms" => ThetaNotion::Atoms,
                    other => return Err(format!("unknown notion `{other}` (span, atoms)")),
                }
            }
            "equipartition.shift" => self.equipartition_shift = float(v)?,
            "equipartition.sigma_ratio" => self.equipartition_sigma_ratio = float(v)?,
            "predictive.x_new" => {
                self.x_new = match v {
                    Value::Array(_) => float_list(v)?,
                    _ => vec![float(v)?],
                }
            }
            "predictive.points" => self.y_points = uint(v)?,
            "nepsilon.power" => self.epsilon_power = float(v)?,
            "sieve.beta" => self.sieve.beta = float(v)?,
            "sieve.n" => self.sieve.n = uint_list(v)?.into_iter().map(|n| n as u64).collect(),
            "sieve.draws" => self.sieve.draws = uint(v)?,
            "sieve.resolution" => self.sieve.resolution = uint(v)?,
            "output.dir" => self.output_dir = PathBuf::from(string(v)?),
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Semantic checks on the resolved values.
    pub fn check(&self) -> Vec<ConfigIssue> {
        let mut out = Vec::new();
        let mut need = |ok: bool, path: &str, msg: &str| {
            if !ok {
                out.push(issue(path, msg));
            }
        };
        need((1..=4).contains(&self.dim), "domain.dim", "must be between 1 and 4");
        need(["iid", "partition"].contains(&self.design.as_str()), "design.kind", "must be `iid` or `partition`");
        need(self.truth.sigma0 > 0.0 && self.truth.sigma0.is_finite(), "truth.sigma0", "must be a positive number");
        need(self.truth.amplitude.is_finite(), "truth.amplitude", "must be finite");
        need(self.truth.frequency > 0.0 && self.truth.frequency.is_finite(), "truth.frequency", "must be positive");
        need(self.truth.location > 0.0 && self.truth.location < 1.0, "truth.location", "must lie inside (0, 1)");
        need(NoiseFamily::from_name(&self.truth.family).is_ok(), "truth.family", "unknown noise family");
        need(NoiseFamily::from_name(&self.family).is_ok(), "noise.family", "unknown noise family");
        need(["matern", "squared_exponential"].contains(&self.prior.kernel.as_str()), "prior.kernel", "must be `matern` or `squared_exponential`");
        if self.prior.kernel == "matern" {
            need(Kernel::matern(self.prior.nu, 1.0, 1.0).is_ok(), "prior.nu", "must be a half-integer between 2.5 and 20.5");
        }
        need(self.prior.amplitude > 0.0 && self.prior.amplitude.is_finite(), "prior.amplitude", "must be positive");
        need(self.prior.lengthscale > 0.0 && self.prior.lengthscale.is_finite(), "prior.lengthscale", "must be positive");
        need(self.prior.k >= 1, "prior.K", "must be at least 1");
        need(["cosine", "fourier"].contains(&self.prior.features.as_str()), "prior.features", "must be `cosine` or `fourier`");
        need(["gaussian", "student_t"].contains(&self.prior.tail.as_str()), "prior.tail", "must be `gaussian` or `student_t`");
        need(self.prior.dof > 0.0, "prior.dof", "must be positive");
        need(["lognormal", "inverse_gamma"].contains(&self.sigma_prior.kind.as_str()), "sigma_prior.kind", "must be `lognormal` or `inverse_gamma`");
        need(self.sigma_prior.location.is_finite(), "sigma_prior.location", "must be finite");
        need(self.sigma_prior.scale > 0.0, "sigma_prior.scale", "must be positive");
        need(self.sigma_prior.shape > 0.0, "sigma_prior.shape", "must be positive");
        need(self.sigma_prior.rate > 0.0, "sigma_prior.rate", "must be positive");
        for (path, s) in [
            ("schedule.equipartition", &self.schedule.equipartition),
            ("schedule.posterior", &self.schedule.posterior),
            ("schedule.rate", &self.schedule.rate),
        ] {
            need(!s.is_empty() && s[0] > 0, path, "must be nonempty and positive");
            need(s.windows(2).all(|w| w[0] < w[1]), path, "not strictly increasing");
        }
        need(self.replicates >= 1, "replicates", "must be at least 1");
        need(self.chain.burnin >= 1, "chain.burnin", "must be at least 1");
        need(self.chain.length >= 10 * self.chain.burnin, "chain.length", "must be at least 10 × chain.burnin");
        need(self.chain.thin >= 1, "chain.thin", "must be at least 1");
        need(self.chain.step > 0.0 && self.chain.step.is_finite(), "chain.step", "must be positive");
        need(self.equipartition_shift.is_finite(), "equipartition.shift", "must be finite");
        need(self.equipartition_sigma_ratio > 0.0, "equipartition.sigma_ratio", "must be positive");
        need(
            self.x_new.len() == self.dim && self.x_new.iter().all(|x| (0.0..=1.0).contains(x)),
            "predictive.x_new",
            "must be a point of the unit cube with domain.dim coordinates",
        );
        need(self.y_points >= 5 && self.y_points % 2 == 1, "predictive.points", "must be odd and at least 5");
        need(self.epsilon_power > 0.0 && self.epsilon_power < 1.0, "nepsilon.power", "must lie in (0, 1)");
        need(self.sieve.beta > 0.0 && self.sieve.beta.is_finite(), "sieve.beta", "must be positive");
        need(!self.sieve.n.is_empty() && self.sieve.n[0] > 0, "sieve.n", "must be nonempty and positive");
        need(self.sieve.n.windows(2).all(|w| w[0] < w[1]), "sieve.n", "not strictly increasing");
        need(self.sieve.draws >= crate::sieve::MIN_DRAWS, "sieve.draws", "must be at least 10000");
        need(self.sieve.resolution >= 2, "sieve.resolution", "must be at least 2");
        out
    }

    pub fn domain(&self) -> CompactDomain {
        CompactDomain::unit(self.dim)
    }

    pub fn truth_model(&self) -> crate::Result<TrueModel> {
        let d = self.domain();
        let a = self.truth.amplitude;
        let eta0 = match self.truth.eta0 {
            Eta0Form::Zero => RegressionFunction::zero(d),
            // a cos(π f x₀), inside the cosine span for integer f
            Eta0Form::Cosine => {
                let mut freq = vec![0.0; self.dim];
                freq[0] = std::f64::consts::PI * self.truth.frequency.round().max(1.0);
                let basis = Basis::new(vec![TrigTerm::Tensor {
                    freq,
                    phase: vec![0.0; self.dim],
                }]);
                RegressionFunction::expansion(d, basis, vec![a])?
            }
            Eta0Form::Sinusoid => RegressionFunction::sinusoid(d, 0, a, self.truth.frequency)?,
            Eta0Form::Step => RegressionFunction::step(d, 0, vec![self.truth.location], vec![0.0, a])?,
        };
        TrueModel::new(eta0, self.truth.sigma0, NoiseFamily::from_name(&self.truth.family)?)
    }

    pub fn postulated(&self) -> crate::Result<NoiseFamily> {
        NoiseFamily::from_name(&self.family)
    }

    pub fn measure(&self) -> MeasureQ {
        MeasureQ::uniform(self.domain())
    }

    pub fn design_kind(&self) -> DesignKind {
        match self.design.as_str() {
            "partition" => DesignKind::DeterministicPartition,
            _ => DesignKind::IidFromQ { seed: self.seed },
        }
    }

    pub fn kernel(&self) -> crate::Result<Kernel> {
        match self.prior.kernel.as_str() {
            "squared_exponential" => Kernel::squared_exponential(self.prior.amplitude, self.prior.lengthscale),
            _ => Kernel::matern(self.prior.nu, self.prior.amplitude, self.prior.lengthscale),
        }
    }

    pub fn coefficient_prior(&self) -> crate::Result<CoefficientPrior> {
        let spec = GpSpec::centered(self.domain(), self.kernel()?)?;
        let features = match self.prior.features.as_str() {
            "fourier" => FeatureKind::Fourier { seed: self.prior.feature_seed },
            _ => FeatureKind::Cosine,
        };
        let p = CoefficientPrior::from_spec(&spec, self.prior.k, features)?;
        match self.prior.tail.as_str() {
            "student_t" => p.with_tail(CoefficientTail::StudentT { dof: self.prior.dof }),
            _ => Ok(p),
        }
    }

    pub fn sigma_prior(&self) -> SigmaPrior {
        match self.sigma_prior.kind.as_str() {
            "inverse_gamma" => SigmaPrior::InverseGammaOnVariance {
                shape: self.sigma_prior.shape,
                rate: self.sigma_prior.rate,
            },
            _ => SigmaPrior::LogNormal {
                location: self.sigma_prior.location,
                scale: self.sigma_prior.scale,
            },
        }
    }

    pub fn model_prior(&self) -> crate::Result<ModelPrior> {
        Ok(ModelPrior {
            coefficients: self.coefficient_prior()?,
            sigma: self.sigma_prior(),
        })
    }
}

fn float(v: &Value) -> Result<f64, String> {
    match v {
        Value::Float(x) => Ok(*x),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(format!("expected a number, got {}", v.type_str())),
    }
}

fn uint(v: &Value) -> Result<usize, String> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        Value::Integer(i) => Err(format!("expected a nonnegative integer, got {i}")),
        _ => Err(format!("expected an integer, got {}", v.type_str())),
    }
}

fn string(v: &Value) -> Result<String, String> {
    v.as_str().map(str::to_string).ok_or_else(|| format!("expected a string, got {}", v.type_str()))
}

fn uint_list(v: &Value) -> Result<Vec<usize>, String> {
    v.as_array()
        .ok_or_else(|| format!("expected an array, got {}", v.type_str()))?
        .iter()
        .map(uint)
        .collect()
}

fn float_list(v: &Value) -> Result<Vec<f64>, String> {
    v.as_array()
        .ok_or_else(|| format!("expected an array, got {}", v.type_str()))?
        .iter()
        .map(float)
        .collect()
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&path, t, out),
            other => out.push((path, other.clone())),
        }
    }
}

/// Parse and resolve a configuration. All problems are collected.
pub fn validate_config(text: &str) -> Result<ScenarioConfig, Vec<ConfigIssue>> {
    let table: toml::Table = toml::from_str(text).map_err(|e| vec![issue("<syntax>", e.to_string().trim())])?;
    let mut entries = Vec::new();
    flatten("", &table, &mut entries);

    let mut issues = Vec::new();
    let scenario = match entries.iter().find(|(k, _)| k == "scenario") {
        None => Scenario::WellSpecifiedNormal,
        Some((_, v)) => match v.as_str().and_then(Scenario::parse) {
            Some(s) => s,
            None => {
                let names: Vec<&str> = Scenario::ALL.iter().map(|s| s.as_str()).collect();
                return Err(vec![issue("scenario", format!("must be one of {}", names.join(", ")))]);
            }
        },
    };
    let mut cfg = ScenarioConfig::defaults(scenario);
    if entries.iter().any(|(k, _)| k == "scenario") {
        cfg.provenance.insert("scenario".into(), Provenance::File);
    }
    let sigma_keys: Vec<&Value> = entries
        .iter()
        .filter(|(k, _)| k == "truth.sigma0" || k == "noise.sigma0")
        .map(|(_, v)| v)
        .collect();
    if sigma_keys.len() == 2 && float(sigma_keys[0]).ok() != float(sigma_keys[1]).ok() {
        issues.push(issue("noise.sigma0", "conflicts with truth.sigma0"));
    }
    for (k, v) in entries.iter().filter(|(k, _)| k != "scenario") {
        if !KEYS.contains(&k.as_str()) {
            issues.push(issue(k, "unknown key"));
            continue;
        }
        match cfg.apply(k, v) {
            Ok(()) => {
                let canonical = if k == "noise.sigma0" { "truth.sigma0" } else { k.as_str() };
                cfg.provenance.insert(canonical.to_string(), Provenance::File);
            }
            Err(m) => issues.push(issue(k, m)),
        }
    }
    if issues.is_empty() {
        issues = cfg.check();
    }
    if issues.is_empty() {
        Ok(cfg)
    } else {
        Err(issues)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_gives_defaults() {
        let cfg = validate_config("").unwrap();
        assert_eq!(cfg, ScenarioConfig::defaults(Scenario::WellSpecifiedNormal));
        assert_eq!(cfg.provenance["truth.sigma0"], Provenance::ScenarioDefault);
        assert_eq!(cfg.provenance["replicates"], Provenance::Default);
    }

    #[test]
    fn negative_sigma_names_key() {
        let err = validate_config("truth.sigma0 = -1.0").unwrap_err();
        assert_eq!(err[0].path, "truth.sigma0");
        let err = validate_config("[noise]\nsigma0 = -1").unwrap_err();
        assert_eq!(err[0].path, "truth.sigma0");
    }

    #[test]
    fn schedule_must_increase() {
        let err = validate_config("schedule.posterior = [100, 100]").unwrap_err();
        assert_eq!(err[0].path, "schedule.posterior");
        assert!(err[0].message.contains("not strictly increasing"));
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = validate_config("truth.sigma = 1.0\nchain.lenght = 5").unwrap_err();
        let paths: Vec<&str> = err.iter().map(|e| e.path.as_str()).collect();
        assert_eq!(paths, ["chain.lenght", "truth.sigma"]);
    }

    #[test]
    fn scenario_defaults_and_hash() {
        let a = validate_config("scenario = \"step_truth_normal\"").unwrap();
        assert_eq!(a.prior.k, 32);
        assert_eq!(a.truth.eta0, Eta0Form::Step);
        let b = validate_config("scenario = \"step_truth_normal\"\noutput.dir = \"elsewhere\"").unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = validate_config("scenario = \"step_truth_normal\"\nseed = 3").unwrap();
        assert_ne!(a.hash(), c.hash());
        assert_eq!(c.provenance["seed"], Provenance::File);
    }

    #[test]
    fn alias_and_override() {
        let mut cfg = validate_config("noise.sigma0 = 0.7").unwrap();
        assert_eq!(cfg.truth.sigma0, 0.7);
        assert!(validate_config("noise.sigma0 = 0.7\ntruth.sigma0 = 0.5").is_err());
        cfg.set("replicates", &Value::Integer(3), Provenance::Override).unwrap();
        assert_eq!(cfg.provenance["replicates"], Provenance::Override);
        assert!(cfg.set("replicates", &Value::Integer(0), Provenance::Override).is_err());
    }

    #[test]
    fn every_scenario_builds() {
        for s in Scenario::ALL {
            let cfg = ScenarioConfig::defaults(s);
            assert!(cfg.check().is_empty());
            cfg.truth_model().unwrap();
            cfg.model_prior().unwrap();
        }
    }
}
