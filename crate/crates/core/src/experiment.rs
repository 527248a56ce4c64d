//! Scenario runner: the stages behind `equirate run`, their CSV/JSON
//! outputs and the run manifest.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Provenance, ScenarioConfig, ThetaNotion};
use crate::domain::MeasureQ;
use crate::equipartition::{
    replicate_datasets, uniform_gap_on_compact, write_trace_csv, write_uniform_gap_csv, EquipartitionTrace, Experiment, GapSummary,
    UniformGapRow,
};
use crate::error::{Error, Result};
use crate::klrate::{h_inf_estimate, kl_rate, within_n_epsilon, HGridRow, HInfEstimate, HInfOptions, Theta, TrueModel};
use crate::noise::NoiseFamily;
use crate::numeric::{derive_seed, least_squares_slope, linspace, mean, median};
use crate::posterior::{
    discrete_posterior, mcmc_posterior, posterior_set_mass, predictive_distance, write_predictive_csv, DiscreteThetaSpace, ModelPrior,
    PosteriorSamples, PredictiveReport,
};
use crate::sieve::{beta_check, prior_sieve_complement_mass, write_sieve_json, SieveReport, SieveSpec};

const TAG_KL: u64 = 0x4B4C;
const TAG_EQUI: u64 = 0xE9;
const TAG_RATE: u64 = 0x2A7E;
const TAG_POST: u64 = 0x9057;
const TAG_CHAIN: u64 = 0xC4A1;
const TAG_SIEVE: u64 = 0x51E;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Klrate,
    Equipartition,
    Rate,
    Posterior,
    Predictive,
    Sieve,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Klrate,
        Stage::Equipartition,
        Stage::Rate,
        Stage::Posterior,
        Stage::Predictive,
        Stage::Sieve,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Klrate => "klrate",
            Stage::Equipartition => "equipartition",
            Stage::Rate => "rate",
            Stage::Posterior => "posterior",
            Stage::Predictive => "predictive",
            Stage::Sieve => "sieve",
        }
    }
}

/// Objects shared by all stages.
pub struct Setup {
    pub truth: TrueModel,
    pub postulated: NoiseFamily,
    pub q: MeasureQ,
    pub prior: ModelPrior,
}

impl Setup {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self> {
        Ok(Self {
            truth: cfg.truth_model()?,
            postulated: cfg.postulated()?,
            q: cfg.measure(),
            prior: cfg.model_prior()?,
        })
    }

    pub fn experiment(&self, cfg: &ScenarioConfig) -> Experiment<'_> {
        Experiment {
            truth: &self.truth,
            postulated: &self.postulated,
            q: &self.q,
            design: cfg.design_kind(),
        }
    }
}

/// `h(Θ)` over the prior's basis span and an h-grid along σ through the
/// minimizer (`theta_id` 0) and through η₀ (`theta_id` 1).
pub fn klrate_stage(cfg: &ScenarioConfig, setup: &Setup) -> Result<(HInfEstimate, Vec<HGridRow>)> {
    let opts = HInfOptions {
        seed: derive_seed(cfg.seed, &[TAG_KL]),
        ..HInfOptions::default()
    };
    let est = h_inf_estimate(&setup.postulated, &setup.prior.coefficients.basis, &setup.truth, &setup.q, opts)?;
    let s = est.theta.sigma;
    let sigmas: Vec<f64> = linspace((s / 4.0).ln(), (4.0 * s).ln(), 41).into_iter().map(f64::exp).collect();
    let etas = [est.theta.eta.clone(), setup.truth.eta0().clone()];
    let mut rows = Vec::with_capacity(2 * sigmas.len());
    for (id, eta) in etas.iter().enumerate() {
        for &sigma in &sigmas {
            let r = kl_rate(&Theta::new(eta.clone(), sigma)?, &setup.postulated, &setup.truth, &setup.q)?;
            rows.push(HGridRow {
                theta_id: id,
                sigma,
                h: r.h,
                j: Some(r.h - est.h),
                method: r.method,
                err: r.error,
            });
        }
    }
    Ok((est, rows))
}

/// The equipartition θ: `(η₀ + shift, ratio·σ₀)`.
pub fn equipartition_theta(cfg: &ScenarioConfig, setup: &Setup) -> Result<Theta> {
    Theta::new(
        setup.truth.eta0().shifted(cfg.equipartition_shift),
        cfg.equipartition_sigma_ratio * setup.truth.sigma0(),
    )
}

pub fn equipartition_stage(cfg: &ScenarioConfig, setup: &Setup) -> Result<(EquipartitionTrace, Vec<UniformGapRow>)> {
    let theta = equipartition_theta(cfg, setup)?;
    let exp = setup.experiment(cfg);
    let seed = derive_seed(cfg.seed, &[TAG_EQUI]);
    let trace = crate::equipartition::equipartition_trace(&theta, &exp, &cfg.schedule.equipartition, cfg.replicates, seed)?;
    let grid: Vec<Theta> = [0.75, 1.0, 1.5]
        .iter()
        .flat_map(|r| {
            [0.0, 0.5].iter().map(move |d| (r, d)).collect::<Vec<_>>()
        })
        .map(|(r, d)| Theta::new(setup.truth.eta0().shifted(d * setup.truth.sigma0()), r * theta.sigma))
        .collect::<Result<_>>()?;
    let uniform = uniform_gap_on_compact(&grid, &exp, &cfg.schedule.equipartition, cfg.replicates, seed)?;
    Ok((trace, uniform))
}

/// Discrete surrogate around the span minimizer: the minimizer itself plus
/// three perturbed atoms forming the set A.
pub fn surrogate_space(est: &HInfEstimate, setup: &Setup) -> Result<DiscreteThetaSpace> {
    let (eta, s) = (&est.theta.eta, est.theta.sigma);
    let s0 = setup.truth.sigma0();
    let atoms = vec![
        est.theta.clone(),
        Theta::new(eta.shifted(s0), s)?,
        Theta::new(eta.clone(), 2.0 * s)?,
        Theta::new(eta.shifted(0.5 * s0), 1.5 * s)?,
    ];
    DiscreteThetaSpace::uniform(atoms, &setup.postulated, &setup.truth, &setup.q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub replicate: usize,
    pub n: usize,
    pub log_mass: f64,
    pub rate: f64,
    pub j: f64,
}

/// `log π(A | Y_n)` for A = all atoms but the best, per replicate and n,
/// with the least-squares slope per replicate over the top decade.
pub fn rate_stage(cfg: &ScenarioConfig, setup: &Setup, space: &DiscreteThetaSpace) -> Result<(Vec<RateRow>, Vec<f64>)> {
    let subset: Vec<usize> = (1..space.len()).collect();
    let j = space.j_of(&subset)?;
    let exp = setup.experiment(cfg);
    let schedule = &cfg.schedule.rate;
    let per_rep: Vec<Result<(Vec<RateRow>, f64)>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let data = replicate_datasets(&exp, schedule, derive_seed(cfg.seed, &[TAG_RATE, r as u64]))?;
            let mut rows = Vec::with_capacity(data.len());
            for ds in &data {
                let n = ds.len();
                let post = discrete_posterior(space, ds, &setup.postulated, &setup.truth, &[n])?;
                let log_mass = post.log_mass(&subset)?[0];
                rows.push(RateRow {
                    replicate: r,
                    n,
                    log_mass,
                    rate: log_mass / n as f64,
                    j,
                });
            }
            let n_max = *schedule.last().expect("validated");
            let (xs, ys): (Vec<f64>, Vec<f64>) = rows
                .iter()
                .filter(|row| row.n * 10 >= n_max)
                .map(|row| (row.n as f64, row.log_mass))
                .unzip();
            let slope = if xs.len() >= 2 { least_squares_slope(&xs, &ys) } else { f64::NAN };
            Ok((rows, slope))
        })
        .collect();
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    for r in per_rep {
        let (rs, s) = r?;
        rows.extend(rs);
        slopes.push(s);
    }
    Ok((rows, slopes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub n: usize,
    pub replicate: usize,
    pub acceptance_rate: f64,
    pub sigma_acceptance_rate: f64,
    pub sigma_mean: f64,
    pub sigma_mcse: f64,
    pub sigma_ess: f64,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NEpsilonRow {
    pub n: usize,
    pub replicate: usize,
    pub epsilon: f64,
    pub h_inf: f64,
    pub mass: f64,
    pub mc_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorRun {
    pub n: usize,
    pub replicate: usize,
    pub samples: PosteriorSamples,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PosteriorStage {
    pub chains: Vec<ChainSummary>,
    pub nepsilon: Vec<NEpsilonRow>,
    pub predictive: Vec<(usize, PredictiveReport)>,
    /// `(n, replicate, draw index, σ, log posterior)`
    pub trace: Vec<(usize, usize, usize, f64, f64)>,
}

/// MCMC for every replicate and n, with N_ε masses (`ε_n = n^{-power}`)
/// and predictive distances at `x_new`.
pub fn posterior_stage(cfg: &ScenarioConfig, setup: &Setup, h_inf: f64, with_nepsilon: bool) -> Result<PosteriorStage> {
    let exp = setup.experiment(cfg);
    let schedule = &cfg.schedule.posterior;
    let per_rep: Vec<Result<PosteriorStage>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let data = replicate_datasets(&exp, schedule, derive_seed(cfg.seed, &[TAG_POST, r as u64]))?;
            let mut out = PosteriorStage::default();
            for ds in &data {
                let n = ds.len();
                let seed = derive_seed(cfg.seed, &[TAG_CHAIN, r as u64, n as u64]);
                let samples = mcmc_posterior(&setup.prior, ds, &setup.postulated, cfg.chain, seed)?;
                let (sigma_mean, sigma_mcse, sigma_ess) = PosteriorSamples::mean_with_error(&samples.sigma_chain());
                out.chains.push(ChainSummary {
                    n,
                    replicate: r,
                    acceptance_rate: samples.acceptance_rate,
                    sigma_acceptance_rate: samples.sigma_acceptance_rate,
                    sigma_mean,
                    sigma_mcse,
                    sigma_ess,
                    warning: samples.warning.clone(),
                });
                for (i, d) in samples.draws.iter().enumerate() {
                    out.trace.push((n, r, i, d.sigma, d.log_posterior));
                }
                if with_nepsilon {
                    let epsilon = (n as f64).powf(-cfg.epsilon_power);
                    let m = posterior_set_mass(&samples, |t| {
                        Ok(within_n_epsilon(kl_rate(t, &setup.postulated, &setup.truth, &setup.q)?.h, h_inf, epsilon))
                    })?;
                    out.nepsilon.push(NEpsilonRow {
                        n,
                        replicate: r,
                        epsilon,
                        h_inf,
                        mass: m.mass,
                        mc_error: m.error,
                    });
                }
                let mix = samples.predictive_mixture(&cfg.x_new, &setup.postulated);
                out.predictive.push((r, predictive_distance(&setup.truth, &cfg.x_new, &mix, n, cfg.y_points)?));
            }
            Ok(out)
        })
        .collect();
    let mut all = PosteriorStage::default();
    for r in per_rep {
        let r = r?;
        all.chains.extend(r.chains);
        all.nepsilon.extend(r.nepsilon);
        all.predictive.extend(r.predictive);
        all.trace.extend(r.trace);
    }
    all.chains.sort_by_key(|c| (c.n, c.replicate));
    all.nepsilon.sort_by_key(|c| (c.n, c.replicate));
    all.predictive.sort_by_key(|(r, p)| (p.n, *r));
    all.trace.sort_by_key(|t| (t.0, t.1, t.2));
    Ok(all)
}

/// Median `ρ_H = √(ρ_H²)` and median `ρ_H²` per n.
pub fn predictive_medians(rows: &[(usize, PredictiveReport)]) -> Vec<(usize, f64, f64)> {
    let mut ns: Vec<usize> = rows.iter().map(|(_, p)| p.n).collect();
    ns.sort_unstable();
    ns.dedup();
    ns.into_iter()
        .map(|n| {
            let h2: Vec<f64> = rows.iter().filter(|(_, p)| p.n == n).map(|(_, p)| p.hellinger_sq).collect();
            let h: Vec<f64> = h2.iter().map(|v| v.sqrt()).collect();
            (n, median(&h), median(&h2))
        })
        .collect()
}

pub fn sieve_stage(cfg: &ScenarioConfig, setup: &Setup, h_inf: f64) -> Result<Vec<SieveReport>> {
    let seed = derive_seed(cfg.seed, &[TAG_SIEVE]);
    cfg.sieve
        .n
        .iter()
        .map(|&n| {
            let spec = SieveSpec::new(cfg.sieve.beta, n)?;
            let mut r = prior_sieve_complement_mass(
                &setup.prior.coefficients,
                &setup.prior.sigma,
                &spec,
                cfg.sieve.draws,
                seed,
                cfg.sieve.resolution,
            )?;
            r.beta_check = Some(beta_check(cfg.sieve.beta, h_inf));
            Ok(r)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario: String,
    pub config_hash: String,
    pub version: String,
    pub stages: Vec<Stage>,
    pub files: Vec<FileEntry>,
    pub wall_clock_seconds: f64,
    pub seeds: BTreeMap<String, u64>,
    pub provenance: BTreeMap<String, Provenance>,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
}

struct Outputs {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl Outputs {
    fn write<F>(&mut self, name: &str, body: F) -> Result<()>
    where
        F: FnOnce(&mut dyn Write) -> Result<()>,
    {
        let mut buf = Vec::new();
        body(&mut buf)?;
        let path = self.dir.join(name);
        let mut f = BufWriter::new(File::create(&path)?);
        f.write_all(&buf)?;
        f.flush()?;
        self.files.push(FileEntry {
            path: name.to_string(),
            sha256: hex::encode(Sha256::digest(&buf)),
            bytes: buf.len() as u64,
        });
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            w.write_all(b"\n")?;
            Ok(())
        })
    }
}

fn f17(x: f64) -> String {
    format!("{x:.17e}")
}

fn csv_rows<W: Write + ?Sized>(out: &mut W, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

/// Header of every CSV the runner writes.
pub const CSV_SCHEMAS: &[(&str, &[&str])] = &[
    ("h_grid.csv", &["theta_id", "sigma", "h", "J", "method", "err"]),
    ("equipartition_trace.csv", &["family", "n", "replicate", "statistic", "target", "gap"]),
    ("equipartition_summary.csv", &["n", "mean_gap", "median_abs_gap", "var_gap"]),
    ("uniform_gap.csv", &["n", "replicate", "sup_gap", "grid_size"]),
    ("rate_trace.csv", &["replicate", "n", "log_mass", "rate", "J"]),
    ("posterior_trace.csv", &["n", "replicate", "draw", "sigma", "log_posterior"]),
    (
        "posterior_summary.csv",
        &["n", "replicate", "acceptance_rate", "sigma_acceptance_rate", "sigma_mean", "sigma_mcse", "sigma_ess", "warning"],
    ),
    ("nepsilon_trace.csv", &["n", "replicate", "epsilon", "h_inf", "mass", "mc_error"]),
    ("predictive.csv", &["n", "replicate", "x_new", "hellinger_sq", "tv", "quadrature_error", "mass"]),
];

fn header(name: &str) -> &'static [&'static str] {
    CSV_SCHEMAS.iter().find(|(n, _)| *n == name).map(|(_, h)| *h).expect("known file")
}

fn gap_summary_rows(s: &[GapSummary]) -> Vec<Vec<String>> {
    s.iter()
        .map(|g| vec![g.n.to_string(), f17(g.mean_gap), f17(g.median_abs_gap), f17(g.var_gap)])
        .collect()
}

/// Run the requested stages, writing outputs into `cfg.output_dir`. On a
/// stage failure the manifest is still written, naming the stage.
pub fn run_stages(cfg: &ScenarioConfig, stages: &[Stage]) -> Result<RunManifest> {
    let started = Instant::now();
    std::fs::create_dir_all(&cfg.output_dir)?;
    let mut out = Outputs {
        dir: cfg.output_dir.clone(),
        files: Vec::new(),
    };
    let mut stages = stages.to_vec();
    stages.sort();
    stages.dedup();
    let mut seeds = BTreeMap::new();
    seeds.insert("base".to_string(), cfg.seed);
    for (name, tag) in [
        ("klrate", TAG_KL),
        ("equipartition", TAG_EQUI),
        ("rate", TAG_RATE),
        ("posterior", TAG_POST),
        ("sieve", TAG_SIEVE),
    ] {
        seeds.insert(name.to_string(), derive_seed(cfg.seed, &[tag]));
    }
    let mut manifest = RunManifest {
        scenario: cfg.scenario.to_string(),
        config_hash: cfg.hash(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        stages: stages.clone(),
        files: Vec::new(),
        wall_clock_seconds: 0.0,
        seeds,
        provenance: cfg.provenance.clone(),
        failed_stage: None,
        error: None,
    };
    let result = execute(cfg, &stages, &mut out);
    manifest.files = out.files;
    manifest.wall_clock_seconds = started.elapsed().as_secs_f64();
    if let Err((stage, e)) = &result {
        manifest.failed_stage = Some(stage.clone());
        manifest.error = Some(e.to_string());
    }
    let f = File::create(cfg.output_dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(BufWriter::new(f), &manifest)?;
    match result {
        Ok(()) => Ok(manifest),
        Err((stage, e)) => Err(Error::Stage {
            stage,
            source: Box::new(e),
        }),
    }
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunManifest> {
    run_stages(cfg, &Stage::ALL)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunSummary {
    pub scenario: String,
    pub h_inf: Option<f64>,
    pub h_inf_method: Option<String>,
    pub h_inf_k: Option<usize>,
    pub theta_notion: Option<ThetaNotion>,
    pub equipartition_h: Option<f64>,
    pub equipartition: Vec<GapSummary>,
    pub rate_j: Option<f64>,
    pub rate_mean_slope: Option<f64>,
    /// `(n, median ρ_H, median ρ_H²)`
    pub predictive: Vec<(usize, f64, f64)>,
    /// `(n, median N_ε mass)`
    pub nepsilon: Vec<(usize, f64)>,
    pub sieve: Vec<(u64, f64)>,
}

fn at(stage: &'static str) -> impl Fn(Error) -> (String, Error) {
    move |e| (stage.to_string(), e)
}

fn execute(cfg: &ScenarioConfig, stages: &[Stage], out: &mut Outputs) -> std::result::Result<(), (String, Error)> {
    let setup = Setup::new(cfg).map_err(at("setup"))?;
    let has = |s: Stage| stages.contains(&s);
    let mut summary = RunSummary {
        scenario: cfg.scenario.to_string(),
        ..RunSummary::default()
    };

    let needs_h = has(Stage::Klrate) || has(Stage::Rate) || has(Stage::Posterior) || has(Stage::Sieve);
    let mut est = None;
    if needs_h {
        let (e, grid) = klrate_stage(cfg, &setup).map_err(at("klrate"))?;
        if has(Stage::Klrate) {
            out.write("h_grid.csv", |w| crate::klrate::write_h_grid_csv(&grid, w)).map_err(at("klrate"))?;
            out.json("h_inf.json", &e).map_err(at("klrate"))?;
        }
        summary.h_inf = Some(e.h);
        summary.h_inf_method = Some(format!("{:?}", e.method).to_lowercase());
        summary.h_inf_k = Some(e.k);
        est = Some(e);
    }
    let space = match &est {
        Some(e) if has(Stage::Rate) || cfg.theta_notion == ThetaNotion::Atoms => Some(surrogate_space(e, &setup).map_err(at("rate"))?),
        _ => None,
    };
    let h_inf = match (cfg.theta_notion, &space, &est) {
        (ThetaNotion::Atoms, Some(s), _) => s.h_inf(),
        (_, _, Some(e)) => e.h,
        _ => f64::NAN,
    };
    if needs_h {
        summary.theta_notion = Some(cfg.theta_notion);
        summary.h_inf = Some(h_inf);
    }

    if has(Stage::Equipartition) {
        let (trace, uniform) = equipartition_stage(cfg, &setup).map_err(at("equipartition"))?;
        let gaps = trace.summary();
        out.write("equipartition_trace.csv", |w| write_trace_csv(&trace, w)).map_err(at("equipartition"))?;
        out.write("equipartition_summary.csv", |w| {
            csv_rows(w, header("equipartition_summary.csv"), gap_summary_rows(&gaps))
        })
        .map_err(at("equipartition"))?;
        out.write("uniform_gap.csv", |w| write_uniform_gap_csv(&uniform, w)).map_err(at("equipartition"))?;
        summary.equipartition_h = Some(trace.h);
        summary.equipartition = gaps;
    }

    if has(Stage::Rate) {
        let space = space.as_ref().expect("built above");
        let (rows, slopes) = rate_stage(cfg, &setup, space).map_err(at("rate"))?;
        out.write("rate_trace.csv", |w| {
            csv_rows(
                w,
                header("rate_trace.csv"),
                rows.iter()
                    .map(|r| vec![r.replicate.to_string(), r.n.to_string(), f17(r.log_mass), f17(r.rate), f17(r.j)]),
            )
        })
        .map_err(at("rate"))?;
        summary.rate_j = rows.first().map(|r| r.j);
        summary.rate_mean_slope = Some(mean(&slopes));
    }

    if has(Stage::Posterior) || has(Stage::Predictive) {
        let stage_name = if has(Stage::Posterior) { "posterior" } else { "predictive" };
        let post = posterior_stage(cfg, &setup, h_inf, has(Stage::Posterior)).map_err(at(stage_name))?;
        if has(Stage::Posterior) {
            out.write("posterior_trace.csv", |w| {
                csv_rows(
                    w,
                    header("posterior_trace.csv"),
                    post.trace
                        .iter()
                        .map(|t| vec![t.0.to_string(), t.1.to_string(), t.2.to_string(), f17(t.3), f17(t.4)]),
                )
            })
            .map_err(at("posterior"))?;
            out.write("posterior_summary.csv", |w| {
                csv_rows(
                    w,
                    header("posterior_summary.csv"),
                    post.chains.iter().map(|c| {
                        vec![
                            c.n.to_string(),
                            c.replicate.to_string(),
                            format!("{:.6}", c.acceptance_rate),
                            format!("{:.6}", c.sigma_acceptance_rate),
                            f17(c.sigma_mean),
                            f17(c.sigma_mcse),
                            format!("{:.3}", c.sigma_ess),
                            c.warning.clone().unwrap_or_default(),
                        ]
                    }),
                )
            })
            .map_err(at("posterior"))?;
            out.write("nepsilon_trace.csv", |w| {
                csv_rows(
                    w,
                    header("nepsilon_trace.csv"),
                    post.nepsilon.iter().map(|r| {
                        vec![r.n.to_string(), r.replicate.to_string(), f17(r.epsilon), f17(r.h_inf), f17(r.mass), f17(r.mc_error)]
                    }),
                )
            })
            .map_err(at("posterior"))?;
            let mut ns: Vec<usize> = post.nepsilon.iter().map(|r| r.n).collect();
            ns.dedup();
            summary.nepsilon = ns
                .into_iter()
                .map(|n| {
                    let m: Vec<f64> = post.nepsilon.iter().filter(|r| r.n == n).map(|r| r.mass).collect();
                    (n, median(&m))
                })
                .collect();
        }
        if has(Stage::Predictive) {
            out.write("predictive.csv", |w| write_predictive_csv(&post.predictive, w)).map_err(at("predictive"))?;
            summary.predictive = predictive_medians(&post.predictive);
        }
    }

    if has(Stage::Sieve) {
        let reports = sieve_stage(cfg, &setup, h_inf).map_err(at("sieve"))?;
        out.write("sieve.json", |w| write_sieve_json(&reports, w)).map_err(at("sieve"))?;
        summary.sieve = reports.iter().map(|r| (r.n, r.estimate)).collect();
    }

    out.json("summary.json", &summary).map_err(at("summary"))?;
    Ok(())
}

/// Read the summary written by a run.
pub fn read_summary(dir: &Path) -> Result<RunSummary> {
    Ok(serde_json::from_reader(File::open(dir.join("summary.json"))?)?)
}
