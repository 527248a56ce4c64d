use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use equirate::config::{validate_config, ConfigIssue, Provenance, ScenarioConfig};
use equirate::experiment::{run_stages, RunManifest, Stage};
use equirate::Error;

const WORKERS_VAR: &str = "EQUIRATE_WORKERS";

#[derive(Parser)]
#[command(name = "equirate", version, about = "Equipartition, KL-rate and posterior diagnostics for GP regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage of a scenario.
    Run(StageArgs),
    /// Check a configuration and print its hash and where each key came from.
    Validate {
        config: PathBuf,
    },
    /// Equipartition traces of (1/n) log R_n(θ) against -h(θ).
    Equipartition(StageArgs),
    /// h(Θ) over the basis span and the h-grid along σ.
    Klrate(StageArgs),
    /// MCMC posteriors, N_ε masses and the discrete-surrogate rate.
    Posterior(StageArgs),
    /// Posterior-predictive Hellinger and TV distances.
    Predictive(StageArgs),
    /// Prior mass outside the sieves.
    Sieve(StageArgs),
}

#[derive(Args)]
struct StageArgs {
    /// Scenario configuration (TOML). Defaults apply when omitted.
    config: Option<PathBuf>,
    /// Scenario name, used when the file does not set one.
    #[arg(long)]
    scenario: Option<String>,
    /// Sample sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<u64>>,
    #[arg(long)]
    replicates: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Validation(Vec<ConfigIssue>),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Validation(v) => Failure::Validation(v),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn load(path: Option<&Path>, scenario: Option<&str>) -> Result<ScenarioConfig, Failure> {
    let mut text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Failure::Runtime(format!("cannot read {}: {e}", p.display())))?,
        None => String::new(),
    };
    if let Some(s) = scenario {
        text = format!("scenario = {}\n{text}", toml::Value::String(s.to_string()));
    }
    validate_config(&text).map_err(Failure::Validation)
}

fn apply_overrides(cfg: &mut ScenarioConfig, args: &StageArgs, n_keys: &[&str]) -> Result<(), Failure> {
    let mut set = |key: &str, v: toml::Value| cfg.set(key, &v, Provenance::Override).map_err(Failure::Validation);
    if let Some(ns) = &args.n {
        if n_keys.is_empty() {
            return Err(Failure::Validation(vec![ConfigIssue {
                path: "--n".into(),
                message: "this command has no sample-size schedule".into(),
            }]));
        }
        let list = toml::Value::Array(ns.iter().map(|&n| toml::Value::Integer(n as i64)).collect());
        for k in n_keys {
            set(k, list.clone())?;
        }
    }
    if let Some(r) = args.replicates {
        set("replicates", toml::Value::Integer(r as i64))?;
    }
    if let Some(s) = args.seed {
        set("seed", toml::Value::Integer(s as i64))?;
    }
    if let Some(o) = &args.out {
        set("output.dir", toml::Value::String(o.display().to_string()))?;
    }
    Ok(())
}

fn configure_workers() -> Result<(), Failure> {
    let Ok(raw) = std::env::var(WORKERS_VAR) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| {
        Failure::Validation(vec![ConfigIssue {
            path: WORKERS_VAR.into(),
            message: format!("expected a positive integer, got `{raw}`"),
        }])
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Runtime(e.to_string()))
}

fn run(args: &StageArgs, stages: &[Stage], n_keys: &[&str]) -> Result<RunManifest, Failure> {
    let mut cfg = load(args.config.as_deref(), args.scenario.as_deref())?;
    apply_overrides(&mut cfg, args, n_keys)?;
    configure_workers()?;
    let manifest = run_stages(&cfg, stages)?;
    Ok(manifest)
}

// Write errors (a closed pipe) are ignored.
fn report(manifest: &RunManifest, dir: &Path) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "scenario {} ({:.1} s)", manifest.scenario, manifest.wall_clock_seconds);
    for f in &manifest.files {
        let _ = writeln!(out, "  {}", dir.join(&f.path).display());
    }
    let _ = writeln!(out, "  {}", dir.join("manifest.json").display());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Validate { config } => load(Some(config), None).map(|cfg| {
            println!("scenario = {:?}", cfg.scenario.as_str());
            println!("config_hash = {:?}", cfg.hash());
            for (key, source) in &cfg.provenance {
                println!("# {key}: {}", serde_json::to_value(source).unwrap_or_default().as_str().unwrap_or(""));
            }
            None
        }),
        Command::Run(a) => run(a, &Stage::ALL, &["schedule.equipartition", "schedule.posterior"]).map(|m| Some((m, a))),
        Command::Equipartition(a) => run(a, &[Stage::Equipartition], &["schedule.equipartition"]).map(|m| Some((m, a))),
        Command::Klrate(a) => run(a, &[Stage::Klrate], &[]).map(|m| Some((m, a))),
        Command::Posterior(a) => run(a, &[Stage::Klrate, Stage::Rate, Stage::Posterior], &["schedule.posterior"]).map(|m| Some((m, a))),
        Command::Predictive(a) => run(a, &[Stage::Predictive], &["schedule.posterior"]).map(|m| Some((m, a))),
        Command::Sieve(a) => run(a, &[Stage::Sieve], &["sieve.n"]).map(|m| Some((m, a))),
    };
    match result {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some((m, a))) => {
            let dir = a.out.clone().unwrap_or_else(|| {
                load(a.config.as_deref(), a.scenario.as_deref())
                    .map(|c| c.output_dir)
                    .unwrap_or_else(|_| PathBuf::from("out"))
            });
            report(&m, &dir);
            ExitCode::SUCCESS
        }
        Err(Failure::Validation(issues)) => {
            for i in issues {
                eprintln!("error: {i}");
            }
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
