use std::path::Path;
use std::process::{Command, Output};

fn equirate(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_equirate"))
        .args(args)
        .current_dir(dir)
        .env_remove("EQUIRATE_WORKERS")
        .output()
        .unwrap()
}

const TINY: &str = r#"
scenario = "laplace_errors"
replicates = 1
[schedule]
equipartition = [50, 100]
posterior = [20, 40]
rate = [100, 150, 200]
[chain]
length = 2000
burnin = 200
[prior]
K = 4
[predictive]
points = 2001
[sieve]
n = [1, 10]
resolution = 8
"#;

#[test]
fn validate_accepts_and_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.toml");
    std::fs::write(&good, TINY).unwrap();
    let out = equirate(&["validate", good.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[truth]\nsigma0 = -1.0\n").unwrap();
    let out = equirate(&["validate", bad.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("truth.sigma0"));

    std::fs::write(&bad, "[prior]\nlenghtscale = 0.3\n").unwrap();
    let out = equirate(&["validate", bad.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("prior.lenghtscale"));
}

#[test]
fn tiny_run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let out = equirate(&["run", cfg.to_str().unwrap(), "--out", "res", "--seed", "5"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("res/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["scenario"], "laplace_errors");
    assert_eq!(manifest["provenance"]["seed"], "override");
    assert!(dir.path().join("res/predictive.csv").exists());
}

#[test]
fn stage_commands_and_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let c = cfg.to_str().unwrap();
    let out = equirate(&["equipartition", c, "--n", "60,120", "--out", "eq"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("eq/equipartition_summary.csv")).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("60,"));

    let out = equirate(&["sieve", c, "--n", "5,3", "--out", "s"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    let out = Command::new(env!("CARGO_BIN_EXE_equirate"))
        .args(["klrate", c, "--out", "k"])
        .current_dir(dir.path())
        .env("EQUIRATE_WORKERS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
