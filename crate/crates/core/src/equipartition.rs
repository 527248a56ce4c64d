//! Simulation under θ₀, the log likelihood ratio `log R_n(θ)`, and the
//! empirical equipartition check `(1/n) log R_n(θ) → −h(θ)`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{make_design, CovariateDesign, DesignKind, MeasureQ};
use crate::error::{invalid, Result};
use crate::klrate::{kl_rate, Theta, TrueModel};
use crate::noise::{log_density, NoiseFamily};
use crate::numeric::{derive_seed, median, rng_from, CompensatedSum};

const TAG_EQUIPARTITION: u64 = 0xE0;
const TAG_NOISE: u64 = 1;
const TAG_DESIGN: u64 = 2;

/// Observations `y_i = η₀(x_i) + ε_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub design: CovariateDesign,
    pub y: Vec<f64>,
    pub label: String,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// First `n` observations.
    pub fn prefix(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            design: self.design.prefix(n),
            y: self.y[..n].to_vec(),
            label: self.label.clone(),
            seed: self.seed,
        }
    }

    /// Rows `range` of the dataset.
    pub fn rows(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.end > self.len() || range.start > range.end {
            return Err(invalid("row range out of bounds"));
        }
        let d = self.design.dim();
        let pts: Vec<f64> = range.clone().flat_map(|i| self.design.point(i).to_vec()).collect();
        Ok(Self {
            design: CovariateDesign::from_points(self.design.kind(), d, pts)?,
            y: self.y[range].to_vec(),
            label: self.label.clone(),
            seed: self.seed,
        })
    }
}

/// Standardized error stream of length `n` for a seed.
pub fn noise_stream(family: &NoiseFamily, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from(seed);
    (0..n).map(|_| family.draw(&mut rng)).collect()
}

/// Draw responses on `design` under the true model.
pub fn simulate(truth: &TrueModel, design: &CovariateDesign, seed: u64) -> Result<Dataset> {
    if design.is_empty() {
        return Err(invalid("design must be nonempty"));
    }
    let eps = noise_stream(&truth.family, design.len(), seed);
    simulate_with_noise(truth, design, &eps, seed)
}

/// Responses from a precomputed standardized error stream (its first
/// `design.len()` entries).
pub fn simulate_with_noise(truth: &TrueModel, design: &CovariateDesign, eps: &[f64], seed: u64) -> Result<Dataset> {
    if eps.len() < design.len() {
        return Err(invalid("noise stream shorter than the design"));
    }
    let s0 = truth.sigma0();
    let y = design
        .points()
        .zip(eps)
        .map(|(x, e)| truth.eta0().value(x) + s0 * e)
        .collect();
    Ok(Dataset {
        design: design.clone(),
        y,
        label: truth.family.name(),
        seed,
    })
}

fn eta_values(theta: &Theta, dataset: &Dataset) -> Vec<f64> {
    dataset.design.points().map(|x| theta.eta.value(x)).collect()
}

/// `log R_n(θ) = Σ log f_θ(y_i|x_i) − log f_{θ₀}(y_i|x_i)` when the
/// postulated family is the true one.
pub fn log_ratio(dataset: &Dataset, theta: &Theta, truth: &TrueModel, postulated: &NoiseFamily) -> Result<f64> {
    if *postulated != truth.family {
        return Err(invalid(format!(
            "postulated family {} differs from the true family {}",
            postulated.name(),
            truth.family.name()
        )));
    }
    let eta = eta_values(theta, dataset);
    let eta0 = eta_values(&truth.theta, dataset);
    Ok(log_ratio_from_values(&dataset.y, &eta, &eta0, theta.sigma, truth.sigma0(), postulated))
}

/// Same-family log ratio from fitted values; each sum is compensated.
pub fn log_ratio_from_values(y: &[f64], eta: &[f64], eta0: &[f64], sigma: f64, sigma0: f64, family: &NoiseFamily) -> f64 {
    let n = y.len() as f64;
    let lead = n * (sigma0 / sigma).ln();
    let mut s_true = CompensatedSum::new();
    let mut s_theta = CompensatedSum::new();
    match family {
        NoiseFamily::Normal => {
            for i in 0..y.len() {
                s_true.add((y[i] - eta0[i]).powi(2));
                s_theta.add((y[i] - eta[i]).powi(2));
            }
            lead + s_true.value() / (2.0 * sigma0 * sigma0) - s_theta.value() / (2.0 * sigma * sigma)
        }
        NoiseFamily::Laplace => {
            for i in 0..y.len() {
                s_true.add((y[i] - eta0[i]).abs());
                s_theta.add((y[i] - eta[i]).abs());
            }
            lead + s_true.value() / sigma0 - s_theta.value() / sigma
        }
        NoiseFamily::General(_) => {
            for i in 0..y.len() {
                s_true.add(family.log_phi((y[i] - eta0[i]) / sigma0));
                s_theta.add(family.log_phi((y[i] - eta[i]) / sigma));
            }
            lead + s_theta.value() - s_true.value()
        }
    }
}

/// Log ratio with a postulated family that may differ from the truth.
pub fn log_ratio_cross(dataset: &Dataset, theta: &Theta, postulated: &NoiseFamily, truth: &TrueModel) -> Result<f64> {
    let eta = eta_values(theta, dataset);
    let eta0 = eta_values(&truth.theta, dataset);
    let mut acc = CompensatedSum::new();
    for i in 0..dataset.len() {
        acc.add(log_density(postulated, theta.sigma, dataset.y[i] - eta[i]));
        acc.add(-log_density(&truth.family, truth.sigma0(), dataset.y[i] - eta0[i]));
    }
    Ok(acc.value())
}

/// Log ratio using the same-family closed forms when they apply.
pub fn log_ratio_any(dataset: &Dataset, theta: &Theta, postulated: &NoiseFamily, truth: &TrueModel) -> Result<f64> {
    if *postulated == truth.family {
        log_ratio(dataset, theta, truth, postulated)
    } else {
        log_ratio_cross(dataset, theta, postulated, truth)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub family: String,
    pub n: usize,
    pub replicate: usize,
    pub statistic: f64,
    pub target: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquipartitionTrace {
    pub rows: Vec<TraceRow>,
    pub h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    pub n: usize,
    pub mean_gap: f64,
    pub median_abs_gap: f64,
    pub var_gap: f64,
}

impl EquipartitionTrace {
    /// Per-n mean, median absolute value and variance of the gaps.
    pub fn summary(&self) -> Vec<GapSummary> {
        let mut ns: Vec<usize> = self.rows.iter().map(|r| r.n).collect();
        ns.sort_unstable();
        ns.dedup();
        ns.into_iter()
            .map(|n| {
                let gaps: Vec<f64> = self.rows.iter().filter(|r| r.n == n).map(|r| r.gap).collect();
                let abs: Vec<f64> = gaps.iter().map(|g| g.abs()).collect();
                GapSummary {
                    n,
                    mean_gap: crate::numeric::mean(&gaps),
                    median_abs_gap: median(&abs),
                    var_gap: crate::numeric::variance(&gaps),
                }
            })
            .collect()
    }
}

/// Setting shared by the equipartition experiments.
#[derive(Debug, Clone)]
pub struct Experiment<'a> {
    pub truth: &'a TrueModel,
    pub postulated: &'a NoiseFamily,
    pub q: &'a MeasureQ,
    pub design: DesignKind,
}

fn check_schedule(schedule: &[usize], replicates: usize) -> Result<()> {
    if schedule.is_empty() || schedule[0] == 0 || schedule.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("n-schedule must be nonempty, positive and strictly increasing"));
    }
    if replicates == 0 {
        return Err(invalid("replicates must be at least 1"));
    }
    Ok(())
}

/// Datasets for one replicate across the schedule: one error stream whose
/// prefixes feed every n; i.i.d. designs are prefixes too, partition
/// designs are rebuilt for each n.
pub fn replicate_datasets(exp: &Experiment<'_>, schedule: &[usize], replicate_seed: u64) -> Result<Vec<Dataset>> {
    let n_max = *schedule.last().ok_or_else(|| invalid("empty schedule"))?;
    let eps = noise_stream(&exp.truth.family, n_max, derive_seed(replicate_seed, &[TAG_NOISE]));
    let design_seed = derive_seed(replicate_seed, &[TAG_DESIGN]);
    let iid = match exp.design {
        DesignKind::IidFromQ { .. } => Some(make_design(exp.q, DesignKind::IidFromQ { seed: design_seed }, n_max)?),
        DesignKind::DeterministicPartition => None,
    };
    schedule
        .iter()
        .map(|&n| {
            let design = match &iid {
                Some(d) => d.prefix(n),
                None => make_design(exp.q, DesignKind::DeterministicPartition, n)?,
            };
            simulate_with_noise(exp.truth, &design, &eps, replicate_seed)
        })
        .collect()
}

pub fn replicate_seed(seed: u64, replicate: usize) -> u64 {
    derive_seed(seed, &[TAG_EQUIPARTITION, replicate as u64])
}

/// `(1/n) log R_n(θ)` against `−h(θ)` for every n and replicate.
pub fn equipartition_trace(
    theta: &Theta,
    exp: &Experiment<'_>,
    schedule: &[usize],
    replicates: usize,
    seed: u64,
) -> Result<EquipartitionTrace> {
    check_schedule(schedule, replicates)?;
    let h = kl_rate(theta, exp.postulated, exp.truth, exp.q)?.h;
    let family = exp.postulated.name();
    let per_rep: Vec<Result<Vec<TraceRow>>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let data = replicate_datasets(exp, schedule, replicate_seed(seed, r))?;
            data.iter()
                .map(|ds| {
                    let statistic = log_ratio_any(ds, theta, exp.postulated, exp.truth)? / ds.len() as f64;
                    Ok(TraceRow {
                        family: family.clone(),
                        n: ds.len(),
                        replicate: r,
                        statistic,
                        target: -h,
                        gap: statistic + h,
                    })
                })
                .collect()
        })
        .collect();
    let mut rows = Vec::with_capacity(replicates * schedule.len());
    for r in per_rep {
        rows.extend(r?);
    }
    rows.sort_by_key(|r| (r.n, r.replicate));
    Ok(EquipartitionTrace { rows, h })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformGapRow {
    pub n: usize,
    pub replicate: usize,
    pub sup_gap: f64,
    pub grid_size: usize,
}

/// `max_θ |(1/n) log R_n(θ) + h(θ)|` over a finite grid, all θ sharing the
/// replicate's data.
pub fn uniform_gap_on_compact(
    grid: &[Theta],
    exp: &Experiment<'_>,
    schedule: &[usize],
    replicates: usize,
    seed: u64,
) -> Result<Vec<UniformGapRow>> {
    check_schedule(schedule, replicates)?;
    if grid.is_empty() {
        return Err(invalid("θ grid must be nonempty"));
    }
    let hs: Vec<f64> = grid
        .iter()
        .map(|t| kl_rate(t, exp.postulated, exp.truth, exp.q).map(|r| r.h))
        .collect::<Result<_>>()?;
    let per_rep: Vec<Result<Vec<UniformGapRow>>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let data = replicate_datasets(exp, schedule, replicate_seed(seed, r))?;
            data.iter()
                .map(|ds| {
                    let mut sup: f64 = 0.0;
                    for (t, h) in grid.iter().zip(&hs) {
                        let s = log_ratio_any(ds, t, exp.postulated, exp.truth)? / ds.len() as f64;
                        sup = sup.max((s + h).abs());
                    }
                    Ok(UniformGapRow {
                        n: ds.len(),
                        replicate: r,
                        sup_gap: sup,
                        grid_size: grid.len(),
                    })
                })
                .collect()
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_rep {
        rows.extend(r?);
    }
    rows.sort_by_key(|r| (r.n, r.replicate));
    Ok(rows)
}

/// Median sup-gap per n.
pub fn median_sup_gap(rows: &[UniformGapRow]) -> Vec<(usize, f64)> {
    let mut ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    ns.into_iter()
        .map(|n| {
            let v: Vec<f64> = rows.iter().filter(|r| r.n == n).map(|r| r.sup_gap).collect();
            (n, median(&v))
        })
        .collect()
}

pub fn write_trace_csv<W: Write>(trace: &EquipartitionTrace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["family", "n", "replicate", "statistic", "target", "gap"])?;
    for r in &trace.rows {
        w.write_record([
            r.family.clone(),
            r.n.to_string(),
            r.replicate.to_string(),
            format!("{:.17e}", r.statistic),
            format!("{:.17e}", r.target),
            format!("{:.17e}", r.gap),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_uniform_gap_csv<W: Write>(rows: &[UniformGapRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "replicate", "sup_gap", "grid_size"])?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.replicate.to_string(),
            format!("{:.17e}", r.sup_gap),
            r.grid_size.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
