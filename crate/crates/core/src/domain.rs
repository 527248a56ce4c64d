//! Covariate domain, the covariate measure Q, designs, and cubature over Q.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numeric::{compensated_sum, open_unit, rng_from};
use crate::quadrature::gauss_legendre;

const CONTAINS_TOL: f64 = 1e-12;

/// Axis-aligned box `∏ [a_j, b_j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompactDomain {
    bounds: Vec<(f64, f64)>,
}

impl CompactDomain {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(invalid("domain dimension must be at least 1"));
        }
        for (j, &(a, b)) in bounds.iter().enumerate() {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(invalid(format!("axis {j}: need finite a < b, got [{a}, {b}]")));
            }
        }
        Ok(Self { bounds })
    }

    /// `[0, 1]^d`.
    pub fn unit(dim: usize) -> Self {
        assert!(dim >= 1, "domain dimension must be at least 1");
        Self {
            bounds: vec![(0.0, 1.0); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn width(&self, axis: usize) -> f64 {
        let (a, b) = self.bounds[axis];
        b - a
    }

    /// Lebesgue measure `L`.
    pub fn measure(&self) -> f64 {
        self.bounds.iter().map(|(a, b)| b - a).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(&self.bounds)
                .all(|(&v, &(a, b))| v >= a - CONTAINS_TOL && v <= b + CONTAINS_TOL)
    }

    pub fn check(&self, x: &[f64]) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::Domain { point: x.to_vec() })
        }
    }
}

/// A discontinuity hyperplane `x_axis = location`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperplane {
    pub axis: usize,
    pub location: f64,
}

/// Node-generation recipe behind a [`MeasureQ`].
#[derive(Debug, Clone, PartialEq)]
pub enum CubatureRule {
    /// Composite Gauss-Legendre per axis, panels split at the listed
    /// hyperplanes, tensor product across axes.
    TensorGauss {
        panels: usize,
        order: usize,
        breaks: Vec<Hyperplane>,
    },
    /// Halton points with equal weights; used for `d > 3`.
    QuasiMonteCarlo { points: usize },
}

impl CubatureRule {
    pub fn default_for(dim: usize) -> Self {
        match dim {
            1 => Self::TensorGauss {
                panels: 32,
                order: 8,
                breaks: vec![],
            },
            2 => Self::TensorGauss {
                panels: 8,
                order: 8,
                breaks: vec![],
            },
            3 => Self::TensorGauss {
                panels: 4,
                order: 6,
                breaks: vec![],
            },
            _ => Self::QuasiMonteCarlo { points: 1 << 14 },
        }
    }

    fn refined(&self) -> Self {
        match self {
            Self::TensorGauss { panels, order, breaks } => Self::TensorGauss {
                panels: panels * 2,
                order: *order,
                breaks: breaks.clone(),
            },
            Self::QuasiMonteCarlo { points } => Self::QuasiMonteCarlo { points: points * 2 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeasureKind {
    UniformLebesgue,
    DensityOnGrid,
}

type Density = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Probability measure Q on the domain, held as cubature nodes and weights.
#[derive(Clone)]
pub struct MeasureQ {
    domain: CompactDomain,
    kind: MeasureKind,
    rule: CubatureRule,
    density: Option<Density>,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl fmt::Debug for MeasureQ {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MeasureQ")
            .field("domain", &self.domain)
            .field("kind", &self.kind)
            .field("rule", &self.rule)
            .field("nodes", &self.len())
            .finish()
    }
}

/// Value of a Q-expectation together with its refinement error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Expectation {
    pub value: f64,
    pub error: f64,
}

impl MeasureQ {
    /// Uniform probability measure with the default cubature rule.
    pub fn uniform(domain: CompactDomain) -> Self {
        let rule = CubatureRule::default_for(domain.dim());
        Self::uniform_with(domain, rule)
    }

    pub fn uniform_with(domain: CompactDomain, rule: CubatureRule) -> Self {
        let (nodes, weights) = build_nodes(&domain, &rule);
        Self {
            domain,
            kind: MeasureKind::UniformLebesgue,
            rule,
            density: None,
            nodes,
            weights,
        }
    }

    /// Q with a Lebesgue density, tabulated on the cubature nodes and
    /// renormalized to total mass one.
    pub fn with_density<F>(domain: CompactDomain, density: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        let rule = CubatureRule::default_for(domain.dim());
        Self::density_with_rule(domain, rule, Arc::new(density))
    }

    fn density_with_rule(domain: CompactDomain, rule: CubatureRule, density: Density) -> Result<Self> {
        let (nodes, mut weights) = build_nodes(&domain, &rule);
        let d = domain.dim();
        for (i, w) in weights.iter_mut().enumerate() {
            let q = density(&nodes[i * d..(i + 1) * d]);
            if !(q.is_finite() && q >= 0.0) {
                return Err(Error::Evaluation {
                    node: nodes[i * d..(i + 1) * d].to_vec(),
                    value: q,
                });
            }
            *w *= q;
        }
        let total = compensated_sum(weights.iter().copied());
        if total <= 0.0 {
            return Err(invalid("density has zero mass on the domain"));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self {
            domain,
            kind: MeasureKind::DensityOnGrid,
            rule,
            density: Some(density),
            nodes,
            weights,
        })
    }

    pub fn domain(&self) -> &CompactDomain {
        &self.domain
    }

    pub fn kind(&self) -> MeasureKind {
        self.kind
    }

    pub fn rule(&self) -> &CubatureRule {
        &self.rule
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        let d = self.domain.dim();
        &self.nodes[i * d..(i + 1) * d]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        (0..self.len()).map(move |i| (self.node(i), self.weights[i]))
    }

    fn rebuild(&self, rule: CubatureRule) -> Self {
        match &self.density {
            None => Self::uniform_with(self.domain.clone(), rule),
            // the density was already accepted on a coarser grid of the same domain
            Some(d) => Self::density_with_rule(self.domain.clone(), rule, d.clone())
                .expect("density validated at construction"),
        }
    }

    /// Same measure with every panel halved.
    pub fn refined(&self) -> Self {
        self.rebuild(self.rule.refined())
    }

    /// Same measure with cubature panels split at the given hyperplanes.
    /// Quasi-Monte Carlo rules ignore breaks.
    pub fn with_breaks(&self, extra: &[Hyperplane]) -> Self {
        match &self.rule {
            CubatureRule::TensorGauss { panels, order, breaks } => {
                let mut all = breaks.clone();
                for h in extra {
                    if h.axis < self.domain.dim() && !all.contains(h) {
                        all.push(*h);
                    }
                }
                if all.len() == breaks.len() {
                    return self.clone();
                }
                self.rebuild(CubatureRule::TensorGauss {
                    panels: *panels,
                    order: *order,
                    breaks: all,
                })
            }
            CubatureRule::QuasiMonteCarlo { .. } => self.clone(),
        }
    }

    /// `Σ w_i f(node_i)` without an error estimate.
    pub fn sum<F: Fn(&[f64]) -> f64>(&self, f: F) -> Result<f64> {
        let mut acc = crate::numeric::CompensatedSum::new();
        for (x, w) in self.nodes() {
            let v = f(x);
            if v.is_nan() {
                return Err(Error::Evaluation {
                    node: x.to_vec(),
                    value: v,
                });
            }
            acc.add(w * v);
        }
        Ok(acc.value())
    }
}

fn axis_panels(a: f64, b: f64, panels: usize, cuts: &[f64]) -> Vec<(f64, f64)> {
    let mut edges = vec![a];
    let mut inner: Vec<f64> = cuts.iter().copied().filter(|&c| c > a && c < b).collect();
    inner.sort_by(f64::total_cmp);
    inner.dedup();
    edges.extend(inner);
    edges.push(b);
    let len = b - a;
    let mut out = Vec::new();
    for seg in edges.windows(2) {
        let (lo, hi) = (seg[0], seg[1]);
        let count = ((panels as f64 * (hi - lo) / len).round() as usize).max(1);
        let h = (hi - lo) / count as f64;
        for k in 0..count {
            let p_lo = lo + h * k as f64;
            let p_hi = if k + 1 == count { hi } else { lo + h * (k + 1) as f64 };
            out.push((p_lo, p_hi));
        }
    }
    out
}

fn build_nodes(domain: &CompactDomain, rule: &CubatureRule) -> (Vec<f64>, Vec<f64>) {
    let d = domain.dim();
    let total = domain.measure();
    match rule {
        CubatureRule::TensorGauss { panels, order, breaks } => {
            let (gx, gw) = gauss_legendre(*order);
            let axes: Vec<(Vec<f64>, Vec<f64>)> = (0..d)
                .map(|j| {
                    let (a, b) = domain.bounds()[j];
                    let cuts: Vec<f64> = breaks.iter().filter(|h| h.axis == j).map(|h| h.location).collect();
                    let mut xs = Vec::new();
                    let mut ws = Vec::new();
                    for (lo, hi) in axis_panels(a, b, *panels, &cuts) {
                        let c = 0.5 * (lo + hi);
                        let h = 0.5 * (hi - lo);
                        for (x, w) in gx.iter().zip(&gw) {
                            xs.push(c + h * x);
                            ws.push(h * w);
                        }
                    }
                    (xs, ws)
                })
                .collect();
            let count: usize = axes.iter().map(|a| a.0.len()).product();
            let mut nodes = Vec::with_capacity(count * d);
            let mut weights = Vec::with_capacity(count);
            let mut idx = vec![0usize; d];
            for _ in 0..count {
                let mut w = 1.0;
                for j in 0..d {
                    nodes.push(axes[j].0[idx[j]]);
                    w *= axes[j].1[idx[j]];
                }
                weights.push(w / total);
                // odometer with the last axis fastest
                for j in (0..d).rev() {
                    idx[j] += 1;
                    if idx[j] < axes[j].0.len() {
                        break;
                    }
                    idx[j] = 0;
                }
            }
            (nodes, weights)
        }
        CubatureRule::QuasiMonteCarlo { points } => {
            const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];
            assert!(d <= PRIMES.len(), "quasi-Monte Carlo supports up to 16 dimensions");
            let mut nodes = Vec::with_capacity(points * d);
            for i in 1..=*points as u64 {
                for (j, &p) in PRIMES.iter().take(d).enumerate() {
                    let (a, b) = domain.bounds()[j];
                    nodes.push(a + (b - a) * radical_inverse(i, p));
                }
            }
            (nodes, vec![1.0 / *points as f64; *points])
        }
    }
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// `E_Q[f]` with an error estimate from one level of node refinement.
pub fn q_expectation<F: Fn(&[f64]) -> f64>(q: &MeasureQ, f: F) -> Result<Expectation> {
    let coarse = q.sum(&f)?;
    let fine = q.refined().sum(&f)?;
    Ok(Expectation {
        value: coarse,
        error: (fine - coarse).abs(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    IidFromQ { seed: u64 },
    DeterministicPartition,
}

/// Covariate points `x_1, …, x_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateDesign {
    kind: DesignKind,
    dim: usize,
    points: Vec<f64>,
}

impl CovariateDesign {
    pub fn from_points(kind: DesignKind, dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 || !points.len().is_multiple_of(dim) {
            return Err(invalid("point buffer length must be a multiple of the dimension"));
        }
        Ok(Self { kind, dim, points })
    }

    pub fn kind(&self) -> DesignKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.points.chunks_exact(self.dim)
    }

    /// The first `n` points, keeping the design kind.
    pub fn prefix(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            kind: self.kind,
            dim: self.dim,
            points: self.points[..n * self.dim].to_vec(),
        }
    }

    /// CSV with columns `index, x_1, …, x_d`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["index".to_string()];
        header.extend((1..=self.dim).map(|j| format!("x_{j}")));
        w.write_record(&header)?;
        for (i, p) in self.points().enumerate() {
            let mut row = vec![i.to_string()];
            row.extend(p.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Draw `n` covariate points from Q, or lay out an equal-measure partition.
pub fn make_design(q: &MeasureQ, kind: DesignKind, n: usize) -> Result<CovariateDesign> {
    if n == 0 {
        return Err(invalid("design size n must be at least 1"));
    }
    let domain = q.domain();
    let d = domain.dim();
    let points = match kind {
        DesignKind::IidFromQ { seed } => {
            let mut rng = rng_from(seed);
            match q.kind() {
                MeasureKind::UniformLebesgue => {
                    let mut pts = Vec::with_capacity(n * d);
                    for _ in 0..n {
                        for &(a, b) in domain.bounds() {
                            pts.push(a + (b - a) * open_unit(&mut rng));
                        }
                    }
                    pts
                }
                MeasureKind::DensityOnGrid => {
                    let dist = WeightedIndex::new(q.weights()).map_err(|e| invalid(e.to_string()))?;
                    let mut pts = Vec::with_capacity(n * d);
                    for _ in 0..n {
                        pts.extend_from_slice(q.node(dist.sample(&mut rng)));
                    }
                    pts
                }
            }
        }
        DesignKind::DeterministicPartition => {
            if q.kind() != MeasureKind::UniformLebesgue {
                return Err(Error::UnsupportedCombination(
                    "deterministic partition designs require uniform Q".into(),
                ));
            }
            partition_centers(domain, n)
        }
    };
    CovariateDesign::from_points(kind, d, points)
}

fn partition_centers(domain: &CompactDomain, n: usize) -> Vec<f64> {
    let d = domain.dim();
    let side = (n as f64).powf(1.0 / d as f64).round() as usize;
    if side.checked_pow(d as u32) == Some(n) {
        let mut pts = Vec::with_capacity(n * d);
        let mut idx = vec![0usize; d];
        for _ in 0..n {
            for (j, &(a, b)) in domain.bounds().iter().enumerate() {
                pts.push(a + (b - a) * (idx[j] as f64 + 0.5) / side as f64);
            }
            for j in (0..d).rev() {
                idx[j] += 1;
                if idx[j] < side {
                    break;
                }
                idx[j] = 0;
            }
        }
        return pts;
    }
    let mut pts = Vec::with_capacity(n * d);
    bisect_cells(domain.bounds().to_vec(), n, &mut pts);
    pts
}

/// Recursive bisection into `n` cells of equal measure; each cut is placed
/// along the currently longest axis.
fn bisect_cells(cell: Vec<(f64, f64)>, n: usize, out: &mut Vec<f64>) {
    if n == 1 {
        out.extend(cell.iter().map(|(a, b)| 0.5 * (a + b)));
        return;
    }
    let axis = (0..cell.len())
        .max_by(|&i, &j| (cell[i].1 - cell[i].0).total_cmp(&(cell[j].1 - cell[j].0)))
        .expect("nonempty cell");
    let left = n / 2;
    let (a, b) = cell[axis];
    let cut = a + (b - a) * left as f64 / n as f64;
    let mut lo = cell.clone();
    lo[axis] = (a, cut);
    let mut hi = cell;
    hi[axis] = (cut, b);
    bisect_cells(lo, left, out);
    bisect_cells(hi, n - left, out);
}

/// `(1/n) Σ f(x_i)` over the design points.
pub fn empirical_q_average<F: Fn(&[f64]) -> f64>(design: &CovariateDesign, f: F) -> Result<f64> {
    if design.is_empty() {
        return Err(invalid("empty design"));
    }
    let mut acc = crate::numeric::CompensatedSum::new();
    for x in design.points() {
        let v = f(x);
        if !v.is_finite() {
            return Err(Error::Evaluation {
                node: x.to_vec(),
                value: v,
            });
        }
        acc.add(v);
    }
    Ok(acc.value() / design.len() as f64)
}
