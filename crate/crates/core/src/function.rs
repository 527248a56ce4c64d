//! Regression functions on the compact domain: smooth basis expansions
//! (prior-supported η), gridded sample paths, and closed-form rules such as
//! step functions for a discontinuous truth η₀.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::domain::{q_expectation, CompactDomain, Expectation, Hyperplane, MeasureQ};
use crate::error::{invalid, Error, Result};
use crate::numeric::linspace;

/// One trigonometric basis element; every element is bounded by 1 in
/// absolute value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrigTerm {
    /// `∏_j cos(freq_j x_j + phase_j)`
    Tensor { freq: Vec<f64>, phase: Vec<f64> },
    /// `cos(freq · x + phase)`
    Plane { freq: Vec<f64>, phase: f64 },
}

impl TrigTerm {
    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            TrigTerm::Tensor { freq, phase } => {
                let mut v = 1.0;
                for ((f, p), xi) in freq.iter().zip(phase).zip(x) {
                    if *f != 0.0 || *p != 0.0 {
                        v *= (f * xi + p).cos();
                    }
                }
                v
            }
            TrigTerm::Plane { freq, phase } => {
                let arg: f64 = freq.iter().zip(x).map(|(f, xi)| f * xi).sum::<f64>() + phase;
                arg.cos()
            }
        }
    }

    /// Derivative along `axis` as `(scale, term)` with `∂ψ = scale · term`.
    fn derivative(&self, axis: usize) -> (f64, TrigTerm) {
        match self {
            TrigTerm::Tensor { freq, phase } => {
                let mut phase = phase.clone();
                phase[axis] += FRAC_PI_2;
                (
                    freq[axis],
                    TrigTerm::Tensor {
                        freq: freq.clone(),
                        phase,
                    },
                )
            }
            TrigTerm::Plane { freq, phase } => (
                freq[axis],
                TrigTerm::Plane {
                    freq: freq.clone(),
                    phase: phase + FRAC_PI_2,
                },
            ),
        }
    }

    fn is_constant(&self) -> bool {
        match self {
            TrigTerm::Tensor { freq, phase } => freq.iter().all(|f| *f == 0.0) && phase.iter().all(|p| *p == 0.0),
            TrigTerm::Plane { freq, phase } => freq.iter().all(|f| *f == 0.0) && *phase == 0.0,
        }
    }
}

/// An ordered family of basis elements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Basis {
    terms: Vec<TrigTerm>,
}

impl Basis {
    pub fn new(terms: Vec<TrigTerm>) -> Self {
        Self { terms }
    }

    pub fn empty() -> Self {
        Self { terms: Vec::new() }
    }

    /// Tensor cosine basis `∏ cos(π k_j (x_j − a_j)/(b_j − a_j))`, multi-indices
    /// taken in order of increasing total degree; the first element is the
    /// constant.
    pub fn cosine(domain: &CompactDomain, count: usize) -> Self {
        let d = domain.dim();
        let mut terms = Vec::with_capacity(count);
        let mut degree = 0usize;
        while terms.len() < count {
            for k in multi_indices_of_degree(d, degree) {
                if terms.len() == count {
                    break;
                }
                let mut freq = Vec::with_capacity(d);
                let mut phase = Vec::with_capacity(d);
                for (j, &kj) in k.iter().enumerate() {
                    let (a, b) = domain.bounds()[j];
                    let f = PI * kj as f64 / (b - a);
                    freq.push(f);
                    phase.push(-f * a);
                }
                terms.push(TrigTerm::Tensor { freq, phase });
            }
            degree += 1;
        }
        Self { terms }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[TrigTerm] {
        &self.terms
    }

    /// Row `(ψ_1(x), …, ψ_K(x))`.
    pub fn row(&self, x: &[f64]) -> Vec<f64> {
        self.terms.iter().map(|t| t.value(x)).collect()
    }

    pub fn row_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, t) in out.iter_mut().zip(&self.terms) {
            *o = t.value(x);
        }
    }

    /// Index of a constant element, if the basis has one.
    pub fn constant_index(&self) -> Option<usize> {
        self.terms.iter().position(TrigTerm::is_constant)
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if self.terms.iter().all(|t| match t {
            TrigTerm::Tensor { freq, phase } => freq.len() == d && phase.len() == d,
            TrigTerm::Plane { freq, .. } => freq.len() == d,
        }) {
            Ok(())
        } else {
            Err(invalid(format!("basis terms must all have dimension {d}")))
        }
    }
}

fn multi_indices_of_degree(d: usize, degree: usize) -> Vec<Vec<usize>> {
    if d == 1 {
        return vec![vec![degree]];
    }
    let mut out = Vec::new();
    for first in (0..=degree).rev() {
        for mut rest in multi_indices_of_degree(d - 1, degree - first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisExpansion {
    pub basis: Basis,
    pub coefficients: Vec<f64>,
}

impl BasisExpansion {
    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        self.basis
            .terms
            .iter()
            .zip(&self.coefficients)
            .filter(|(_, w)| **w != 0.0)
            .map(|(t, w)| w * t.value(x))
            .sum()
    }

    /// `Σ |w_k|`, a certified sup-norm bound since every `|ψ_k| ≤ 1`.
    pub fn certified_bound(&self) -> f64 {
        self.coefficients.iter().map(|w| w.abs()).sum()
    }

    pub fn derivative(&self, axis: usize) -> BasisExpansion {
        let mut terms = Vec::with_capacity(self.basis.len());
        let mut coefficients = Vec::with_capacity(self.basis.len());
        for (t, w) in self.basis.terms.iter().zip(&self.coefficients) {
            let (scale, dt) = t.derivative(axis);
            terms.push(dt);
            coefficients.push(w * scale);
        }
        BasisExpansion {
            basis: Basis { terms },
            coefficients,
        }
    }
}

/// Tensor-grid samples with multilinear interpolation; evaluation outside
/// the grid hull clamps to the boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    axes: Vec<Vec<f64>>,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(axes: Vec<Vec<f64>>, values: Vec<f64>) -> Result<Self> {
        if axes.is_empty() || axes.iter().any(|a| a.is_empty()) {
            return Err(invalid("grid axes must be nonempty"));
        }
        for a in &axes {
            if a.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(invalid("grid axes must be strictly increasing"));
            }
        }
        let count: usize = axes.iter().map(Vec::len).product();
        if count != values.len() {
            return Err(invalid(format!("grid has {count} nodes but {} values", values.len())));
        }
        Ok(Self { axes, values })
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn strides(&self) -> Vec<usize> {
        let d = self.axes.len();
        let mut s = vec![1; d];
        for j in (0..d.saturating_sub(1)).rev() {
            s[j] = s[j + 1] * self.axes[j + 1].len();
        }
        s
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let strides = self.strides();
        let d = self.axes.len();
        // (lower index, upper weight) per axis
        let mut cell = Vec::with_capacity(d);
        for (j, axis) in self.axes.iter().enumerate() {
            if axis.len() == 1 {
                cell.push((0usize, 0.0));
                continue;
            }
            let v = x[j].clamp(axis[0], axis[axis.len() - 1]);
            let hi = axis.partition_point(|&a| a <= v).clamp(1, axis.len() - 1);
            let lo = hi - 1;
            let t = (v - axis[lo]) / (axis[hi] - axis[lo]);
            cell.push((lo, t));
        }
        let mut total = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = 0;
            for (j, &(lo, t)) in cell.iter().enumerate() {
                let up = (corner >> j) & 1 == 1;
                if self.axes[j].len() == 1 {
                    if up {
                        w = 0.0;
                    }
                    idx += lo * strides[j];
                    continue;
                }
                w *= if up { t } else { 1.0 - t };
                idx += (lo + up as usize) * strides[j];
            }
            if w != 0.0 {
                total += w * self.values[idx];
            }
        }
        total
    }

    /// Second-order finite differences along `axis` (one-sided at the ends).
    pub fn derivative(&self, axis: usize) -> Result<GridFunction> {
        let nodes = &self.axes[axis];
        let m = nodes.len();
        if m < 2 {
            return Err(Error::NotDifferentiable(format!(
                "grid has a single node along axis {axis}"
            )));
        }
        let strides = self.strides();
        let stride = strides[axis];
        let mut out = vec![0.0; self.values.len()];
        for base in 0..self.values.len() {
            if !(base / stride).is_multiple_of(m) {
                continue;
            }
            let f = |i: usize| self.values[base + i * stride];
            for i in 0..m {
                let d = if m == 2 {
                    (f(1) - f(0)) / (nodes[1] - nodes[0])
                } else if i == 0 {
                    three_point(nodes[0], nodes[1], nodes[2], f(0), f(1), f(2), nodes[0])
                } else if i == m - 1 {
                    three_point(
                        nodes[m - 3],
                        nodes[m - 2],
                        nodes[m - 1],
                        f(m - 3),
                        f(m - 2),
                        f(m - 1),
                        nodes[m - 1],
                    )
                } else {
                    three_point(nodes[i - 1], nodes[i], nodes[i + 1], f(i - 1), f(i), f(i + 1), nodes[i])
                };
                out[base + i * stride] = d;
            }
        }
        GridFunction::new(self.axes.clone(), out)
    }
}

/// Derivative at `x` of the quadratic through three points.
fn three_point(x0: f64, x1: f64, x2: f64, f0: f64, f1: f64, f2: f64, x: f64) -> f64 {
    let l0 = (2.0 * x - x1 - x2) / ((x0 - x1) * (x0 - x2));
    let l1 = (2.0 * x - x0 - x2) / ((x1 - x0) * (x1 - x2));
    let l2 = (2.0 * x - x0 - x1) / ((x2 - x0) * (x2 - x1));
    f0 * l0 + f1 * l1 + f2 * l2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ClosedForm {
    Constant {
        value: f64,
    },
    /// `amplitude · sin(2π frequency x_axis + phase) + offset`
    Sinusoid {
        amplitude: f64,
        frequency: f64,
        phase: f64,
        offset: f64,
        axis: usize,
    },
    /// Right-continuous piecewise constant along one axis; `heights` has
    /// one more entry than `breakpoints`.
    Step {
        axis: usize,
        breakpoints: Vec<f64>,
        heights: Vec<f64>,
    },
}

impl ClosedForm {
    fn value(&self, x: &[f64]) -> f64 {
        match self {
            ClosedForm::Constant { value } => *value,
            ClosedForm::Sinusoid {
                amplitude,
                frequency,
                phase,
                offset,
                axis,
            } => amplitude * (2.0 * PI * frequency * x[*axis] + phase).sin() + offset,
            ClosedForm::Step {
                axis,
                breakpoints,
                heights,
            } => heights[breakpoints.partition_point(|&b| b <= x[*axis])],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "repr", rename_all = "snake_case")]
pub enum Repr {
    Basis(BasisExpansion),
    Grid(GridFunction),
    Closed(ClosedForm),
}

/// A real function on a compact domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFunction {
    pub domain: CompactDomain,
    pub repr: Repr,
}

impl RegressionFunction {
    pub fn zero(domain: CompactDomain) -> Self {
        Self::constant(domain, 0.0)
    }

    pub fn constant(domain: CompactDomain, value: f64) -> Self {
        Self {
            domain,
            repr: Repr::Closed(ClosedForm::Constant { value }),
        }
    }

    /// `amplitude · sin(2π frequency x_axis)`.
    pub fn sinusoid(domain: CompactDomain, axis: usize, amplitude: f64, frequency: f64) -> Result<Self> {
        if axis >= domain.dim() {
            return Err(invalid(format!("axis {axis} out of range")));
        }
        Ok(Self {
            domain,
            repr: Repr::Closed(ClosedForm::Sinusoid {
                amplitude,
                frequency,
                phase: 0.0,
                offset: 0.0,
                axis,
            }),
        })
    }

    pub fn step(domain: CompactDomain, axis: usize, breakpoints: Vec<f64>, heights: Vec<f64>) -> Result<Self> {
        if axis >= domain.dim() {
            return Err(invalid(format!("axis {axis} out of range")));
        }
        if heights.len() != breakpoints.len() + 1 {
            return Err(invalid("a step function needs one more height than breakpoints"));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(invalid("step breakpoints must be strictly increasing"));
        }
        Ok(Self {
            domain,
            repr: Repr::Closed(ClosedForm::Step {
                axis,
                breakpoints,
                heights,
            }),
        })
    }

    /// Unit jump at `location` along axis 0: 0 to the left, 1 to the right.
    pub fn unit_step(domain: CompactDomain, location: f64) -> Self {
        Self::step(domain, 0, vec![location], vec![0.0, 1.0]).expect("valid unit step")
    }

    pub fn expansion(domain: CompactDomain, basis: Basis, coefficients: Vec<f64>) -> Result<Self> {
        basis.check_dim(domain.dim())?;
        if basis.len() != coefficients.len() {
            return Err(invalid(format!(
                "{} basis terms but {} coefficients",
                basis.len(),
                coefficients.len()
            )));
        }
        Ok(Self {
            domain,
            repr: Repr::Basis(BasisExpansion { basis, coefficients }),
        })
    }

    pub fn grid(domain: CompactDomain, grid: GridFunction) -> Result<Self> {
        if grid.axes.len() != domain.dim() {
            return Err(invalid("grid dimension does not match the domain"));
        }
        Ok(Self {
            domain,
            repr: Repr::Grid(grid),
        })
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Value at `x`; fails if `x` lies outside the domain.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        self.domain.check(x)?;
        Ok(self.value(x))
    }

    /// Value at `x` without the domain check.
    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        match &self.repr {
            Repr::Basis(b) => b.value(x),
            Repr::Grid(g) => g.value(x),
            Repr::Closed(c) => c.value(x),
        }
    }

    /// Discontinuity hyperplanes declared by the representation.
    pub fn discontinuities(&self) -> Vec<Hyperplane> {
        match &self.repr {
            Repr::Closed(ClosedForm::Step { axis, breakpoints, .. }) => breakpoints
                .iter()
                .map(|&location| Hyperplane { axis: *axis, location })
                .collect(),
            _ => Vec::new(),
        }
    }

    /// `f + c`.
    pub fn shifted(&self, c: f64) -> Self {
        let repr = match &self.repr {
            Repr::Basis(b) => {
                let mut b = b.clone();
                match b.basis.constant_index() {
                    Some(i) => b.coefficients[i] += c,
                    None => {
                        let d = self.dim();
                        b.basis.terms.push(TrigTerm::Tensor {
                            freq: vec![0.0; d],
                            phase: vec![0.0; d],
                        });
                        b.coefficients.push(c);
                    }
                }
                Repr::Basis(b)
            }
            Repr::Grid(g) => Repr::Grid(GridFunction {
                axes: g.axes.clone(),
                values: g.values.iter().map(|v| v + c).collect(),
            }),
            Repr::Closed(ClosedForm::Constant { value }) => Repr::Closed(ClosedForm::Constant { value: value + c }),
            Repr::Closed(ClosedForm::Sinusoid {
                amplitude,
                frequency,
                phase,
                offset,
                axis,
            }) => Repr::Closed(ClosedForm::Sinusoid {
                amplitude: *amplitude,
                frequency: *frequency,
                phase: *phase,
                offset: offset + c,
                axis: *axis,
            }),
            Repr::Closed(ClosedForm::Step {
                axis,
                breakpoints,
                heights,
            }) => Repr::Closed(ClosedForm::Step {
                axis: *axis,
                breakpoints: breakpoints.clone(),
                heights: heights.iter().map(|h| h + c).collect(),
            }),
        };
        Self {
            domain: self.domain.clone(),
            repr,
        }
    }

    /// `s · f`.
    pub fn scaled(&self, s: f64) -> Self {
        let repr = match &self.repr {
            Repr::Basis(b) => Repr::Basis(BasisExpansion {
                basis: b.basis.clone(),
                coefficients: b.coefficients.iter().map(|w| w * s).collect(),
            }),
            Repr::Grid(g) => Repr::Grid(GridFunction {
                axes: g.axes.clone(),
                values: g.values.iter().map(|v| v * s).collect(),
            }),
            Repr::Closed(ClosedForm::Constant { value }) => Repr::Closed(ClosedForm::Constant { value: value * s }),
            Repr::Closed(ClosedForm::Sinusoid {
                amplitude,
                frequency,
                phase,
                offset,
                axis,
            }) => Repr::Closed(ClosedForm::Sinusoid {
                amplitude: amplitude * s,
                frequency: *frequency,
                phase: *phase,
                offset: offset * s,
                axis: *axis,
            }),
            Repr::Closed(ClosedForm::Step {
                axis,
                breakpoints,
                heights,
            }) => Repr::Closed(ClosedForm::Step {
                axis: *axis,
                breakpoints: breakpoints.clone(),
                heights: heights.iter().map(|h| h * s).collect(),
            }),
        };
        Self {
            domain: self.domain.clone(),
            repr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupNormMethod {
    Analytic,
    DenseGrid,
}

/// Sup-norm estimate. For dense grids `value` is a lower bound of the true
/// sup-norm; `certified_upper` is set when an upper bound is known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupNormReport {
    pub value: f64,
    pub method: SupNormMethod,
    pub resolution: usize,
    pub certified_upper: Option<f64>,
}

impl SupNormReport {
    /// The certified bound if present, otherwise the grid value.
    pub fn best_upper(&self) -> f64 {
        self.certified_upper.unwrap_or(self.value)
    }
}

/// Default per-axis resolution for dense-grid sup-norms.
pub fn default_resolution(dim: usize) -> usize {
    match dim {
        1 => 2048,
        2 => 256,
        3 => 64,
        _ => 16,
    }
}

/// Iterate an `m`-per-axis grid over the domain, including the boundary.
pub fn for_each_grid_point<F: FnMut(&[f64])>(domain: &CompactDomain, m: usize, mut f: F) {
    let axes: Vec<Vec<f64>> = domain.bounds().iter().map(|&(a, b)| linspace(a, b, m)).collect();
    let d = axes.len();
    let mut idx = vec![0usize; d];
    let mut x = vec![0.0; d];
    let total = m.pow(d as u32);
    for _ in 0..total {
        for j in 0..d {
            x[j] = axes[j][idx[j]];
        }
        f(&x);
        for j in (0..d).rev() {
            idx[j] += 1;
            if idx[j] < m {
                break;
            }
            idx[j] = 0;
        }
    }
}

/// `‖f‖ = sup |f|` over the domain.
pub fn sup_norm(f: &RegressionFunction, m: usize) -> Result<SupNormReport> {
    if m < 2 {
        return Err(invalid("sup-norm grid resolution must be at least 2"));
    }
    match &f.repr {
        Repr::Closed(ClosedForm::Constant { value }) => {
            return Ok(SupNormReport {
                value: value.abs(),
                method: SupNormMethod::Analytic,
                resolution: 0,
                certified_upper: Some(value.abs()),
            })
        }
        Repr::Closed(ClosedForm::Step { heights, .. }) => {
            // assumes every piece intersects the domain
            let v = heights.iter().fold(0.0f64, |acc, h| acc.max(h.abs()));
            return Ok(SupNormReport {
                value: v,
                method: SupNormMethod::Analytic,
                resolution: 0,
                certified_upper: Some(v),
            });
        }
        Repr::Grid(g) => {
            // exact for piecewise multilinear interpolation
            let v = g.values.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
            return Ok(SupNormReport {
                value: v,
                method: SupNormMethod::Analytic,
                resolution: 0,
                certified_upper: Some(v),
            });
        }
        _ => {}
    }
    let mut max = 0.0f64;
    let mut bad = None;
    for_each_grid_point(&f.domain, m, |x| {
        let v = f.value(x);
        if v.is_nan() && bad.is_none() {
            bad = Some(x.to_vec());
        }
        max = max.max(v.abs());
    });
    if let Some(node) = bad {
        return Err(Error::Evaluation { node, value: f64::NAN });
    }
    let certified_upper = match &f.repr {
        Repr::Basis(b) => Some(b.certified_bound()),
        Repr::Closed(ClosedForm::Sinusoid { amplitude, offset, .. }) => Some(amplitude.abs() + offset.abs()),
        _ => None,
    };
    Ok(SupNormReport {
        value: max,
        method: SupNormMethod::DenseGrid,
        resolution: m,
        certified_upper,
    })
}

/// Dense-grid estimate of `‖f − g‖`.
pub fn sup_norm_of_difference(f: &RegressionFunction, g: &RegressionFunction, m: usize) -> Result<f64> {
    if f.domain != g.domain {
        return Err(invalid("functions live on different domains"));
    }
    let mut max = 0.0f64;
    for_each_grid_point(&f.domain, m, |x| max = max.max((f.value(x) - g.value(x)).abs()));
    Ok(max)
}

/// The partial derivative `∂f/∂x_axis`.
pub fn partial_derivative(f: &RegressionFunction, axis: usize) -> Result<RegressionFunction> {
    if axis >= f.dim() {
        return Err(invalid(format!("axis {axis} out of range for dimension {}", f.dim())));
    }
    let repr = match &f.repr {
        Repr::Basis(b) => Repr::Basis(b.derivative(axis)),
        Repr::Grid(g) => Repr::Grid(g.derivative(axis)?),
        Repr::Closed(ClosedForm::Constant { .. }) => Repr::Closed(ClosedForm::Constant { value: 0.0 }),
        Repr::Closed(ClosedForm::Sinusoid {
            amplitude,
            frequency,
            phase,
            axis: along,
            ..
        }) => {
            if *along == axis {
                Repr::Closed(ClosedForm::Sinusoid {
                    amplitude: amplitude * 2.0 * PI * frequency,
                    frequency: *frequency,
                    phase: phase + FRAC_PI_2,
                    offset: 0.0,
                    axis,
                })
            } else {
                Repr::Closed(ClosedForm::Constant { value: 0.0 })
            }
        }
        Repr::Closed(ClosedForm::Step { .. }) => {
            return Err(Error::NotDifferentiable("step functions have jump discontinuities".into()))
        }
    };
    Ok(RegressionFunction {
        domain: f.domain.clone(),
        repr,
    })
}

/// `E_Q (f − g)²`, splitting cubature panels at declared discontinuities.
pub fn l2q_distance_sq(f: &RegressionFunction, g: &RegressionFunction, q: &MeasureQ) -> Result<Expectation> {
    if f.domain != g.domain || &f.domain != q.domain() {
        return Err(invalid("functions and Q must share one domain"));
    }
    let mut breaks = f.discontinuities();
    breaks.extend(g.discontinuities());
    let q = q.with_breaks(&breaks);
    q_expectation(&q, |x| {
        let d = f.value(x) - g.value(x);
        d * d
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> CompactDomain {
        CompactDomain::unit(1)
    }

    #[test]
    fn evaluate_examples() {
        let z = RegressionFunction::zero(unit());
        assert_eq!(z.evaluate(&[0.3]).unwrap(), 0.0);
        let basis = Basis::cosine(&unit(), 4);
        let f = RegressionFunction::expansion(unit(), basis, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        for x in [0.0, 0.2, 0.77, 1.0] {
            assert_eq!(f.evaluate(&[x]).unwrap(), 1.0);
        }
        let s = RegressionFunction::unit_step(unit(), 0.5);
        assert_eq!(s.evaluate(&[0.25]).unwrap(), 0.0);
        assert_eq!(s.evaluate(&[0.75]).unwrap(), 1.0);
        assert!(matches!(s.evaluate(&[1.5]), Err(Error::Domain { .. })));
    }

    #[test]
    fn sup_norm_examples() {
        let c = RegressionFunction::constant(unit(), -2.5);
        assert_eq!(sup_norm(&c, 16).unwrap().value, 2.5);
        let s = RegressionFunction::sinusoid(unit(), 0, 1.0, 1.0).unwrap();
        let r = sup_norm(&s, 1001).unwrap();
        assert!((r.value - 1.0).abs() < 1e-4);
        assert_eq!(r.method, SupNormMethod::DenseGrid);
        let b = RegressionFunction::expansion(unit(), Basis::cosine(&unit(), 2), vec![0.5, -0.25]).unwrap();
        assert_eq!(sup_norm(&b, 64).unwrap().certified_upper, Some(0.75));
        assert!(sup_norm(&b, 1).is_err());
    }

    #[test]
    fn derivative_examples() {
        let c = RegressionFunction::constant(unit(), 4.0);
        assert_eq!(partial_derivative(&c, 0).unwrap().value(&[0.4]), 0.0);
        let s = RegressionFunction::sinusoid(unit(), 0, 1.0, 1.0).unwrap();
        let ds = partial_derivative(&s, 0).unwrap();
        assert!((ds.value(&[0.0]) - 2.0 * PI).abs() < 1e-10);
        assert!((ds.value(&[0.3]) - 2.0 * PI * (2.0 * PI * 0.3).cos()).abs() < 1e-10);
        let step = RegressionFunction::unit_step(unit(), 0.5);
        assert!(matches!(partial_derivative(&step, 0), Err(Error::NotDifferentiable(_))));
    }

    #[test]
    fn grid_derivative_is_second_order() {
        let err_at = |m: usize| {
            let xs = linspace(0.0, 1.0, m);
            let vals: Vec<f64> = xs.iter().map(|x| (2.0 * PI * x).sin()).collect();
            let g = GridFunction::new(vec![xs.clone()], vals).unwrap();
            let dg = g.derivative(0).unwrap();
            xs.iter()
                .zip(dg.values())
                .map(|(x, d)| (d - 2.0 * PI * (2.0 * PI * x).cos()).abs())
                .fold(0.0, f64::max)
        };
        let e1 = err_at(101);
        let e2 = err_at(201);
        // halving h should cut the error by about 4
        assert!(e1 / e2 > 3.5, "ratio {}", e1 / e2);
        assert!(e1 < 0.02);
    }

    #[test]
    fn basis_derivative_matches_finite_difference() {
        let d2 = CompactDomain::unit(2);
        let basis = Basis::cosine(&d2, 10);
        let w: Vec<f64> = (0..10).map(|k| 1.0 / (1.0 + k as f64)).collect();
        let f = RegressionFunction::expansion(d2, basis, w).unwrap();
        for axis in 0..2 {
            let df = partial_derivative(&f, axis).unwrap();
            let x = [0.31, 0.67];
            let h = 1e-6;
            let mut xp = x;
            let mut xm = x;
            xp[axis] += h;
            xm[axis] -= h;
            let fd = (f.value(&xp) - f.value(&xm)) / (2.0 * h);
            assert!((df.value(&x) - fd).abs() < 1e-7);
            assert!(sup_norm(&df, 32).unwrap().value.is_finite());
        }
    }

    #[test]
    fn l2q_examples() {
        let q = MeasureQ::uniform(unit());
        let s = RegressionFunction::unit_step(unit(), 0.5);
        assert_eq!(l2q_distance_sq(&s, &s, &q).unwrap().value, 0.0);
        let one = RegressionFunction::constant(unit(), 1.0);
        let zero = RegressionFunction::zero(unit());
        assert!((l2q_distance_sq(&one, &zero, &q).unwrap().value - 1.0).abs() < 1e-13);
        assert!((l2q_distance_sq(&zero, &s, &q).unwrap().value - 0.5).abs() < 1e-13);
        // breakpoint off the panel grid still integrates exactly
        let s2 = RegressionFunction::unit_step(unit(), 0.3141);
        assert!((l2q_distance_sq(&zero, &s2, &q).unwrap().value - (1.0 - 0.3141)).abs() < 1e-13);
    }

    #[test]
    fn cosine_basis_graded_order_in_2d() {
        let b = Basis::cosine(&CompactDomain::unit(2), 6);
        assert_eq!(b.len(), 6);
        assert_eq!(b.constant_index(), Some(0));
    }

    #[test]
    fn grid_bilinear_interpolation() {
        let g = GridFunction::new(vec![vec![0.0, 1.0], vec![0.0, 1.0]], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert!((g.value(&[0.5, 0.5]) - 1.5).abs() < 1e-15);
        assert!((g.value(&[1.0, 0.0]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn json_round_trip() {
        let f = RegressionFunction::unit_step(unit(), 0.5);
        let text = serde_json::to_string(&f).unwrap();
        assert!(text.contains("\"repr\":\"closed\""));
        let back: RegressionFunction = serde_json::from_str(&text).unwrap();
        assert_eq!(back, f);
    }
}
