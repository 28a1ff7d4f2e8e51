//! Radial, bi-radial and line discretizations.
//!
//! Functions are piecewise constant on cells. A radial cell `[e_i, e_{i+1}]`
//! in dimension `d` stands for the spherical shell of that radius range, with
//! Lebesgue measure `|S^{d-1}|/d · (e_{i+1}^d - e_i^d)`. Dimension 0 is the
//! one-point grid used for the missing `y''` factor when `k = 0`.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::params::sphere_area;

pub const DEFAULT_R_MIN: f64 = 1e-3;
pub const DEFAULT_R_MAX: f64 = 1e2;
pub const DEFAULT_M: usize = 128;

/// `∫_a^b ρ^e dρ` with the `e = -1` case handled.
pub fn power_integral(a: f64, b: f64, e: f64) -> f64 {
    if (e + 1.0).abs() < 1e-14 {
        (b / a).ln()
    } else {
        (b.powf(e + 1.0) - a.powf(e + 1.0)) / (e + 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialGrid {
    dim: u32,
    edges: Vec<f64>,
    radii: Vec<f64>,
    measure: Vec<f64>,
}

impl RadialGrid {
    /// Log-spaced edges from `r_min` to `r_max` (`m` cells), optionally with a
    /// leading `[0, r_min]` cell.
    pub fn log(dim: u32, r_min: f64, r_max: f64, m: usize, include_zero_cell: bool) -> Result<Self> {
        if m < 8 {
            return Err(Error::Grid(format!("need at least 8 cells, got {m}")));
        }
        if !(r_min > 0.0) || !(r_max > r_min) || !r_max.is_finite() {
            return Err(Error::Grid(format!(
                "need 0 < r_min < r_max, got r_min = {r_min}, r_max = {r_max}"
            )));
        }
        let ratio = (r_max / r_min).ln() / m as f64;
        let mut edges = Vec::with_capacity(m + 2);
        if include_zero_cell {
            edges.push(0.0);
        }
        edges.push(r_min);
        for i in 1..m {
            edges.push(r_min * (ratio * i as f64).exp());
        }
        edges.push(r_max);
        Self::from_edges(dim, edges)
    }

    /// `m` equal-width cells on `[0, r_max]`.
    pub fn uniform(dim: u32, r_max: f64, m: usize) -> Result<Self> {
        if m == 0 || !(r_max > 0.0) {
            return Err(Error::Grid("uniform grid needs m > 0 and r_max > 0".to_string()));
        }
        let h = r_max / m as f64;
        Self::from_edges(dim, (0..=m).map(|i| h * i as f64).collect())
    }

    pub fn from_edges(dim: u32, edges: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Ok(Self::point());
        }
        if edges.len() < 2 {
            return Err(Error::Grid("a grid needs at least one cell".into()));
        }
        if !(edges[0] >= 0.0) || edges.windows(2).any(|w| !(w[1] > w[0])) || !edges.iter().all(|e| e.is_finite()) {
            return Err(Error::Grid("edges must be finite, non-negative and strictly increasing".into()));
        }
        let radii = edges
            .windows(2)
            .map(|w| if w[0] == 0.0 { 0.5 * w[1] } else { (w[0] * w[1]).sqrt() })
            .collect();
        let measure = shell_measures(dim, &edges);
        Ok(Self {
            dim,
            edges,
            radii,
            measure,
        })
    }

    /// Grid whose cell measures are given exactly rather than recomputed from
    /// the edges (used for stacked rearrangement grids).
    pub(crate) fn with_measures(dim: u32, edges: Vec<f64>, measure: Vec<f64>) -> Result<Self> {
        let mut g = Self::from_edges(dim, edges)?;
        if measure.len() != g.len() {
            return Err(Error::Grid("measure count differs from cell count".into()));
        }
        g.measure = measure;
        Ok(g)
    }

    /// The zero-dimensional grid: a single cell of unit measure.
    pub fn point() -> Self {
        Self {
            dim: 0,
            edges: vec![0.0, 0.0],
            radii: vec![0.0],
            measure: vec![1.0],
        }
    }

    /// Same grid with every edge multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        if self.dim == 0 {
            return self.clone();
        }
        let edges: Vec<f64> = self.edges.iter().map(|e| e * s).collect();
        Self::from_edges(self.dim, edges).expect("scaling preserves grid validity")
    }

    pub fn dim(&self) -> u32 {
        self.dim
    }
    pub fn len(&self) -> usize {
        self.radii.len()
    }
    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }
    pub fn edges(&self) -> &[f64] {
        &self.edges
    }
    pub fn radii(&self) -> &[f64] {
        &self.radii
    }
    pub fn measure(&self) -> &[f64] {
        &self.measure
    }
    pub fn cell(&self, i: usize) -> (f64, f64) {
        (self.edges[i], self.edges[i + 1])
    }
    pub fn r_max(&self) -> f64 {
        *self.edges.last().unwrap()
    }
    pub fn total_measure(&self) -> f64 {
        self.measure.iter().sum()
    }

    /// `∫_{cell i} |z|^e dz` over the shell (the radial weight integrated exactly).
    pub fn weighted_measure(&self, i: usize, e: f64) -> f64 {
        if self.dim == 0 {
            return 1.0;
        }
        let (a, b) = self.cell(i);
        sphere_area(self.dim) * power_integral(a, b, e + f64::from(self.dim) - 1.0)
    }

    pub fn same_as(&self, other: &RadialGrid) -> bool {
        self.dim == other.dim && self.edges == other.edges
    }

    pub fn sample(self: &Arc<Self>, f: impl Fn(f64) -> f64) -> RadialFunction {
        RadialFunction::new(self.clone(), self.radii.iter().map(|&r| f(r)).collect())
            .expect("sampled length matches grid")
    }
}

fn shell_measures(dim: u32, edges: &[f64]) -> Vec<f64> {
    let area = sphere_area(dim);
    let d = f64::from(dim);
    edges
        .windows(2)
        .map(|w| match dim {
            1 => area * (w[1] - w[0]),
            2 => area / 2.0 * (w[1] - w[0]) * (w[1] + w[0]),
            _ => area / d * (w[1].powi(dim as i32) - w[0].powi(dim as i32)),
        })
        .collect()
}

/// Uniform grid of `m` cells of width `h` starting at `x0` on the real line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineGrid {
    pub x0: f64,
    pub h: f64,
    pub m: usize,
}

impl LineGrid {
    pub fn new(x0: f64, h: f64, m: usize) -> Result<Self> {
        if !(h > 0.0) || m == 0 || !x0.is_finite() {
            return Err(Error::Grid("line grid needs h > 0 and m > 0".into()));
        }
        Ok(Self { x0, h, m })
    }

    /// `m` cells covering `[-half_width, half_width]`.
    pub fn symmetric(half_width: f64, m: usize) -> Result<Self> {
        Self::new(-half_width, 2.0 * half_width / m as f64, m)
    }

    pub fn cell(&self, i: usize) -> (f64, f64) {
        let a = self.x0 + self.h * i as f64;
        (a, a + self.h)
    }
    pub fn center(&self, i: usize) -> f64 {
        self.x0 + self.h * (i as f64 + 0.5)
    }
}

/// Common access for piecewise-constant functions on measured cells.
pub trait CellFunction {
    fn values(&self) -> &[f64];
    fn values_mut(&mut self) -> &mut [f64];
    fn cell_measure(&self, idx: usize) -> f64;

    fn lp_norm(&self, p: f64) -> f64 {
        lp_norm(self, p)
    }

    fn is_zero(&self) -> bool {
        self.values().iter().all(|&v| v == 0.0)
    }

    fn check_non_negative(&self) -> Result<()> {
        match self.values().iter().position(|&v| !(v >= 0.0)) {
            Some(index) => Err(Error::NegativeValue {
                index,
                value: self.values()[index],
            }),
            None => Ok(()),
        }
    }

    fn scale(&mut self, c: f64) {
        self.values_mut().iter_mut().for_each(|v| *v *= c);
    }

    /// `Σ v_i w_i · measure_i`.
    fn inner(&self, other: &Self) -> f64
    where
        Self: Sized,
    {
        self.values()
            .iter()
            .zip(other.values())
            .enumerate()
            .map(|(i, (a, b))| a * b * self.cell_measure(i))
            .sum()
    }
}

/// `(Σ |v|^p · measure)^{1/p}`.
pub fn lp_norm<F: CellFunction + ?Sized>(f: &F, p: f64) -> f64 {
    assert!(p >= 1.0, "lp_norm needs p >= 1");
    let s: f64 = f
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| v.abs().powf(p) * f.cell_measure(i))
        .sum();
    s.powf(1.0 / p)
}

/// Entrywise `v ↦ v^exponent`; negative entries are rejected unless the
/// exponent is an integer.
pub fn pointwise_power<F: CellFunction + Clone>(f: &F, exponent: f64) -> Result<F> {
    if !(exponent > 0.0) {
        return Err(Error::InvalidParameter {
            name: "exponent",
            reason: format!("{exponent} must be positive"),
        });
    }
    let integer = exponent.fract() == 0.0;
    if !integer {
        f.check_non_negative()?;
    }
    let mut out = f.clone();
    if exponent == 1.0 {
        return Ok(out);
    }
    for v in out.values_mut() {
        *v = if integer { v.powi(exponent as i32) } else { v.powf(exponent) };
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadialFunction {
    pub grid: Arc<RadialGrid>,
    pub values: Vec<f64>,
}

impl RadialFunction {
    pub fn new(grid: Arc<RadialGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} cells",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Grid(format!("non-finite value at cell {i}")));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Arc<RadialGrid>) -> Self {
        let n = grid.len();
        Self { grid, values: vec![0.0; n] }
    }

    /// Cellwise non-increasing within `slack`.
    pub fn is_non_increasing(&self, slack: f64) -> bool {
        self.values.windows(2).all(|w| w[1] <= w[0] + slack)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("radius,value\n");
        for (r, v) in self.grid.radii().iter().zip(&self.values) {
            let _ = writeln!(s, "{r:.16e},{v:.16e}");
        }
        s
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "dim": self.grid.dim(),
            "edges": self.grid.edges(),
            "radii": self.grid.radii(),
            "values": self.values,
        })
    }
}

impl CellFunction for RadialFunction {
    fn values(&self) -> &[f64] {
        &self.values
    }
    fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    fn cell_measure(&self, idx: usize) -> f64 {
        self.grid.measure()[idx]
    }
}

/// `g(y) = G(|y'|, |y''|)` stored row-major: index `i * perp.len() + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiRadialFunction {
    pub prime: Arc<RadialGrid>,
    pub perp: Arc<RadialGrid>,
    pub values: Vec<f64>,
}

impl BiRadialFunction {
    pub fn new(prime: Arc<RadialGrid>, perp: Arc<RadialGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != prime.len() * perp.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a {}x{} bi-radial grid",
                values.len(),
                prime.len(),
                perp.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Grid(format!("non-finite value at cell {i}")));
        }
        Ok(Self { prime, perp, values })
    }

    pub fn zeros(prime: Arc<RadialGrid>, perp: Arc<RadialGrid>) -> Self {
        let n = prime.len() * perp.len();
        Self { prime, perp, values: vec![0.0; n] }
    }

    pub fn from_fn(prime: Arc<RadialGrid>, perp: Arc<RadialGrid>, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(prime.len() * perp.len());
        for &s in prime.radii() {
            for &t in perp.radii() {
                values.push(f(s, t));
            }
        }
        Self { prime, perp, values }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.perp.len() + j]
    }

    /// Values along `|y'|` at fixed perpendicular cell `j`.
    pub fn slice(&self, j: usize) -> Vec<f64> {
        let np = self.perp.len();
        (0..self.prime.len()).map(|i| self.values[i * np + j]).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("radiusPrime,radiusPerp,value\n");
        for (i, a) in self.prime.radii().iter().enumerate() {
            for (j, b) in self.perp.radii().iter().enumerate() {
                let _ = writeln!(s, "{a:.16e},{b:.16e},{:.16e}", self.get(i, j));
            }
        }
        s
    }
}

impl CellFunction for BiRadialFunction {
    fn values(&self) -> &[f64] {
        &self.values
    }
    fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    fn cell_measure(&self, idx: usize) -> f64 {
        let np = self.perp.len();
        self.prime.measure()[idx / np] * self.perp.measure()[idx % np]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineFunction {
    pub grid: LineGrid,
    pub values: Vec<f64>,
}

impl LineFunction {
    pub fn new(grid: LineGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.m {
            return Err(Error::GridMismatch(format!("{} values for {} line cells", values.len(), grid.m)));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Grid(format!("non-finite value at cell {i}")));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: LineGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..grid.m).map(|i| f(grid.center(i))).collect();
        Self { grid, values }
    }
}

impl CellFunction for LineFunction {
    fn values(&self) -> &[f64] {
        &self.values
    }
    fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    fn cell_measure(&self, _idx: usize) -> f64 {
        self.grid.h
    }
}

/// A family of line functions in `y'`, one per perpendicular cell:
/// index `i * perp.len() + j` with `i` the line cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLineFunction {
    pub line: LineGrid,
    pub perp: Arc<RadialGrid>,
    pub values: Vec<f64>,
}

impl BiLineFunction {
    pub fn new(line: LineGrid, perp: Arc<RadialGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != line.m * perp.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a {}x{} line family",
                values.len(),
                line.m,
                perp.len()
            )));
        }
        Ok(Self { line, perp, values })
    }

    pub fn slice(&self, j: usize) -> Vec<f64> {
        let np = self.perp.len();
        (0..self.line.m).map(|i| self.values[i * np + j]).collect()
    }
}

impl CellFunction for BiLineFunction {
    fn values(&self) -> &[f64] {
        &self.values
    }
    fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    fn cell_measure(&self, idx: usize) -> f64 {
        self.line.h * self.perp.measure()[idx % self.perp.len()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn log_grid_line_measure() {
        let g = RadialGrid::log(1, 1e-3, 10.0, 64, true).unwrap();
        assert_eq!(g.len(), 65);
        assert!((g.total_measure() - 20.0).abs() < 1e-12);
        for i in 0..g.len() {
            let (a, b) = g.cell(i);
            assert!(a < g.radii()[i] && g.radii()[i] < b);
        }
    }

    #[test]
    fn log_grid_disk_area() {
        let g = RadialGrid::log(2, 1e-3, 1.0, 32, true).unwrap();
        assert!((g.total_measure() - PI).abs() < 1e-12);
    }

    #[test]
    fn log_grid_rejects_bad_input() {
        assert!(RadialGrid::log(1, 1.0, 0.5, 16, true).is_err());
        assert!(RadialGrid::log(1, 1e-3, 1.0, 4, true).is_err());
        assert!(RadialGrid::log(1, 0.0, 1.0, 16, true).is_err());
    }

    #[test]
    fn indicator_norm() {
        let g = Arc::new(RadialGrid::log(1, 1e-3, 10.0, 128, true).unwrap());
        let chi = g.sample(|r| if r < 1.0 { 1.0 } else { 0.0 });
        let p = 4.0 / 3.0;
        assert!((chi.lp_norm(p) - 2f64.powf(0.75)).abs() < 1e-3);
        let zero = RadialFunction::zeros(g.clone());
        assert_eq!(zero.lp_norm(p), 0.0);
        let mut scaled = chi.clone();
        scaled.scale(-3.0);
        assert!((scaled.lp_norm(p) - 3.0 * chi.lp_norm(p)).abs() < 1e-14);
    }

    #[test]
    fn gaussian_norm_converges_under_refinement() {
        let p = 2.0;
        let exact = (PI / p).powf(0.5).powf(1.0 / p);
        let mut errs = Vec::new();
        for m in [64, 128, 256] {
            let g = Arc::new(RadialGrid::log(1, 1e-3, 1e2, m, true).unwrap());
            let f = g.sample(|r| (-r * r).exp());
            errs.push((f.lp_norm(p) - exact).abs());
        }
        assert!(errs[1] < errs[0] && errs[2] < errs[1], "{errs:?}");
    }

    #[test]
    fn biradial_product_norm_factors() {
        let a = Arc::new(RadialGrid::log(1, 1e-3, 10.0, 32, true).unwrap());
        let b = Arc::new(RadialGrid::log(2, 1e-3, 10.0, 24, true).unwrap());
        let fa = a.sample(|s| (-s).exp());
        let fb = b.sample(|t| 1.0 / (1.0 + t * t));
        let g = BiRadialFunction::from_fn(a.clone(), b.clone(), |s, t| (-s).exp() / (1.0 + t * t));
        for p in [1.0, 4.0 / 3.0, 3.0] {
            let lhs = g.lp_norm(p);
            let rhs = fa.lp_norm(p) * fb.lp_norm(p);
            assert!((lhs - rhs).abs() <= 1e-12 * rhs);
        }
    }

    #[test]
    fn pointwise_power_cases() {
        let g = Arc::new(RadialGrid::log(1, 1e-2, 1.0, 8, false).unwrap());
        let ones = g.sample(|_| 1.0);
        assert_eq!(pointwise_power(&ones, 3.0).unwrap(), ones);
        let f = g.sample(|r| r);
        assert_eq!(pointwise_power(&f, 1.0).unwrap(), f);
        let mut neg = f.clone();
        neg.values[3] = -1.0;
        assert!(matches!(pointwise_power(&neg, 0.5), Err(Error::NegativeValue { index: 3, .. })));
        assert!(pointwise_power(&neg, 2.0).is_ok());
    }

    #[test]
    fn scaled_grid_is_exact_for_powers_of_two() {
        let g = RadialGrid::log(1, 1e-3, 1e2, 16, true).unwrap();
        let s = g.scaled(2.0).scaled(0.5);
        assert_eq!(g, s);
    }

    #[test]
    fn point_grid() {
        let p = RadialGrid::point();
        assert_eq!(p.len(), 1);
        assert_eq!(p.total_measure(), 1.0);
    }
}
