//! Symmetric decreasing rearrangement, the star norm and the maximal function.
//!
//! Rearrangement works at cell granularity: cells are sorted by value (ties by
//! ascending index) and stacked outward from the origin on a new radial grid
//! whose shells carry exactly the sorted cell measures. The output is therefore
//! equimeasurable with the input without splitting any cell.

use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{BiLineFunction, BiRadialFunction, CellFunction, LineFunction, LineGrid, RadialFunction, RadialGrid};
use crate::params::{ball_volume, HlsParams};

/// Inputs admitting a symmetric decreasing rearrangement.
pub trait Rearrangeable {
    fn rearranged(&self) -> Result<RadialFunction>;
}

pub fn symm_decr_rearrange<F: Rearrangeable + ?Sized>(f: &F) -> Result<RadialFunction> {
    f.rearranged()
}

/// Descending order of `values`, ties by ascending index.
fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    idx
}

fn stacked_grid(dim: u32, measures: impl Iterator<Item = f64>) -> Result<RadialGrid> {
    let vol = ball_volume(dim);
    let d = f64::from(dim);
    let measures: Vec<f64> = measures.collect();
    let mut edges = vec![0.0];
    let mut cum = 0.0;
    for &m in &measures {
        cum += m;
        edges.push(if dim == 1 { 0.5 * cum } else { (cum / vol).powf(1.0 / d) });
    }
    RadialGrid::with_measures(dim, edges, measures)
}

fn equal_measures(m: &[f64]) -> bool {
    m.iter().all(|&v| (v - m[0]).abs() <= 1e-12 * m[0])
}

impl Rearrangeable for RadialFunction {
    fn rearranged(&self) -> Result<RadialFunction> {
        self.check_non_negative()?;
        if self.values.windows(2).all(|w| w[1] <= w[0]) && self.grid.edges()[0] == 0.0 {
            return Ok(self.clone());
        }
        let order = descending_order(&self.values);
        let values: Vec<f64> = order.iter().map(|&i| self.values[i]).collect();
        let grid = if self.grid.edges()[0] == 0.0 && equal_measures(self.grid.measure()) {
            self.grid.clone()
        } else {
            Arc::new(stacked_grid(self.grid.dim(), order.iter().map(|&i| self.grid.measure()[i]))?)
        };
        RadialFunction::new(grid, values)
    }
}

/// The radial grid onto which a line grid of width `h` rearranges: `m` shells
/// of width `h/2` starting at the origin.
pub fn rearranged_line_grid(grid: &LineGrid) -> Result<RadialGrid> {
    RadialGrid::uniform(1, 0.5 * grid.h * grid.m as f64, grid.m)
}

impl Rearrangeable for LineFunction {
    fn rearranged(&self) -> Result<RadialFunction> {
        self.check_non_negative()?;
        let order = descending_order(&self.values);
        let values = order.iter().map(|&i| self.values[i]).collect();
        RadialFunction::new(Arc::new(rearranged_line_grid(&self.grid)?), values)
    }
}

/// Inputs admitting a rearrangement in `y'` for every fixed `|y''|`.
pub trait SliceRearrangeable {
    fn slice_rearranged(&self) -> Result<BiRadialFunction>;
}

pub fn slice_rearrange<G: SliceRearrangeable + ?Sized>(g: &G) -> Result<BiRadialFunction> {
    g.slice_rearranged()
}

fn rearrange_slices(values: &[f64], np: usize) -> Vec<f64> {
    let ni = values.len() / np;
    let mut out = vec![0.0; values.len()];
    for j in 0..np {
        let slice: Vec<f64> = (0..ni).map(|i| values[i * np + j]).collect();
        for (pos, &i) in descending_order(&slice).iter().enumerate() {
            out[pos * np + j] = slice[i];
        }
    }
    out
}

impl SliceRearrangeable for BiRadialFunction {
    /// Slices that are already non-increasing are kept; otherwise the `y'`
    /// cells must share one measure so that all slices land on the same grid.
    fn slice_rearranged(&self) -> Result<BiRadialFunction> {
        self.check_non_negative()?;
        let np = self.perp.len();
        let sorted = (0..np).all(|j| self.slice(j).windows(2).all(|w| w[1] <= w[0]));
        if sorted {
            return Ok(self.clone());
        }
        if self.prime.edges()[0] != 0.0 || !equal_measures(self.prime.measure()) {
            return Err(Error::Precondition(
                "slice rearrangement of unsorted slices needs equal-measure y' cells starting at 0".into(),
            ));
        }
        BiRadialFunction::new(self.prime.clone(), self.perp.clone(), rearrange_slices(&self.values, np))
    }
}

impl SliceRearrangeable for BiLineFunction {
    fn slice_rearranged(&self) -> Result<BiRadialFunction> {
        self.check_non_negative()?;
        let prime = Arc::new(rearranged_line_grid(&self.line)?);
        BiRadialFunction::new(prime, self.perp.clone(), rearrange_slices(&self.values, self.perp.len()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BallArg {
    pub center: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StarNormResult {
    pub value: f64,
    pub argmax: BallArg,
}

/// `∫_{B_ρ(c)} f` for a radial step function, `c` on the first axis.
fn ball_integral(f: &RadialFunction, c: f64, rho: f64) -> f64 {
    let g = &f.grid;
    match g.dim() {
        1 => {
            let cum = odd_cumulative(f);
            cum(c + rho) - cum(c - rho)
        }
        2 => {
            let mut prev = 0.0;
            let mut sum = 0.0;
            for (i, &v) in f.values.iter().enumerate() {
                let cur = disk_intersection(g.edges()[i + 1], rho, c);
                sum += v * (cur - prev);
                prev = cur;
            }
            sum
        }
        d => unreachable!("ball integrals are only built for dim 1 and 2, got {d}"),
    }
}

/// `x ↦ ∫_0^x f(|u|) du` for a dim-1 radial step function.
fn odd_cumulative(f: &RadialFunction) -> impl Fn(f64) -> f64 + '_ {
    let edges = f.grid.edges();
    let mut cum = Vec::with_capacity(edges.len());
    let mut acc = 0.0;
    cum.push(0.0);
    for (i, v) in f.values.iter().enumerate() {
        acc += v * (edges[i + 1] - edges[i]);
        cum.push(acc);
    }
    move |x: f64| {
        let a = x.abs();
        let k = edges.partition_point(|&e| e <= a);
        let v = if k == 0 {
            0.0
        } else if k >= edges.len() {
            cum[edges.len() - 1]
        } else {
            cum[k - 1] + f.values[k - 1] * (a - edges[k - 1])
        };
        v.copysign(x)
    }
}

/// Area of `B_R(0) ∩ B_ρ(d e_1)` in the plane.
pub(crate) fn disk_intersection(r_big: f64, rho: f64, d: f64) -> f64 {
    if d >= r_big + rho {
        return 0.0;
    }
    if d <= (r_big - rho).abs() {
        let m = r_big.min(rho);
        return PI * m * m;
    }
    let c1 = ((d * d + r_big * r_big - rho * rho) / (2.0 * d * r_big)).clamp(-1.0, 1.0);
    let c2 = ((d * d + rho * rho - r_big * r_big) / (2.0 * d * rho)).clamp(-1.0, 1.0);
    let k = ((-d + r_big + rho) * (d + r_big - rho) * (d - r_big + rho) * (d + r_big + rho)).max(0.0);
    r_big * r_big * c1.acos() + rho * rho * c2.acos() - 0.5 * k.sqrt()
}

/// `sup ρ^{-(n-k)/p'} ∫_{B_ρ(x)} f` over centers `{0} ∪ radii` and radii
/// from the grid edges.
pub fn star_norm(f: &RadialFunction, params: &HlsParams) -> Result<StarNormResult> {
    f.check_non_negative()?;
    let g = &f.grid;
    if !matches!(g.dim(), 1 | 2) {
        return Err(Error::Precondition(format!("star norm supports dim 1 or 2, got {}", g.dim())));
    }
    let p_prime = params.p / (params.p - 1.0);
    let e = f64::from(g.dim()) / p_prime;
    let centers: Vec<f64> = std::iter::once(0.0).chain(g.radii().iter().copied()).collect();
    let radii: Vec<f64> = g.edges().iter().copied().filter(|&r| r > 0.0).collect();
    let best = centers
        .par_iter()
        .map(|&c| {
            let mut best = (0.0, BallArg { center: c, radius: radii[0] });
            for &rho in &radii {
                let v = rho.powf(-e) * ball_integral(f, c, rho);
                if v > best.0 {
                    best = (v, BallArg { center: c, radius: rho });
                }
            }
            best
        })
        .reduce_with(|a, b| if b.0 > a.0 { b } else { a })
        .expect("at least one center");
    Ok(StarNormResult {
        value: best.0,
        argmax: best.1,
    })
}

/// Inputs admitting the one-dimensional maximal function.
pub trait MaximalInput: Sized {
    fn maximal(&self) -> Result<Self>;
}

pub fn maximal_function<F: MaximalInput>(f: &F) -> Result<F> {
    f.maximal()
}

fn maximal_values(centers: &[f64], edges: &[f64], cum: impl Fn(f64) -> f64 + Sync) -> Vec<f64> {
    centers
        .par_iter()
        .map(|&z| {
            edges
                .iter()
                .map(|&e| (e - z).abs())
                .filter(|&r| r > 0.0)
                .map(|r| (cum(z + r) - cum(z - r)) / (2.0 * r))
                .fold(0.0, f64::max)
        })
        .collect()
}

impl MaximalInput for RadialFunction {
    fn maximal(&self) -> Result<Self> {
        self.check_non_negative()?;
        if self.grid.dim() != 1 {
            return Err(Error::Precondition("the maximal function is implemented in dimension 1 only".into()));
        }
        let edges: Vec<f64> = self.grid.edges().iter().flat_map(|&e| [e, -e]).collect();
        let values = maximal_values(self.grid.radii(), &edges, odd_cumulative(self));
        RadialFunction::new(self.grid.clone(), values)
    }
}

impl MaximalInput for LineFunction {
    fn maximal(&self) -> Result<Self> {
        self.check_non_negative()?;
        let g = self.grid;
        let mut cum = vec![0.0];
        for v in &self.values {
            cum.push(cum.last().unwrap() + v * g.h);
        }
        let total = *cum.last().unwrap();
        let vals = &self.values;
        let cumf = |x: f64| {
            let u = (x - g.x0) / g.h;
            if u <= 0.0 {
                0.0
            } else if u >= g.m as f64 {
                total
            } else {
                let k = u.floor() as usize;
                cum[k] + vals[k] * (u - k as f64) * g.h
            }
        };
        let edges: Vec<f64> = (0..=g.m).map(|i| g.x0 + g.h * i as f64).collect();
        let centers: Vec<f64> = (0..g.m).map(|i| g.center(i)).collect();
        LineFunction::new(g, maximal_values(&centers, &edges, cumf))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indicator_pair_rearranges_to_centered_interval() {
        let grid = LineGrid::new(-6.0, 1.0, 12).unwrap();
        let f = LineFunction::from_fn(grid, |x| if (2.0..3.0).contains(&x) || (-5.0..-4.0).contains(&x) { 1.0 } else { 0.0 });
        let s = symm_decr_rearrange(&f).unwrap();
        let want = s.grid.sample(|r| if r < 1.0 { 1.0 } else { 0.0 });
        assert_eq!(s.values, want.values);
        assert_eq!(s.grid.edges()[2], 1.0);
    }

    #[test]
    fn sorted_radial_input_is_unchanged() {
        let g = Arc::new(RadialGrid::log(2, 1e-2, 10.0, 16, true).unwrap());
        let f = g.sample(|r| (-r).exp());
        let s = symm_decr_rearrange(&f).unwrap();
        assert!(Arc::ptr_eq(&s.grid, &f.grid));
        assert_eq!(s.values, f.values);
    }

    #[test]
    fn negative_input_rejected() {
        let g = Arc::new(RadialGrid::uniform(1, 1.0, 4).unwrap());
        let f = RadialFunction::new(g, vec![1.0, -1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(symm_decr_rearrange(&f), Err(Error::NegativeValue { index: 1, .. })));
        assert!(maximal_function(&f).is_err());
    }

    #[test]
    fn stacked_grid_preserves_measures() {
        let g = Arc::new(RadialGrid::log(2, 1e-2, 10.0, 10, true).unwrap());
        let vals: Vec<f64> = (0..g.len()).map(|i| ((i * 7) % 5) as f64).collect();
        let f = RadialFunction::new(g.clone(), vals).unwrap();
        let s = symm_decr_rearrange(&f).unwrap();
        let order = descending_order(&f.values);
        for (pos, &i) in order.iter().enumerate() {
            assert!((s.grid.measure()[pos] - g.measure()[i]).abs() < 1e-12 * g.measure()[i]);
        }
    }

    #[test]
    fn star_norm_of_unit_indicator() {
        let g = Arc::new(RadialGrid::uniform(1, 4.0, 40).unwrap());
        let f = g.sample(|r| if r < 1.0 { 1.0 } else { 0.0 });
        let p = HlsParams::new(1, 0, 0.5, 0.0, 4.0 / 3.0, 4.0 / 3.0);
        let s = star_norm(&f, &p).unwrap();
        assert!((s.value - 2.0).abs() < 1e-12);
        assert_eq!(s.argmax.center, 0.0);
        assert!((s.argmax.radius - 1.0).abs() < 1e-12);
        assert_eq!(star_norm(&RadialFunction::zeros(g), &p).unwrap().value, 0.0);
    }

    #[test]
    fn disk_intersection_limits() {
        assert_eq!(disk_intersection(1.0, 1.0, 2.0), 0.0);
        assert!((disk_intersection(2.0, 1.0, 0.5) - PI).abs() < 1e-15);
        // two unit disks at distance 1: 2π/3 - √3/2
        let want = 2.0 * PI / 3.0 - 3f64.sqrt() / 2.0;
        assert!((disk_intersection(1.0, 1.0, 1.0) - want).abs() < 1e-14);
    }

    #[test]
    fn maximal_function_of_indicator() {
        let grid = LineGrid::new(-8.0, 0.5, 32).unwrap();
        let f = LineFunction::from_fn(grid, |x| if x.abs() < 1.0 { 1.0 } else { 0.0 });
        let mf = maximal_function(&f).unwrap();
        let at = |x: f64| mf.values[((x - grid.x0) / grid.h).floor() as usize];
        assert!((at(0.1) - 1.0).abs() < 1e-15);
        // center 3.25 lies between 3 and 3.5: closed form 1/(1+x)
        assert!((at(3.1) - 1.0 / 4.25).abs() < 1e-12);
        assert!(f.values.iter().zip(&mf.values).all(|(a, b)| a <= b));

        let rg = Arc::new(RadialGrid::uniform(1, 8.0, 16).unwrap());
        let rf = rg.sample(|r| if r < 1.0 { 1.0 } else { 0.0 });
        let mr = maximal_function(&rf).unwrap();
        assert!((mr.values[0] - 1.0).abs() < 1e-15);
        // cell [3, 3.5], center √10.5
        let z = 10.5f64.sqrt();
        assert!((mr.values[6] - 1.0 / (1.0 + z)).abs() < 0.02);
    }
}
