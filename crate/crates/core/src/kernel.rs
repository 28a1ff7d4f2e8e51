//! Discretization of the weighted kernel `|x|^{-α} |x-y|^{-λ} |y''|^{-β}`.
//!
//! The extension operator `E f(y) = ∫ f(x) |x|^{-α} |x-y|^{-λ} |y''|^{-β} dx`
//! is assembled as a dense matrix `K` whose entry `K[(i,j), m]` is the exact
//! cell average over the output cell `(i, j)` of `E[χ_m]`, `χ_m` being the
//! indicator of the input shell `m`. With this convention
//!
//! * `(E f)_{ij} = Σ_m K[(i,j),m] f_m`,
//! * `(R g)_m = ν_m^{-1} Σ_{ij} μ_{ij} K[(i,j),m] g_{ij}`,
//!
//! so `⟨E f, g⟩ = ⟨f, R g⟩` holds as an algebraic identity.
//!
//! Quadrature: for a one-dimensional base (`n - k = 1`) the `(y', x)` double
//! integral over a pair of cells uses closed-form antiderivatives of
//! `(u² + t²)^{-λ/2}` when the cells are close, and tensor Gauss rules sized
//! by distance/width otherwise. The `t^{-β}` weight is absorbed exactly by the
//! substitution `w = t^{k-β}`; `|x|^{-α}` enters through its exact shell
//! average. Every rule is built from cell edges and ratios only, so rescaling
//! all grids by `s` rescales every entry by `s^{n-k-λ-β-α}`.

use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{BiLineFunction, BiRadialFunction, CellFunction, LineFunction, LineGrid, RadialFunction, RadialGrid};
use crate::params::{derive_exponents, sphere_area, validate, DerivedExponents, HlsParams};
use crate::quad::{gl2, gl20, gl4, gl6, gl8, integrate};

/// A validated parameter set together with its derived exponents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelSpec {
    pub params: HlsParams,
    pub derived: DerivedExponents,
}

impl KernelSpec {
    pub fn new(params: HlsParams) -> Result<Self> {
        validate(&params).into_result()?;
        Ok(Self {
            params,
            derived: derive_exponents(&params)?,
        })
    }

    pub fn shape(&self) -> KernelShape {
        KernelShape {
            base_dim: self.params.base_dim(),
            perp_dim: self.params.k,
            lambda: self.params.lambda,
            beta: self.params.beta,
            alpha: self.params.alpha,
        }
    }
}

/// Raw kernel exponents without any admissibility requirement. Used directly
/// for auxiliary kernels such as the unweighted `|z-x|^{-γ}` potential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct KernelShape {
    pub base_dim: u32,
    pub perp_dim: u32,
    pub lambda: f64,
    pub beta: f64,
    pub alpha: f64,
}

/// Angular average `∫_{S^{dim-1}} (a² - 2as·cosθ + s² + t²)^{-λ/2} dσ`,
/// i.e. `|x - y|^{-λ}` integrated over the sphere `|x| = a` for a point at
/// distance `s` (in-plane) and `t` (perpendicular).
pub fn angular_kernel(a: f64, s: f64, t: f64, dim: u32, lambda: f64) -> Result<f64> {
    let d2 = (a - s) * (a - s) + t * t;
    if d2 == 0.0 {
        return Err(Error::SingularKernel { a });
    }
    match dim {
        1 => {
            let e = -0.5 * lambda;
            Ok(d2.powf(e) + ((a + s) * (a + s) + t * t).powf(e))
        }
        2 => Ok(angular_2d(a, s, d2, lambda)),
        _ => Err(Error::Precondition(format!("angular kernel supports dim 1 or 2, got {dim}"))),
    }
}

fn angular_2d(a: f64, s: f64, d2: f64, lambda: f64) -> f64 {
    let e = -0.5 * lambda;
    let prod = a * s;
    if prod == 0.0 {
        return 2.0 * PI * d2.powf(e);
    }
    let f = |th: f64| {
        let sh = (0.5 * th).sin();
        (d2 + 4.0 * prod * sh * sh).powf(e)
    };
    let width = (d2 / prod).sqrt();
    if width >= 0.5 {
        return 2.0 * integrate(gl20(), 0.0, PI, f);
    }
    let mut sum = integrate(gl8(), 0.0, width, f);
    let mut lo = width;
    while lo < PI {
        let hi = (2.0 * lo).min(PI);
        sum += integrate(gl8(), lo, hi, f);
        lo = hi;
    }
    2.0 * sum
}

/// Antiderivatives of the one-dimensional kernel `k(u) = (u² + t²)^{-λ/2}`:
/// `F(u,t) = ∫_0^u k` (odd) and `G(u,t) = ∫_0^u F` (even).
#[derive(Debug, Clone)]
struct LineKernel {
    lambda: f64,
    log_case: bool,
    /// `H(X) - tail(X)` where `H(X) = ∫_0^X (1+v²)^{-λ/2} dv`.
    tail_const: f64,
}

const SERIES_SWITCH: f64 = 2.0;

impl LineKernel {
    fn new(lambda: f64) -> Self {
        let log_case = (lambda - 1.0).abs() < 1e-12;
        let mut lk = Self {
            lambda,
            log_case,
            tail_const: 0.0,
        };
        let h2 = integrate(gl20(), 0.0, SERIES_SWITCH, |v| (1.0 + v * v).powf(-0.5 * lambda));
        lk.tail_const = h2 - lk.tail_part(SERIES_SWITCH, 1.0);
        lk
    }

    /// Divergent part of `F(u,t)` for `u > 2t` (without the `C t^{1-λ}` term).
    fn tail_part(&self, u: f64, t: f64) -> f64 {
        let l = self.lambda;
        let z2 = (t / u) * (t / u);
        let mut b = 1.0;
        let mut zp = 1.0;
        let mut series = 0.0;
        for j in 1..200 {
            let jf = j as f64;
            b *= (-0.5 * l - (jf - 1.0)) / jf;
            zp *= z2;
            let term = b * zp / (1.0 - l - 2.0 * jf);
            series += term;
            if term.abs() < 1e-17 * (series.abs() + 1.0) {
                break;
            }
        }
        if self.log_case {
            (u / t).ln() + series
        } else {
            u.powf(1.0 - l) * (1.0 / (1.0 - l) + series)
        }
    }

    fn f(&self, u: f64, t: f64) -> f64 {
        let au = u.abs();
        let l = self.lambda;
        let v = if au == 0.0 {
            0.0
        } else if t == 0.0 {
            au.powf(1.0 - l) / (1.0 - l)
        } else if au > SERIES_SWITCH * t {
            let tl = if self.log_case { 1.0 } else { t.powf(1.0 - l) };
            self.tail_const * tl + self.tail_part(au, t)
        } else {
            integrate(gl20(), 0.0, au, |w| (w * w + t * t).powf(-0.5 * l))
        };
        v.copysign(u)
    }

    /// `∫_0^{|u|} w k(w) dw`, evaluated without cancellation for `|u| ≪ t`.
    fn moment(&self, u: f64, t: f64) -> f64 {
        let l = self.lambda;
        if t == 0.0 {
            return u.abs().powf(2.0 - l) / (2.0 - l);
        }
        let ratio = (u / t) * (u / t);
        if (l - 2.0).abs() < 1e-12 {
            0.5 * ratio.ln_1p()
        } else {
            t.powf(2.0 - l) * ((1.0 - 0.5 * l) * ratio.ln_1p()).exp_m1() / (2.0 - l)
        }
    }

    fn g(&self, u: f64, t: f64) -> f64 {
        let au = u.abs();
        if au == 0.0 {
            return 0.0;
        }
        au * self.f(au, t) - self.moment(au, t)
    }

    #[inline]
    fn k(&self, u: f64, t: f64) -> f64 {
        (u * u + t * t).powf(-0.5 * self.lambda)
    }

    /// `∫_{s0}^{s1} ∫_{a0}^{a1} k(s - a) da ds`; returns whether the exact
    /// (near-field) formula was used.
    fn pair(&self, s0: f64, s1: f64, a0: f64, a1: f64, t: f64) -> (f64, bool) {
        let gap = (a0 - s1).max(s0 - a1).max(0.0);
        let h = (s1 - s0).max(a1 - a0);
        let dist = (gap * gap + t * t).sqrt();
        let rule = if dist >= 80.0 * h {
            gl2()
        } else if dist >= 6.0 * h {
            gl4()
        } else if dist >= 2.0 * h {
            gl6()
        } else {
            let v = self.g(s1 - a0, t) - self.g(s0 - a0, t) - self.g(s1 - a1, t) + self.g(s0 - a1, t);
            return (v, true);
        };
        let (sc, sh) = (0.5 * (s0 + s1), 0.5 * (s1 - s0));
        let (ac, ah) = (0.5 * (a0 + a1), 0.5 * (a1 - a0));
        let mut sum = 0.0;
        for &(xs, ws) in rule {
            let s = sc + sh * xs;
            let mut inner = 0.0;
            for &(xa, wa) in rule {
                inner += wa * self.k(s - (ac + ah * xa), t);
            }
            sum += ws * inner;
        }
        (sum * sh * ah, false)
    }
}

/// Quadrature nodes in `t` over a perpendicular cell with the weight
/// `|S^{k-1}| t^{k-1-β}` absorbed exactly via `w = t^{k-β}`.
fn perp_nodes(perp: &RadialGrid, j: usize, beta: f64, scale: f64, out: &mut Vec<(f64, f64)>) {
    out.clear();
    if perp.dim() == 0 {
        out.push((0.0, 1.0));
        return;
    }
    let (t0, t1) = perp.cell(j);
    let c = f64::from(perp.dim()) - beta;
    let area = sphere_area(perp.dim());
    let (w0, w1) = (t0.powf(c), t1.powf(c));
    let width = t1 - t0;
    let (rule, panels): (&[(f64, f64)], usize) = if t0 == 0.0 {
        if scale >= 3.0 * t1 {
            (gl4(), 1)
        } else {
            (gl8(), 2)
        }
    } else {
        let ratio = width / scale.hypot(t0);
        if ratio <= 0.15 {
            (gl2(), 1)
        } else if ratio <= 0.5 {
            (gl4(), 1)
        } else {
            (gl4(), 2)
        }
    };
    let pw = (w1 - w0) / panels as f64;
    for p in 0..panels {
        let lo = w0 + pw * p as f64;
        let (mid, half) = (lo + 0.5 * pw, 0.5 * pw);
        for &(x, wt) in rule {
            let w = mid + half * x;
            out.push((w.powf(1.0 / c), area * wt * half / c));
        }
    }
}

/// Exact average of `|x|^{-α}` over a shell (or interval) of the base space.
fn alpha_average(dim: u32, a0: f64, a1: f64, alpha: f64) -> f64 {
    if alpha == 0.0 {
        return 1.0;
    }
    let e = f64::from(dim) - 1.0;
    crate::grid::power_integral(a0, a1, e - alpha) / crate::grid::power_integral(a0, a1, e)
}

#[derive(Debug, Clone, Default, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct AssemblyDiagnostics {
    /// Entries per output row assembled with the near-field (singular) treatment.
    pub near_entries_per_row: Vec<u32>,
    pub total_near_entries: usize,
    /// Smallest cell-pair distance relative to cell width among near entries.
    pub min_relative_distance: f64,
}

impl AssemblyDiagnostics {
    fn from_rows(rows: Vec<(u32, f64)>) -> Self {
        let total = rows.iter().map(|r| r.0 as usize).sum();
        let min = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
        Self {
            near_entries_per_row: rows.into_iter().map(|r| r.0).collect(),
            total_near_entries: total,
            min_relative_distance: min,
        }
    }

    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "rows": self.near_entries_per_row.len(),
            "totalNearEntries": self.total_near_entries,
            "minRelativeDistance": if self.min_relative_distance.is_finite() { self.min_relative_distance } else { -1.0 },
        })
    }
}

/// Dense realization of `E` (and, through the weighted transpose, of `R`).
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    matrix: Vec<f64>,
    input: Arc<RadialGrid>,
    prime: Arc<RadialGrid>,
    perp: Arc<RadialGrid>,
    row_measure: Vec<f64>,
    shape: KernelShape,
    spec: Option<KernelSpec>,
    diagnostics: AssemblyDiagnostics,
}

fn check_shape_grids(shape: &KernelShape, input: &RadialGrid, prime: &RadialGrid, perp: &RadialGrid) -> Result<()> {
    if !matches!(shape.base_dim, 1 | 2) {
        return Err(Error::Precondition(format!("n - k must be 1 or 2, got {}", shape.base_dim)));
    }
    if shape.perp_dim > 2 {
        return Err(Error::Precondition(format!("k must be 0, 1 or 2, got {}", shape.perp_dim)));
    }
    if input.dim() != shape.base_dim || prime.dim() != shape.base_dim {
        return Err(Error::GridMismatch(format!(
            "input/output y' grids must have dimension {}",
            shape.base_dim
        )));
    }
    if perp.dim() != shape.perp_dim {
        return Err(Error::GridMismatch(format!("perpendicular grid must have dimension {}", shape.perp_dim)));
    }
    if shape.perp_dim > 0 && perp.edges()[0] == 0.0 && shape.beta >= f64::from(shape.perp_dim) {
        return Err(Error::Precondition(format!(
            "beta = {} >= k makes the weight non-integrable on the [0, r_min] cell",
            shape.beta
        )));
    }
    if shape.perp_dim == 0 && shape.lambda >= f64::from(shape.base_dim) {
        return Err(Error::Precondition(format!(
            "lambda = {} is not locally integrable in dimension {}",
            shape.lambda, shape.base_dim
        )));
    }
    if input.edges()[0] == 0.0 && shape.alpha >= f64::from(shape.base_dim) {
        return Err(Error::Precondition("alpha >= n - k is not integrable at the origin".into()));
    }
    Ok(())
}

/// Assemble `E` for a validated spec.
pub fn build_extension(
    spec: &KernelSpec,
    input: Arc<RadialGrid>,
    prime: Arc<RadialGrid>,
    perp: Arc<RadialGrid>,
) -> Result<DiscreteOperator> {
    let mut op = build_with_shape(spec.shape(), input, prime, perp)?;
    op.spec = Some(*spec);
    Ok(op)
}

/// Assemble the operator for raw kernel exponents.
pub fn build_with_shape(
    shape: KernelShape,
    input: Arc<RadialGrid>,
    prime: Arc<RadialGrid>,
    perp: Arc<RadialGrid>,
) -> Result<DiscreteOperator> {
    check_shape_grids(&shape, &input, &prime, &perp)?;
    let cols = input.len();
    let np = perp.len();
    let rows = prime.len() * np;
    let mut matrix = vec![0.0; rows * cols];
    let lk = LineKernel::new(shape.lambda);
    let alpha_avg: Vec<f64> = (0..cols)
        .map(|m| {
            let (a0, a1) = input.cell(m);
            alpha_average(shape.base_dim, a0, a1, shape.alpha)
        })
        .collect();

    let diag: Vec<(u32, f64)> = matrix
        .par_chunks_mut(cols)
        .enumerate()
        .map_init(Vec::new, |nodes, (row, out)| {
            let (i, j) = (row / np, row % np);
            let mut near = 0u32;
            let mut min_rel = f64::INFINITY;
            let (s0, s1) = prime.cell(i);
            let row_measure = prime.measure()[i] * perp.measure()[j];
            for m in 0..cols {
                let (a0, a1) = input.cell(m);
                let gap = (a0 - s1).max(s0 - a1).max(0.0);
                let width = (s1 - s0).max(a1 - a0);
                perp_nodes(&perp, j, shape.beta, gap.max(1e-300), nodes);
                let (integral, was_near) = match shape.base_dim {
                    1 => cell_integral_1d(&lk, s0, s1, a0, a1, nodes),
                    _ => cell_integral_2d(shape.lambda, s0, s1, a0, a1, gap, width, nodes),
                };
                if was_near {
                    near += 1;
                    min_rel = min_rel.min(gap / width);
                }
                out[m] = integral * alpha_avg[m] / row_measure;
            }
            (near, min_rel)
        })
        .collect();

    let row_measure = (0..rows)
        .map(|row| prime.measure()[row / np] * perp.measure()[row % np])
        .collect();
    Ok(DiscreteOperator {
        matrix,
        input,
        prime,
        perp,
        row_measure,
        shape,
        spec: None,
        diagnostics: AssemblyDiagnostics::from_rows(diag),
    })
}

/// `∫_{cell (i,j)} E[χ_m] dy` for a one-dimensional base (radial: `χ_m` is the
/// symmetric pair of intervals `±[a0, a1]`, output `|y'| ∈ [s0, s1]`).
fn cell_integral_1d(lk: &LineKernel, s0: f64, s1: f64, a0: f64, a1: f64, nodes: &[(f64, f64)]) -> (f64, bool) {
    let mut sum = 0.0;
    let mut near = false;
    for &(t, w) in nodes {
        let (direct, n1) = lk.pair(s0, s1, a0, a1, t);
        let (mirror, n2) = lk.pair(s0, s1, -a1, -a0, t);
        near |= n1 || n2;
        sum += w * (direct + mirror);
    }
    // both mirror halves of the output shell contribute equally
    (2.0 * sum, near)
}

/// Same for a two-dimensional base, by nested quadrature of the angular kernel.
#[allow(clippy::too_many_arguments)]
fn cell_integral_2d(
    lambda: f64,
    s0: f64,
    s1: f64,
    a0: f64,
    a1: f64,
    gap: f64,
    width: f64,
    nodes: &[(f64, f64)],
) -> (f64, bool) {
    let near_cells = gap < 2.0 * width;
    let mut sum = 0.0;
    let mut near = false;
    // outer s via σ = s², 2π s ds = π dσ
    let (sg0, sg1) = (s0 * s0, s1 * s1);
    let s_panels = if near_cells { 2 } else { 1 };
    let pw = (sg1 - sg0) / s_panels as f64;
    for &(t, wt) in nodes {
        let dist_t = (gap * gap + t * t).sqrt();
        let is_near = dist_t < 2.0 * width;
        near |= is_near;
        let mut st = 0.0;
        for p in 0..s_panels {
            let lo = sg0 + pw * p as f64;
            st += integrate(gl4(), lo, lo + pw, |sig| {
                let s = sig.sqrt();
                shell_integral_2d(lambda, s, t, a0, a1, is_near)
            });
        }
        sum += wt * PI * st;
    }
    (sum, near)
}

/// `∫_{a0}^{a1} a · A(a, s, t) da` with grading toward `a = s` when near.
fn shell_integral_2d(lambda: f64, s: f64, t: f64, a0: f64, a1: f64, near: bool) -> f64 {
    let f = |a: f64| {
        let d2 = (a - s) * (a - s) + t * t;
        a * angular_2d(a, s, d2, lambda)
    };
    if !near {
        return integrate(gl6(), a0, a1, f);
    }
    let floor = (a1 - a0) * 1e-6;
    let delta = t.max(floor);
    if s > a0 && s < a1 {
        graded(&f, s, a0, delta) + graded(&f, s, a1, delta)
    } else {
        let (start, end) = if s <= a0 { (a0, a1) } else { (a1, a0) };
        let delta = ((start - s).abs().hypot(t)).max(floor);
        graded(&f, start, end, delta)
    }
}

/// Integral between `from` and `to` with geometric panels growing away from `from`.
fn graded(f: &impl Fn(f64) -> f64, from: f64, to: f64, delta: f64) -> f64 {
    let len = (to - from).abs();
    let dir = (to - from).signum();
    if len <= 4.0 * delta {
        return integrate(gl8(), from.min(to), from.max(to), f);
    }
    let mut sum = 0.0;
    let mut lo = 0.0;
    let mut hi = delta;
    loop {
        let hi_c = hi.min(len);
        let (x0, x1) = (from + dir * lo, from + dir * hi_c);
        sum += integrate(gl6(), x0.min(x1), x0.max(x1), f);
        if hi_c >= len {
            break;
        }
        lo = hi_c;
        hi = 2.0 * hi_c;
    }
    sum
}

/// `∫_{B_1} ∫_{B_1} (|x - y'|² + t²)^{-λ/2} dx dy'` over pairs of unit balls of
/// the base space.
pub(crate) fn unit_ball_pair(base_dim: u32, lambda: f64, t: f64) -> f64 {
    if base_dim == 1 {
        return LineKernel::new(lambda).pair(-1.0, 1.0, -1.0, 1.0, t).0;
    }
    let mut sum = 0.0;
    for p in 0..4 {
        let (lo, hi) = (0.25 * p as f64, 0.25 * (p + 1) as f64);
        sum += integrate(gl8(), lo, hi, |s| s * shell_integral_2d(lambda, s, t, 0.0, 1.0, true));
    }
    2.0 * PI * sum
}

impl DiscreteOperator {
    pub fn rows(&self) -> usize {
        self.row_measure.len()
    }
    pub fn cols(&self) -> usize {
        self.input.len()
    }
    pub fn input_grid(&self) -> &Arc<RadialGrid> {
        &self.input
    }
    pub fn prime_grid(&self) -> &Arc<RadialGrid> {
        &self.prime
    }
    pub fn perp_grid(&self) -> &Arc<RadialGrid> {
        &self.perp
    }
    pub fn shape(&self) -> &KernelShape {
        &self.shape
    }
    pub fn spec(&self) -> Option<&KernelSpec> {
        self.spec.as_ref()
    }
    pub fn diagnostics(&self) -> &AssemblyDiagnostics {
        &self.diagnostics
    }
    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }
    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.matrix[row * self.cols() + col]
    }
    pub fn row_measure(&self) -> &[f64] {
        &self.row_measure
    }

    fn check_input(&self, f: &RadialFunction) -> Result<()> {
        if !f.grid.same_as(&self.input) {
            return Err(Error::GridMismatch("function grid differs from the operator's input grid".into()));
        }
        Ok(())
    }

    fn check_output(&self, g: &BiRadialFunction) -> Result<()> {
        if !g.prime.same_as(&self.prime) || !g.perp.same_as(&self.perp) {
            return Err(Error::GridMismatch("function grids differ from the operator's output grids".into()));
        }
        Ok(())
    }

    /// Cell averages of `E f`.
    pub fn extend(&self, f: &RadialFunction) -> Result<BiRadialFunction> {
        self.check_input(f)?;
        let cols = self.cols();
        let values = self
            .matrix
            .par_chunks(cols)
            .map(|row| row.iter().zip(&f.values).map(|(k, v)| k * v).sum())
            .collect();
        Ok(BiRadialFunction {
            prime: self.prime.clone(),
            perp: self.perp.clone(),
            values,
        })
    }

    /// Cell averages of `R g`, the measure-weighted transpose of `E`.
    pub fn restrict(&self, g: &BiRadialFunction) -> Result<RadialFunction> {
        self.check_output(g)?;
        let cols = self.cols();
        let mut acc = vec![0.0; cols];
        for ((row, &mu), &gv) in self.matrix.chunks(cols).zip(&self.row_measure).zip(&g.values) {
            let w = mu * gv;
            if w == 0.0 {
                continue;
            }
            for (a, k) in acc.iter_mut().zip(row) {
                *a += k * w;
            }
        }
        for (a, nu) in acc.iter_mut().zip(self.input.measure()) {
            *a /= nu;
        }
        Ok(RadialFunction {
            grid: self.input.clone(),
            values: acc,
        })
    }

    /// `⟨E f, g⟩`.
    pub fn bilinear(&self, f: &RadialFunction, g: &BiRadialFunction) -> Result<f64> {
        self.check_output(g)?;
        Ok(self.extend(f)?.inner(g))
    }
}

pub fn apply_extension(op: &DiscreteOperator, f: &RadialFunction) -> Result<BiRadialFunction> {
    op.extend(f)
}

pub fn apply_restriction(op: &DiscreteOperator, g: &BiRadialFunction) -> Result<RadialFunction> {
    op.restrict(g)
}

/// `E` acting on non-radial functions of one base variable (`n - k = 1`),
/// mapping a [`LineFunction`] to a family of line functions indexed by the
/// perpendicular cells.
#[derive(Debug, Clone)]
pub struct LineOperator {
    matrix: Vec<f64>,
    input: LineGrid,
    output: LineGrid,
    perp: Arc<RadialGrid>,
}

impl LineOperator {
    pub fn build(shape: KernelShape, input: LineGrid, output: LineGrid, perp: Arc<RadialGrid>) -> Result<Self> {
        if shape.base_dim != 1 {
            return Err(Error::Precondition("line operators need n - k = 1".into()));
        }
        if shape.alpha != 0.0 {
            return Err(Error::Precondition("line operators do not support the |x|^-alpha weight".into()));
        }
        if perp.dim() != shape.perp_dim {
            return Err(Error::GridMismatch(format!("perpendicular grid must have dimension {}", shape.perp_dim)));
        }
        let np = perp.len();
        let rows = output.m * np;
        let cols = input.m;
        let lk = LineKernel::new(shape.lambda);
        let mut matrix = vec![0.0; rows * cols];
        matrix.par_chunks_mut(cols).enumerate().for_each_init(Vec::new, |nodes, (row, out)| {
            let (i, j) = (row / np, row % np);
            let (s0, s1) = output.cell(i);
            let measure = output.h * perp.measure()[j];
            for (m, o) in out.iter_mut().enumerate() {
                let (a0, a1) = input.cell(m);
                let gap = (a0 - s1).max(s0 - a1).max(0.0);
                perp_nodes(&perp, j, shape.beta, gap.max(1e-300), nodes);
                let v: f64 = nodes.iter().map(|&(t, w)| w * lk.pair(s0, s1, a0, a1, t).0).sum();
                *o = v / measure;
            }
        });
        Ok(Self {
            matrix,
            input,
            output,
            perp,
        })
    }

    pub fn extend(&self, f: &LineFunction) -> Result<BiLineFunction> {
        if f.grid != self.input {
            return Err(Error::GridMismatch("line function grid differs from operator input".into()));
        }
        let values = self
            .matrix
            .chunks(self.input.m)
            .map(|row| row.iter().zip(&f.values).map(|(k, v)| k * v).sum())
            .collect();
        BiLineFunction::new(self.output, self.perp.clone(), values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::gauss_legendre;

    fn set_a() -> KernelSpec {
        KernelSpec::new(HlsParams::new(2, 1, 0.7, 0.05, 4.0 / 3.0, 4.0 / 3.0)).unwrap()
    }

    #[test]
    fn angular_kernel_examples() {
        assert!((angular_kernel(1.0, 0.0, 1.0, 1, 2.0).unwrap() - 1.0).abs() < 1e-15);
        for &(a, t, l) in &[(0.7, 0.3, 0.5), (2.0, 0.0, 1.3), (1.0, 5.0, 0.2)] {
            let v = angular_kernel(a, 0.0, t, 2, l).unwrap();
            let want = 2.0 * PI * (a * a + t * t).powf(-0.5 * l);
            assert!((v - want).abs() < 1e-12 * want);
        }
        assert!(matches!(angular_kernel(1.0, 1.0, 0.0, 1, 0.5), Err(Error::SingularKernel { .. })));
        assert!(angular_kernel(1.0, 1.0, 0.0, 2, 0.5).is_err());
    }

    #[test]
    fn angular_2d_matches_brute_force() {
        let brute = |a: f64, s: f64, t: f64, l: f64| {
            let rule = gauss_legendre(20);
            let mut sum = 0.0;
            let panels = 4000;
            for p in 0..panels {
                let lo = 2.0 * PI * p as f64 / panels as f64;
                let hi = 2.0 * PI * (p + 1) as f64 / panels as f64;
                sum += integrate(&rule, lo, hi, |th| (a * a - 2.0 * a * s * th.cos() + s * s + t * t).powf(-0.5 * l));
            }
            sum
        };
        for &(a, s, t, l) in &[(1.0, 0.5, 0.1, 0.7), (1.0, 1.01, 0.001, 1.5), (3.0, 2.9, 0.0, 0.3)] {
            let got = angular_kernel(a, s, t, 2, l).unwrap();
            let want = brute(a, s, t, l);
            assert!((got - want).abs() < 1e-9 * want, "{a} {s} {t} {l}: {got} vs {want}");
        }
    }

    #[test]
    fn line_kernel_antiderivatives() {
        for &l in &[0.3, 0.7, 1.0, 1.35, 2.0, 2.5] {
            let lk = LineKernel::new(l);
            for &(u, t) in &[(0.3f64, 1.0f64), (5.0, 0.01), (1e-6, 2.0), (2.0, 1.0), (2.0001, 1.0), (100.0, 3.0)] {
                // geometric panels resolve the peak at w = 0
                let mut exact = 0.0;
                let mut lo = 0.0;
                let mut hi = t.min(u);
                while lo < u {
                    exact += integrate(&gauss_legendre(20), lo, hi, |w| (w * w + t * t).powf(-0.5 * l));
                    lo = hi;
                    hi = (2.0 * hi).min(u);
                }
                let got = lk.f(u, t);
                assert!((got - exact).abs() < 1e-12 * exact.abs().max(1e-300), "F l={l} u={u} t={t}: {got} vs {exact}");
                assert!((lk.f(-u, t) + got).abs() < 1e-15 * got.abs());
            }
        }
    }

    #[test]
    fn g_is_second_antiderivative() {
        let lk = LineKernel::new(0.7);
        let t = 0.2;
        for &u in &[0.05, 0.5, 3.0] {
            let mut want = 0.0;
            let n = 64;
            for p in 0..n {
                let lo = u * p as f64 / n as f64;
                let hi = u * (p + 1) as f64 / n as f64;
                want += integrate(gl20(), lo, hi, |v| lk.f(v, t));
            }
            let got = lk.g(u, t);
            assert!((got - want).abs() < 1e-12 * want, "{u}: {got} vs {want}");
            assert_eq!(lk.g(-u, t), got);
        }
        // t = 0 closed form
        let lk = LineKernel::new(0.5);
        assert!((lk.g(2.0, 0.0) - 2f64.powf(1.5) / (0.5 * 1.5)).abs() < 1e-14);
    }

    #[test]
    fn pair_rules_agree_across_thresholds() {
        let lk = LineKernel::new(0.7);
        // near-field exact versus fine brute force on separated cells
        for &(s0, s1, a0, a1, t) in &[(0.0, 1.0, 1.5, 2.0, 0.0), (0.0, 1.0, 2.5, 3.0, 0.01), (0.0, 1.0, 8.0, 9.0, 0.3)] {
            let (v, _) = lk.pair(s0, s1, a0, a1, t);
            let rule = gauss_legendre(20);
            let brute = integrate(&rule, s0, s1, |s| integrate(&rule, a0, a1, |a| lk.k(s - a, t)));
            assert!((v - brute).abs() < 1e-10 * brute, "{v} vs {brute}");
        }
    }

    #[test]
    fn operator_entries_are_non_negative_and_finite() {
        let spec = set_a();
        let g = Arc::new(RadialGrid::log(1, 1e-3, 1e2, 16, true).unwrap());
        let perp = Arc::new(RadialGrid::log(1, 1e-3, 1e2, 16, true).unwrap());
        let op = build_extension(&spec, g.clone(), g.clone(), perp).unwrap();
        assert!(op.matrix().iter().all(|v| v.is_finite() && *v >= 0.0));
        assert!(op.diagnostics().total_near_entries > 0);
    }

    #[test]
    fn zero_function_maps_to_zero() {
        let spec = set_a();
        let g = Arc::new(RadialGrid::log(1, 1e-3, 1e2, 8, true).unwrap());
        let perp = Arc::new(RadialGrid::log(1, 1e-3, 1e2, 8, true).unwrap());
        let op = build_extension(&spec, g.clone(), g.clone(), perp.clone()).unwrap();
        let ef = op.extend(&RadialFunction::zeros(g.clone())).unwrap();
        assert!(ef.values.iter().all(|&v| v == 0.0));
        let rg = op.restrict(&BiRadialFunction::zeros(g.clone(), perp)).unwrap();
        assert!(rg.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let spec = set_a();
        let g = Arc::new(RadialGrid::log(1, 1e-3, 1e2, 8, true).unwrap());
        let other = Arc::new(RadialGrid::log(1, 1e-3, 1e2, 9, true).unwrap());
        let perp = Arc::new(RadialGrid::log(1, 1e-3, 1e2, 8, true).unwrap());
        let op = build_extension(&spec, g.clone(), g.clone(), perp.clone()).unwrap();
        assert!(matches!(op.extend(&RadialFunction::zeros(other)), Err(Error::GridMismatch(_))));
        let bad_perp = Arc::new(RadialGrid::log(2, 1e-3, 1e2, 8, true).unwrap());
        assert!(build_extension(&spec, g.clone(), g.clone(), bad_perp).is_err());
    }

    #[test]
    fn beta_at_least_k_rejected_on_zero_cell() {
        let shape = KernelShape {
            base_dim: 1,
            perp_dim: 1,
            lambda: 0.5,
            beta: 1.0,
            alpha: 0.0,
        };
        let g = Arc::new(RadialGrid::log(1, 1e-3, 1e2, 8, true).unwrap());
        assert!(matches!(
            build_with_shape(shape, g.clone(), g.clone(), g.clone()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn invalid_spec_rejected() {
        assert!(KernelSpec::new(HlsParams::new(2, 1, 0.7, 0.3, 4.0 / 3.0, 4.0 / 3.0)).is_err());
    }
}
