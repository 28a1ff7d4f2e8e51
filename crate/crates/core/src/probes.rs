//! Numerical checks of the explicit constant bounds and of the divergence
//! constructions outside the admissible parameter range.

use serde::Serialize;
use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{lp_norm, CellFunction, RadialFunction, RadialGrid};
use crate::kernel::{build_with_shape, unit_ball_pair, DiscreteOperator, KernelShape, KernelSpec};
use crate::params::{ball_volume, derive_exponents, sphere_area, HlsParams, Regime};
use crate::quad::{gl16, gl8, integrate};
use crate::rearrange::{disk_intersection, star_norm};

pub const DEFAULT_EPSILONS: [f64; 5] = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5];
pub const EXPONENT_RTOL: f64 = 0.05;
pub const R_SQUARED_MIN: f64 = 0.99;
pub const STABILITY_RTOL: f64 = 0.2;
const QUAD_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Holds,
    Diverges,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Observation {
    pub label: String,
    pub control: f64,
    pub measured: f64,
}

impl Observation {
    fn new(label: impl Into<String>, control: f64, measured: f64) -> Self {
        Self {
            label: label.into(),
            control,
            measured,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum FitKind {
    /// `I = A log(1/ε) + B`
    Logarithmic,
    /// `I = A ε^{-s} + B`
    Power,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Fit {
    pub kind: FitKind,
    pub exponent: f64,
    pub predicted_exponent: f64,
    pub slope: f64,
    pub predicted_slope: Option<f64>,
    pub intercept: f64,
    pub r_squared: f64,
    pub rms_residual: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ProbeReport {
    pub name: String,
    pub params: Option<HlsParams>,
    pub observations: Vec<Observation>,
    pub fit: Option<Fit>,
    pub verdict: Verdict,
    pub tolerances: BTreeMap<String, f64>,
    pub details: serde_json::Value,
}

impl ProbeReport {
    fn new(name: &str, params: Option<HlsParams>) -> Self {
        Self {
            name: name.into(),
            params,
            observations: Vec::new(),
            fit: None,
            verdict: Verdict::Inconclusive,
            tolerances: BTreeMap::new(),
            details: serde_json::Value::Null,
        }
    }

    fn tol(mut self, key: &str, v: f64) -> Self {
        self.tolerances.insert(key.into(), v);
        self
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,control,measured\n");
        for o in &self.observations {
            s.push_str(&format!("{},{:.16e},{:.16e}\n", o.label, o.control, o.measured));
        }
        s
    }
}

// ---------------------------------------------------------------------------
// Dyadic lemma

/// Checks `∫(ρ^{-γ}h)^τ dρ/ρ ≤ 2^{(2γ+1)τ}(∫ρ^{-γ}h dρ/ρ)^τ` for a
/// non-decreasing step function `h` (zero below the first edge, equal to its
/// last value beyond the last edge). Both sides are integrated exactly.
pub fn dyadic_lemma_check(h: &RadialFunction, gamma: f64, tau: f64) -> Result<ProbeReport> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidParameter {
            name: "gamma",
            reason: format!("{gamma} must be positive"),
        });
    }
    if !(tau >= 1.0) {
        return Err(Error::InvalidParameter {
            name: "tau",
            reason: format!("{tau} must be at least 1"),
        });
    }
    h.check_non_negative()?;
    if h.values.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Precondition("h must be non-decreasing".into()));
    }
    let edges = h.grid.edges();
    if edges[0] == 0.0 && h.values[0] > 0.0 {
        return Err(Error::Precondition("h > 0 on a cell touching 0 makes both sides infinite".into()));
    }
    let side = |e: f64, power: f64| -> f64 {
        let mut sum = 0.0;
        for (i, &v) in h.values.iter().enumerate() {
            if v > 0.0 {
                let (a, b) = (edges[i], edges[i + 1]);
                sum += v.powf(power) * (a.powf(-e) - b.powf(-e)) / e;
            }
        }
        let last = *h.values.last().unwrap();
        if last > 0.0 {
            sum += last.powf(power) * edges[edges.len() - 1].powf(-e) / e;
        }
        sum
    };
    let lhs = side(gamma * tau, tau);
    let rhs = 2f64.powf((2.0 * gamma + 1.0) * tau) * side(gamma, 1.0).powf(tau);
    let mut rep = ProbeReport::new("dyadic_lemma", None).tol("relative", 1e-8);
    rep.observations.push(Observation::new("lhs", gamma, lhs));
    rep.observations.push(Observation::new("rhs", tau, rhs));
    rep.verdict = if lhs <= rhs * (1.0 + 1e-8) {
        Verdict::Holds
    } else {
        Verdict::Inconclusive
    };
    rep.details = serde_json::json!({ "gamma": gamma, "tau": tau, "lhs": lhs, "rhs": rhs });
    Ok(rep)
}

// ---------------------------------------------------------------------------
// Norm equivalence

/// `(λ 2^{2γ+1}/γ · 1/(λ-γ))^q |S^{k-1}|`, with `λ - γ = k/q - β`.
pub fn norm_equivalence_constant(params: &HlsParams) -> Result<f64> {
    let d = derive_exponents(params)?;
    let l = params.lambda;
    let diff = f64::from(params.k) / d.q - params.beta;
    Ok((l * 2f64.powf(2.0 * d.gamma + 1.0) / d.gamma / diff).powf(d.q) * sphere_area(params.k))
}

fn positive_range(grid: &RadialGrid) -> (f64, f64, usize) {
    let pos: Vec<f64> = grid.edges().iter().copied().filter(|&e| e > 0.0).collect();
    (pos[0], pos[pos.len() - 1], (pos.len() - 1).max(8))
}

/// `x ↦ h(x/s)` on the same grid, by point lookup at the cell radii.
fn rescaled(h: &RadialFunction, s: f64) -> RadialFunction {
    let g = &h.grid;
    let edges = g.edges();
    let values = g
        .radii()
        .iter()
        .map(|&r| {
            let x = r / s;
            if x >= g.r_max() {
                0.0
            } else {
                h.values[edges.partition_point(|&e| e <= x).clamp(1, g.len()) - 1]
            }
        })
        .collect();
    RadialFunction {
        grid: g.clone(),
        values,
    }
}

/// Compares `W = ∫(∫ h |x-y|^{-λ}|y''|^{-β} dx)^q dy` with
/// `U = ∫(∫ h |z-x|^{-γ} dx)^q dz` against the explicit constant, and
/// records `W/U` over the rescalings `h(·/s)`, `s ∈ {1/4, 1, 4}`.
pub fn norm_equivalence(h: &RadialFunction, params: &HlsParams) -> Result<ProbeReport> {
    let spec = KernelSpec::new(*params)?;
    h.check_non_negative()?;
    let base = params.base_dim();
    if h.grid.dim() != base {
        return Err(Error::GridMismatch(format!("h must live in dimension {base}")));
    }
    let d = spec.derived;
    let constant = norm_equivalence_constant(params)?;
    let (r_min, r_max, m) = positive_range(&h.grid);
    let perp = if params.k == 0 {
        Arc::new(RadialGrid::point())
    } else {
        Arc::new(RadialGrid::log(params.k, r_min, r_max, m, true)?)
    };
    let w_shape = KernelShape {
        alpha: 0.0,
        ..spec.shape()
    };
    let u_shape = KernelShape {
        base_dim: base,
        perp_dim: 0,
        lambda: d.gamma,
        beta: 0.0,
        alpha: 0.0,
    };
    let grid = h.grid.clone();
    let w_op = build_with_shape(w_shape, grid.clone(), grid.clone(), perp)?;
    let u_op = build_with_shape(u_shape, grid.clone(), grid, Arc::new(RadialGrid::point()))?;
    let measure = |f: &RadialFunction| -> Result<(f64, f64)> {
        let w = lp_norm(&w_op.extend(f)?, d.q).powf(d.q);
        let u = lp_norm(&u_op.extend(f)?, d.q).powf(d.q);
        Ok((w, u))
    };

    let (w, u) = measure(h)?;
    let mut rep = ProbeReport::new("norm_equivalence", Some(*params))
        .tol("quadrature", QUAD_TOL)
        .tol("ratioSpread", 10.0);
    let holds = w <= constant * u * (1.0 + QUAD_TOL);
    let mut ratios = Vec::new();
    for s in [0.25, 1.0, 4.0] {
        let (ws, us) = if s == 1.0 { (w, u) } else { measure(&rescaled(h, s))? };
        if us > 0.0 {
            ratios.push(ws / us);
            rep.observations.push(Observation::new("W/U", s, ws / us));
        }
    }
    let spread = if ratios.is_empty() {
        1.0
    } else {
        let max = ratios.iter().copied().fold(f64::MIN, f64::max);
        let min = ratios.iter().copied().fold(f64::MAX, f64::min);
        max / min
    };
    rep.verdict = if holds && spread <= 10.0 {
        Verdict::Holds
    } else {
        Verdict::Inconclusive
    };
    rep.details = serde_json::json!({
        "w": w, "u": u, "constant": constant, "bound": constant * u, "ratioSpread": spread,
        "gamma": d.gamma, "q": d.q,
    });
    Ok(rep)
}

// ---------------------------------------------------------------------------
// Divergence probes

fn check_epsilons(eps: &[f64]) -> Result<()> {
    if eps.len() < 3 {
        return Err(Error::InvalidParameter {
            name: "epsilons",
            reason: "at least three values are needed for a fit".into(),
        });
    }
    if eps[0] >= 1.0 || eps.iter().any(|&e| !(e > 0.0)) || eps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParameter {
            name: "epsilons",
            reason: "values must be strictly decreasing in (0, 1)".into(),
        });
    }
    Ok(())
}

/// `∫_lo^hi f(t) dt` in the variable `ln t`, 16-point panels per half decade.
fn log_integral(f: &impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let (a, b) = (lo.ln(), hi.ln());
    let panels = (((b - a) / std::f64::consts::LN_10) * 2.0).ceil().max(1.0) as usize;
    let w = (b - a) / panels as f64;
    (0..panels)
        .map(|i| {
            let u0 = a + w * i as f64;
            integrate(gl16(), u0, u0 + w, |u| {
                let t = u.exp();
                f(t) * t
            })
        })
        .sum()
}

/// `ε ↦ ∫_ε^1 f` at every requested `ε` (cumulative over the sorted list).
fn truncated_integrals(f: impl Fn(f64) -> f64, eps: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut hi = 1.0;
    eps.iter()
        .map(|&e| {
            acc += log_integral(&f, e, hi);
            hi = e;
            acc
        })
        .collect()
}

struct LsFit {
    coef: Vec<f64>,
    r_squared: f64,
    rms: f64,
}

/// Least squares `y ≈ Σ c_j x_j` through the normal equations.
fn least_squares(cols: &[Vec<f64>], y: &[f64]) -> LsFit {
    let m = cols.len();
    let mut a = vec![vec![0.0; m + 1]; m];
    for i in 0..m {
        for j in 0..m {
            a[i][j] = cols[i].iter().zip(&cols[j]).map(|(u, v)| u * v).sum();
        }
        a[i][m] = cols[i].iter().zip(y).map(|(u, v)| u * v).sum();
    }
    for c in 0..m {
        let piv = (c..m).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        if a[c][c].abs() < 1e-300 {
            continue;
        }
        for i in 0..m {
            if i != c {
                let f = a[i][c] / a[c][c];
                for j in c..=m {
                    a[i][j] -= f * a[c][j];
                }
            }
        }
    }
    let coef: Vec<f64> = (0..m)
        .map(|i| if a[i][i].abs() < 1e-300 { 0.0 } else { a[i][m] / a[i][i] })
        .collect();
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let sse: f64 = (0..y.len())
        .map(|k| (y[k] - (0..m).map(|j| coef[j] * cols[j][k]).sum::<f64>()).powi(2))
        .sum();
    let sst: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    LsFit {
        coef,
        r_squared: if sst > 0.0 { 1.0 - sse / sst } else { 1.0 },
        rms: (sse / n).sqrt(),
    }
}

/// Columns `[lead, ε^δ·(lead or 1), 1]`; the optional middle column models the
/// leading pre-asymptotic correction of known order `δ`.
fn columns(lead: Vec<f64>, corr: Option<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = lead.len();
    let mut cols = vec![lead];
    cols.extend(corr);
    cols.push(vec![1.0; n]);
    cols
}

/// `I = A log(1/ε) [+ C ε^δ] + B`; returns `(A, B, R², rms)`.
fn log_fit(eps: &[f64], vals: &[f64], correction: Option<f64>) -> (f64, f64, f64, f64) {
    let lead = eps.iter().map(|e| (1.0 / e).ln()).collect();
    let corr = correction.map(|d| eps.iter().map(|e| e.powf(d)).collect());
    let cols = columns(lead, corr);
    let fit = least_squares(&cols, vals);
    (fit.coef[0], fit.coef[cols.len() - 1], fit.r_squared, fit.rms)
}

/// `I = A ε^{-s} [+ C ε^{δ-s}] + B`: linear in the coefficients for fixed
/// `s`, with `s` from a log-spaced scan refined by golden-section search.
/// Returns `(s, A, B, R², rms)`.
fn power_fit(eps: &[f64], vals: &[f64], correction: Option<f64>) -> (f64, f64, f64, f64, f64) {
    let solve = |s: f64| {
        let lead = eps.iter().map(|e| e.powf(-s)).collect();
        let corr = correction.map(|d| eps.iter().map(|e| e.powf(d - s)).collect());
        least_squares(&columns(lead, corr), vals)
    };
    let loss = |s: f64| 1.0 - solve(s).r_squared;
    let (lo_s, hi_s) = (1e-3f64, 10.0f64);
    let steps = 400;
    let grid: Vec<f64> = (0..=steps)
        .map(|i| (lo_s.ln() + (hi_s / lo_s).ln() * i as f64 / steps as f64).exp())
        .collect();
    let best = (0..grid.len()).min_by(|&a, &b| loss(grid[a]).total_cmp(&loss(grid[b]))).unwrap();
    let (mut a, mut b) = (grid[best.saturating_sub(1)], grid[(best + 1).min(steps)]);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if loss(c) < loss(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let s = 0.5 * (a + b);
    let fit = solve(s);
    (s, fit.coef[0], *fit.coef.last().unwrap(), fit.r_squared, fit.rms)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum Construction {
    /// `f = χ_{B_1}`, integral truncated to `|y''| > ε`.
    UnitBall,
    /// `f = χ_{B_6}`, `y' ∈ B_4 \ B_2`, `ρ ∈ (ε, 1)`.
    Annulus,
}

fn divergence_report(
    name: &str,
    params: &HlsParams,
    construction: Construction,
    eps: &[f64],
    predicted: f64,
    predicted_slope: Option<f64>,
    correction: Option<f64>,
    values: Vec<f64>,
) -> ProbeReport {
    let mut rep = ProbeReport::new(name, Some(*params))
        .tol("exponentRelative", EXPONENT_RTOL)
        .tol("rSquaredMin", R_SQUARED_MIN);
    rep.observations = eps
        .iter()
        .zip(&values)
        .map(|(&e, &v)| Observation::new("epsilon", e, v))
        .collect();
    let fit = if predicted.abs() < 1e-9 {
        let (slope, intercept, r2, rms) = log_fit(eps, &values, correction);
        let rel = predicted_slope.map_or(f64::INFINITY, |p| (slope - p).abs() / p);
        Fit {
            kind: FitKind::Logarithmic,
            exponent: 0.0,
            predicted_exponent: 0.0,
            slope,
            predicted_slope,
            intercept,
            r_squared: r2,
            rms_residual: rms,
            relative_error: rel,
        }
    } else {
        let (s, slope, intercept, r2, rms) = power_fit(eps, &values, correction);
        Fit {
            kind: FitKind::Power,
            exponent: s,
            predicted_exponent: predicted,
            slope,
            predicted_slope: None,
            intercept,
            r_squared: r2,
            rms_residual: rms,
            relative_error: (s - predicted).abs() / predicted,
        }
    };
    rep.verdict = if fit.r_squared >= R_SQUARED_MIN && fit.relative_error <= EXPONENT_RTOL {
        Verdict::Diverges
    } else {
        Verdict::Inconclusive
    };
    rep.details = serde_json::json!({ "construction": construction, "correctionOrder": correction });
    rep.fit = Some(fit);
    rep
}

fn check_probe_dims(params: &HlsParams) -> Result<()> {
    if params.k == 0 {
        return Err(Error::Precondition("divergence probes need k >= 1".into()));
    }
    if !matches!(params.base_dim(), 1 | 2) {
        return Err(Error::Precondition("divergence probes support n - k = 1 or 2".into()));
    }
    if !(params.lambda > 0.0) || !(params.r > 1.0) {
        return Err(Error::Precondition("probes need lambda > 0 and r > 1".into()));
    }
    Ok(())
}

/// First construction: `|S^{k-1}| ∫_ε^1 t^{k-1-βq} D(t)^q dt` with `D(t)` the
/// unit-ball pair integral of `(|x - y'|² + t²)^{-λ/2}`.
fn unit_ball_values(params: &HlsParams, q: f64, eps: &[f64]) -> (Vec<f64>, Option<f64>) {
    let (k, base, l, b) = (f64::from(params.k), params.base_dim(), params.lambda, params.beta);
    let area = sphere_area(params.k);
    let f = |t: f64| area * t.powf(k - 1.0 - b * q) * unit_ball_pair(base, l, t).powf(q);
    let slope = (l < f64::from(base)).then(|| area * unit_ball_pair(base, l, 0.0).powf(q));
    (truncated_integrals(f, eps), slope)
}

/// Second construction: `|S^{k-1}| ∫_{B_4∖B_2} ∫_ε^1 (ρ^{-(λ+β)} |B_ρ(y') ∩ B_6|)^q ρ^{k-1} dρ dy'`.
fn annulus_values(params: &HlsParams, q: f64, eps: &[f64]) -> (Vec<f64>, f64) {
    let base = params.base_dim();
    let (k, l, b) = (f64::from(params.k), params.lambda, params.beta);
    let area_k = sphere_area(params.k);
    let area_base = sphere_area(base);
    let overlap = |s: f64, rho: f64| -> f64 {
        match base {
            1 => ((s + rho).min(6.0) - (s - rho).max(-6.0)).max(0.0),
            _ => disk_intersection(6.0, rho, s),
        }
    };
    let e_base = f64::from(base) - 1.0;
    let f = |rho: f64| {
        let inner = integrate(gl8(), 2.0, 4.0, |s| s.powf(e_base) * (rho.powf(-(l + b)) * overlap(s, rho)).powf(q));
        area_k * area_base * inner * rho.powf(k - 1.0)
    };
    let annulus = ball_volume(base) * (4f64.powf(f64::from(base)) - 2f64.powf(f64::from(base)));
    let slope = area_k * annulus * ball_volume(base).powf(q);
    (truncated_integrals(f, eps), slope)
}

/// Growth of the truncated dual-norm integrals for `β` on or above the
/// admissible bound: logarithmic at the bound, `ε^{-(βq-k)}` (first
/// construction) or `ε^{-(λ+β-k/q+k-n)q}` (second) above it.
pub fn probe_beta_sharpness(params: &HlsParams, eps: &[f64]) -> Result<ProbeReport> {
    check_probe_dims(params)?;
    check_epsilons(eps)?;
    let bound = params.beta_bound();
    if params.beta < bound - 1e-12 {
        return Err(Error::Precondition(format!(
            "beta = {} is inside the admissible range (bound {bound}); the probe targets beta >= bound",
            params.beta
        )));
    }
    let q = params.r / (params.r - 1.0);
    let (k, n) = (f64::from(params.k), f64::from(params.n));
    Ok(match params.regime() {
        Regime::LambdaSmall => {
            let (values, slope) = unit_ball_values(params, q, eps);
            let predicted = snap_zero(params.beta * q - k);
            let correction = Some((f64::from(params.base_dim()) - params.lambda).min(2.0));
            divergence_report("beta_sharpness", params, Construction::UnitBall, eps, predicted, slope, correction, values)
        }
        Regime::LambdaLarge => {
            let (values, slope) = annulus_values(params, q, eps);
            let predicted = snap_zero((params.lambda + params.beta - k / q + k - n) * q);
            divergence_report("beta_sharpness", params, Construction::Annulus, eps, predicted, Some(slope), None, values)
        }
    })
}

fn snap_zero(v: f64) -> f64 {
    if v.abs() < 1e-9 {
        0.0
    } else {
        v
    }
}

/// Divergence for `β = 0` and `λ ≥ n - k/r` via the second construction.
pub fn probe_lambda_range(params: &HlsParams, eps: &[f64]) -> Result<ProbeReport> {
    check_probe_dims(params)?;
    check_epsilons(eps)?;
    if params.beta != 0.0 {
        return Err(Error::Precondition("the lambda-range probe needs beta = 0".into()));
    }
    let threshold = f64::from(params.n) - f64::from(params.k) / params.r;
    if params.lambda < threshold - 1e-12 {
        return Err(Error::Precondition(format!(
            "lambda = {} is below n - k/r = {threshold}",
            params.lambda
        )));
    }
    let q = params.r / (params.r - 1.0);
    let (k, n) = (f64::from(params.k), f64::from(params.n));
    let (values, slope) = annulus_values(params, q, eps);
    let predicted = snap_zero((params.lambda - k / q + k - n) * q);
    Ok(divergence_report(
        "lambda_range",
        params,
        Construction::Annulus,
        eps,
        predicted,
        Some(slope),
        None,
        values,
    ))
}

// ---------------------------------------------------------------------------
// Bounded-ratio probes

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum TestFunction {
    Gaussian,
    Indicator,
    Cauchy,
}

impl TestFunction {
    pub const FAMILY: [TestFunction; 3] = [TestFunction::Gaussian, TestFunction::Indicator, TestFunction::Cauchy];

    pub fn name(&self) -> &'static str {
        match self {
            TestFunction::Gaussian => "gaussian",
            TestFunction::Indicator => "indicator",
            TestFunction::Cauchy => "cauchy",
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            TestFunction::Gaussian => (-x * x).exp(),
            TestFunction::Indicator => {
                if x < 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            TestFunction::Cauchy => 1.0 / (1.0 + x * x),
        }
    }

    pub fn sample(&self, grid: &Arc<RadialGrid>) -> RadialFunction {
        grid.sample(|x| self.eval(x))
    }
}

fn require_spec(op: &DiscreteOperator) -> Result<&KernelSpec> {
    op.spec()
        .ok_or_else(|| Error::Precondition("operator was assembled without a validated parameter set".into()))
}

/// `∫(E f)^q / (‖f‖_*^{q-p} ‖f‖_p^p)`.
pub fn adams_ratio(op: &DiscreteOperator, f: &RadialFunction) -> Result<f64> {
    let spec = require_spec(op)?;
    f.check_non_negative()?;
    if f.is_zero() {
        return Err(Error::ZeroFunction);
    }
    let (p, q) = (spec.params.p, spec.derived.q);
    let num = lp_norm(&op.extend(f)?, q).powf(q);
    let star = star_norm(f, &spec.params)?.value;
    Ok(num / (star.powf(q - p) * lp_norm(f, p).powf(p)))
}

/// `‖E_α f‖_q / ‖f‖_p`.
pub fn sw_ratio(op: &DiscreteOperator, f: &RadialFunction) -> Result<f64> {
    let spec = require_spec(op)?;
    f.check_non_negative()?;
    if f.is_zero() {
        return Err(Error::ZeroFunction);
    }
    Ok(lp_norm(&op.extend(f)?, spec.derived.q) / lp_norm(f, spec.params.p))
}

fn sup_stability(
    name: &str,
    family: &[TestFunction],
    coarse: &DiscreteOperator,
    fine: &DiscreteOperator,
    ratio: impl Fn(&DiscreteOperator, &RadialFunction) -> Result<f64>,
) -> Result<ProbeReport> {
    if family.is_empty() {
        return Err(Error::InvalidParameter {
            name: "family",
            reason: "at least one test function is required".into(),
        });
    }
    let params = require_spec(coarse)?.params;
    if require_spec(fine)?.params != params {
        return Err(Error::Precondition("coarse and fine operators use different parameters".into()));
    }
    let mut rep = ProbeReport::new(name, Some(params)).tol("stabilityRelative", STABILITY_RTOL);
    let mut sups = [0.0f64; 2];
    for (level, op) in [coarse, fine].into_iter().enumerate() {
        let m = op.input_grid().len() as f64;
        for tf in family {
            let v = ratio(op, &tf.sample(op.input_grid()))?;
            rep.observations.push(Observation::new(tf.name(), m, v));
            sups[level] = sups[level].max(v);
        }
    }
    let change = (sups[1] - sups[0]).abs() / sups[0];
    rep.verdict = if sups.iter().all(|s| s.is_finite()) && change < STABILITY_RTOL {
        Verdict::Holds
    } else {
        Verdict::Inconclusive
    };
    rep.details = serde_json::json!({
        "supCoarse": sups[0], "supFine": sups[1], "relativeChange": change,
        "mCoarse": coarse.input_grid().len(), "mFine": fine.input_grid().len(),
    });
    Ok(rep)
}

/// Empirical constant of `∫(E f)^q ≤ C ‖f‖_*^{q-p} ∫ f^p` over the family,
/// and its stability between two grid resolutions.
pub fn adams_bound_check(family: &[TestFunction], coarse: &DiscreteOperator, fine: &DiscreteOperator) -> Result<ProbeReport> {
    sup_stability("adams_bound", family, coarse, fine, adams_ratio)
}

/// Empirical constant of `‖E_α f‖_q ≤ C ‖f‖_p` for the `|x|^{-α}`-weighted
/// kernel, and its stability between two grid resolutions.
pub fn sw_probe(family: &[TestFunction], coarse: &DiscreteOperator, fine: &DiscreteOperator) -> Result<ProbeReport> {
    let params = require_spec(coarse)?.params;
    if !(params.alpha > 0.0) {
        return Err(Error::Precondition("the weighted probe needs alpha > 0".into()));
    }
    sup_stability("sw_bound", family, coarse, fine, sw_ratio)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dyadic_lemma_closed_form() {
        let g = Arc::new(RadialGrid::from_edges(1, vec![1.0, 2.0, 4.0]).unwrap());
        let h = RadialFunction::new(g, vec![1.0, 1.0]).unwrap();
        let rep = dyadic_lemma_check(&h, 0.5, 2.0).unwrap();
        assert!((rep.observations[0].measured - 1.0).abs() < 1e-14);
        assert!((rep.observations[1].measured - 64.0).abs() < 1e-12);
        assert_eq!(rep.verdict, Verdict::Holds);
    }

    #[test]
    fn dyadic_lemma_rejects_decreasing_h() {
        let g = Arc::new(RadialGrid::from_edges(1, vec![1.0, 2.0, 4.0]).unwrap());
        let h = RadialFunction::new(g, vec![2.0, 1.0]).unwrap();
        assert!(dyadic_lemma_check(&h, 0.5, 2.0).is_err());
    }

    #[test]
    fn norm_equivalence_constant_for_set_a() {
        let p = HlsParams::new(2, 1, 0.7, 0.05, 4.0 / 3.0, 4.0 / 3.0);
        let c = norm_equivalence_constant(&p).unwrap();
        assert!((c - 1_229_312.0).abs() < 1e-6, "{c}");
    }

    #[test]
    fn fits_recover_synthetic_laws() {
        let eps = DEFAULT_EPSILONS;
        let logs: Vec<f64> = eps.iter().map(|e| 3.0 * (1.0 / e).ln() + 0.7).collect();
        let (slope, intercept, r2, _) = log_fit(&eps, &logs, None);
        assert!((slope - 3.0).abs() < 1e-12 && (intercept - 0.7).abs() < 1e-12 && r2 > 0.999_999);
        let pw: Vec<f64> = eps.iter().map(|e| 2.0 * e.powf(-0.2) - 1.5).collect();
        let (s, a, b, r2, _) = power_fit(&eps, &pw, None);
        assert!((s - 0.2).abs() < 1e-6 && (a - 2.0).abs() < 1e-4 && (b + 1.5).abs() < 1e-4 && r2 > 0.999_999);
        let corrected: Vec<f64> = eps.iter().map(|e| 2.0 * e.powf(-0.2) + 5.0 * e.powf(0.3) - 1.5).collect();
        let (s, a, _, _, _) = power_fit(&eps, &corrected, Some(0.5));
        assert!((s - 0.2).abs() < 1e-6 && (a - 2.0).abs() < 1e-4);
        let corrected: Vec<f64> = eps.iter().map(|e| 3.0 * (1.0 / e).ln() - 4.0 * e.sqrt() + 0.7).collect();
        let (slope, _, _, _) = log_fit(&eps, &corrected, Some(0.5));
        assert!((slope - 3.0).abs() < 1e-9);
    }

    #[test]
    fn invalid_probe_inputs() {
        let valid = HlsParams::new(2, 1, 0.7, 0.05, 4.0 / 3.0, 4.0 / 3.0);
        assert!(probe_beta_sharpness(&valid, &DEFAULT_EPSILONS).is_err());
        let low = HlsParams::new(2, 1, 1.0, 0.0, 4.0 / 3.0, 4.0 / 3.0);
        assert!(probe_lambda_range(&low, &DEFAULT_EPSILONS).is_err());
        let boundary = HlsParams::new(2, 1, 0.5, 0.25, 4.0 / 3.0, 4.0 / 3.0);
        assert!(probe_beta_sharpness(&boundary, &[1e-1, 1e-2]).is_err());
        assert!(probe_beta_sharpness(&boundary, &[1e-2, 1e-1, 1e-3]).is_err());
    }
}
