//! Estimation of the sharp constant by the Euler–Lagrange fixed-point
//! iteration, and the change of variables to the half-space problem.

use serde::Serialize;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{lp_norm, pointwise_power, BiRadialFunction, CellFunction, RadialFunction, RadialGrid};
use crate::kernel::{DiscreteOperator, KernelSpec};
use crate::params::{sphere_area, HlsParams};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 500;
/// Step residual required, together with the `nHat` tolerance, to stop.
pub const STEP_RESIDUAL_TOL: f64 = 1e-7;
const MAX_HALVINGS: usize = 20;
const DECREASE_SLACK: f64 = 1e-10;
const MAX_OMEGA: f64 = 1e4;
const MAX_EXTRAPOLATIONS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum SolverStatus {
    Converged,
    MaxIterations,
    Stalled,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct GridSpec {
    pub m_prime: usize,
    pub m_perp: usize,
    pub r_min: f64,
    pub r_max: f64,
}

impl GridSpec {
    fn of(op: &DiscreteOperator) -> Self {
        let g = op.input_grid();
        Self {
            m_prime: g.len(),
            m_perp: op.perp_grid().len(),
            r_min: g.edges().iter().copied().find(|&e| e > 0.0).unwrap_or(0.0),
            r_max: g.r_max(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ConstantEstimate {
    pub n_hat: f64,
    #[serde(skip)]
    pub f_sharp: RadialFunction,
    #[serde(skip)]
    pub g_sharp: BiRadialFunction,
    pub el_residual: f64,
    pub iterations: usize,
    pub history: Vec<f64>,
    pub status: SolverStatus,
    pub halvings: usize,
    pub grid_spec: GridSpec,
}

fn normalize(mut f: RadialFunction, p: f64) -> Result<RadialFunction> {
    let n = lp_norm(&f, p);
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::ZeroFunction);
    }
    f.scale(1.0 / n);
    Ok(f)
}

struct Step {
    f: RadialFunction,
    ef: BiRadialFunction,
    n_hat: f64,
}

impl Step {
    fn new(op: &DiscreteOperator, f: RadialFunction, q: f64) -> Result<Self> {
        let ef = op.extend(&f)?;
        let n_hat = lp_norm(&ef, q);
        Ok(Self { f, ef, n_hat })
    }
}

/// Scalar least-squares multiplier `c` minimizing `‖u - c a‖_2` and the
/// resulting relative `L^p` residual.
fn fitted_residual<F: CellFunction + Clone>(u: &F, a: &F, p: f64) -> f64 {
    let ua = u.inner_dyn(a);
    let aa = a.inner_dyn(a);
    let c = if aa > 0.0 { ua / aa } else { 0.0 };
    let mut d = u.clone();
    for (dv, av) in d.values_mut().iter_mut().zip(a.values()) {
        *dv -= c * av;
    }
    lp_norm(&d, p) / lp_norm(u, p)
}

trait InnerDyn {
    fn inner_dyn(&self, other: &Self) -> f64;
}

impl<F: CellFunction> InnerDyn for F {
    fn inner_dyn(&self, other: &Self) -> f64 {
        self.values()
            .iter()
            .zip(other.values())
            .enumerate()
            .map(|(i, (a, b))| a * b * self.cell_measure(i))
            .sum()
    }
}

fn require_spec(op: &DiscreteOperator) -> Result<&KernelSpec> {
    op.spec()
        .ok_or_else(|| Error::Precondition("operator was assembled without a validated parameter set".into()))
}

/// Safeguarded nonlinear power iteration
/// `f ← normalize_p((R[(E f)^{q-1}])^{1/(p-1)})`.
///
/// Each accepted step is followed by a trial extrapolation
/// `f + ω (f - f_prev)` kept only when it raises `nHat`; this removes the slow
/// drift along the nearly neutral dilation direction of log grids. A dilation
/// line search `f ↦ f(·/s)` with `s` a power of the grid's cell ratio follows.
pub fn power_iterate(op: &DiscreteOperator, init: &RadialFunction, tol: f64, max_iter: usize) -> Result<ConstantEstimate> {
    let spec = *require_spec(op)?;
    let (p, q) = (spec.params.p, spec.derived.q);
    init.check_non_negative()?;
    if init.is_zero() {
        return Err(Error::ZeroFunction);
    }
    let mut cur = Step::new(op, normalize(init.clone(), p)?, q)?;
    let mut history = vec![cur.n_hat];
    let mut status = SolverStatus::MaxIterations;
    let mut halvings_total = 0;
    let mut iterations = 0;
    let mut last_residual;
    let mut omega = 1.0;
    let mut dilation = DilationState::new(op.input_grid());

    loop {
        let g = pointwise_power(&cur.ef, q - 1.0)?;
        let h = op.restrict(&g)?;
        let u = pointwise_power(&cur.f, p - 1.0)?;
        last_residual = fitted_residual(&u, &h, p);
        if iterations == max_iter {
            break;
        }
        iterations += 1;
        let proposal = normalize(pointwise_power(&h, 1.0 / (p - 1.0))?, p)?;
        let mut next = Step::new(op, proposal.clone(), q)?;
        let change = (next.n_hat - cur.n_hat).abs() / next.n_hat;
        if change < tol && last_residual < STEP_RESIDUAL_TOL {
            status = SolverStatus::Converged;
            break;
        }

        let mut halvings = 0;
        while next.n_hat < cur.n_hat * (1.0 - DECREASE_SLACK) && halvings < MAX_HALVINGS {
            halvings += 1;
            let t = 0.5f64.powi(halvings as i32);
            let mut mix = cur.f.clone();
            for (m, v) in mix.values.iter_mut().zip(&proposal.values) {
                *m = (1.0 - t) * *m + t * v;
            }
            next = Step::new(op, normalize(mix, p)?, q)?;
        }
        halvings_total += halvings;
        if next.n_hat < cur.n_hat * (1.0 - DECREASE_SLACK) {
            status = SolverStatus::Stalled;
            break;
        }
        if halvings == 0 {
            let base = next.f.clone();
            let extrapolate = |w: f64| -> Result<Step> {
                let mut trial = base.clone();
                for (t, (a, b)) in trial.values.iter_mut().zip(base.values.iter().zip(&cur.f.values)) {
                    *t = (a + w * (a - b)).max(0.0);
                }
                Step::new(op, normalize(trial, p)?, q)
            };
            let mut accepted = false;
            for _ in 0..MAX_EXTRAPOLATIONS {
                let trial = extrapolate(omega)?;
                if trial.n_hat > next.n_hat {
                    next = trial;
                    accepted = true;
                    omega = (2.0 * omega).min(MAX_OMEGA);
                } else {
                    break;
                }
            }
            if !accepted {
                omega = (0.5 * omega).max(1.0);
            }
            next = dilation_search(op, next, &mut dilation, p, q)?;
        }
        history.push(next.n_hat);
        cur = next;
    }

    let g_sharp = normalize_bi(pointwise_power(&cur.ef, q - 1.0)?, spec.params.r)?;
    let el = el_residual(op, &pointwise_power(&cur.f, p - 1.0)?, &cur.ef).map(|r| r.residual)?;
    Ok(ConstantEstimate {
        n_hat: cur.n_hat,
        f_sharp: cur.f,
        g_sharp,
        el_residual: el.max(last_residual),
        iterations,
        history,
        status,
        halvings: halvings_total,
        grid_spec: GridSpec::of(op),
    })
}

/// Adaptive dilation step: direction and size persist across iterations.
struct DilationState {
    ratio: f64,
    dir: f64,
    step: f64,
}

const MAX_DILATION_STEP: f64 = 8.0;
const MIN_DILATION_STEP: f64 = 1.0 / 16.0;

impl DilationState {
    fn new(grid: &RadialGrid) -> Self {
        let pos: Vec<f64> = grid.edges().iter().copied().filter(|&e| e > 0.0).collect();
        let ratio = if pos.len() >= 2 {
            (pos[pos.len() - 1] / pos[0]).powf(1.0 / (pos.len() - 1) as f64)
        } else {
            1.0
        };
        Self {
            ratio,
            dir: 1.0,
            step: 1.0,
        }
    }
}

/// `x ↦ f(x / s)` at the cell radii, interpolating log-linearly between radii.
fn dilate(f: &RadialFunction, s: f64) -> RadialFunction {
    let g = &f.grid;
    let r = g.radii();
    let v = &f.values;
    let last = r.len() - 1;
    let values = r
        .iter()
        .map(|&ri| {
            let x = ri / s;
            if x >= g.r_max() {
                0.0
            } else if x <= r[0] {
                v[0]
            } else if x >= r[last] {
                v[last]
            } else {
                let k = r.partition_point(|&e| e <= x) - 1;
                let t = (x / r[k]).ln() / (r[k + 1] / r[k]).ln();
                if v[k] > 0.0 && v[k + 1] > 0.0 {
                    ((1.0 - t) * v[k].ln() + t * v[k + 1].ln()).exp()
                } else {
                    (1.0 - t) * v[k] + t * v[k + 1]
                }
            }
        })
        .collect();
    RadialFunction {
        grid: g.clone(),
        values,
    }
}

fn dilation_search(op: &DiscreteOperator, cur: Step, st: &mut DilationState, p: f64, q: f64) -> Result<Step> {
    if !(st.ratio > 1.0) {
        return Ok(cur);
    }
    let attempt = |s: f64| -> Result<Option<Step>> {
        let d = dilate(&cur.f, s);
        if d.is_zero() {
            return Ok(None);
        }
        let t = Step::new(op, normalize(d, p)?, q)?;
        Ok((t.n_hat > cur.n_hat).then_some(t))
    };
    if let Some(t) = attempt(st.ratio.powf(st.dir * st.step))? {
        st.step = (2.0 * st.step).min(MAX_DILATION_STEP);
        return Ok(t);
    }
    if let Some(t) = attempt(st.ratio.powf(-st.dir * st.step))? {
        st.dir = -st.dir;
        return Ok(t);
    }
    st.step = (0.5 * st.step).max(MIN_DILATION_STEP);
    Ok(cur)
}

fn normalize_bi(mut g: BiRadialFunction, r: f64) -> Result<BiRadialFunction> {
    let n = lp_norm(&g, r);
    if !(n > 0.0) {
        return Err(Error::ZeroFunction);
    }
    g.scale(1.0 / n);
    Ok(g)
}

/// The three default starting profiles.
pub fn default_inits(params: &HlsParams, grid: &Arc<RadialGrid>) -> Vec<(&'static str, RadialFunction)> {
    let decay = f64::from(params.base_dim()) / params.p * 1.01;
    vec![
        ("gaussian", grid.sample(|x| (-x * x).exp())),
        ("powerLaw", grid.sample(|x| (1.0 + x * x).powf(-decay))),
        ("indicator", grid.sample(|x| if x < 1.0 { 1.0 } else { 0.0 })),
    ]
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct MultistartResult {
    pub best: ConstantEstimate,
    pub best_init: String,
    pub runs: Vec<(String, f64, SolverStatus)>,
}

/// Runs [`power_iterate`] from every default profile and keeps the largest `nHat`.
pub fn multistart(op: &DiscreteOperator, tol: f64, max_iter: usize) -> Result<MultistartResult> {
    let spec = *require_spec(op)?;
    let mut best: Option<(String, ConstantEstimate)> = None;
    let mut runs = Vec::new();
    for (name, init) in default_inits(&spec.params, op.input_grid()) {
        let est = power_iterate(op, &init, tol, max_iter)?;
        runs.push((name.to_string(), est.n_hat, est.status));
        if best.as_ref().is_none_or(|(_, b)| est.n_hat > b.n_hat) {
            best = Some((name.to_string(), est));
        }
    }
    let (best_init, best) = best.expect("at least one init");
    Ok(MultistartResult { best, best_init, runs })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ElResidual {
    pub residual: f64,
    pub u_residual: f64,
    pub v_residual: f64,
    /// `(n-k)/n · 1/(θ+1) + 1/(κ+1) - (λ+β)/n`.
    pub exponent_defect: f64,
    pub exponent_check: bool,
}

/// Residual of the integral system `u = c₁ R[v^κ]`, `v = c₂ E[u^θ]`.
pub fn el_residual(op: &DiscreteOperator, u: &RadialFunction, v: &BiRadialFunction) -> Result<ElResidual> {
    let spec = *require_spec(op)?;
    u.check_non_negative()?;
    v.check_non_negative()?;
    if u.is_zero() || v.is_zero() {
        return Err(Error::ZeroFunction);
    }
    let d = &spec.derived;
    let prm = &spec.params;
    let a = op.restrict(&pointwise_power(v, d.kappa)?)?;
    let b = op.extend(&pointwise_power(u, d.theta)?)?;
    let u_res = fitted_residual(u, &a, prm.p);
    let v_res = fitted_residual(v, &b, prm.r);
    let n = f64::from(prm.n);
    let defect = f64::from(prm.base_dim()) / n / (d.theta + 1.0) + 1.0 / (d.kappa + 1.0) - (prm.lambda + prm.beta) / n;
    Ok(ElResidual {
        residual: u_res.max(v_res),
        u_residual: u_res,
        v_residual: v_res,
        exponent_defect: defect,
        exponent_check: defect.abs() <= 1e-12,
    })
}

/// `G(y', ρ) = |S^{k-1}|^{1/r} g(y', y'') ρ^{(k-1)/r}` on the half-space
/// `ℝ^{n-k} × (0, ∞)`. Stored as per-cell coefficients of the exact profile
/// `ρ^{(k-1)/r}`.
#[derive(Debug, Clone)]
pub struct HalfspaceFunction {
    pub prime: Arc<RadialGrid>,
    pub rho: Arc<RadialGrid>,
    pub coefficients: Vec<f64>,
    pub k: u32,
    pub r: f64,
}

impl HalfspaceFunction {
    /// `∫ G^r dy' dρ`, exact for the stored profile.
    pub fn integral_power_r(&self) -> f64 {
        let np = self.rho.len();
        let e = f64::from(self.k) - 1.0;
        self.coefficients
            .iter()
            .enumerate()
            .map(|(idx, c)| {
                let (i, j) = (idx / np, idx % np);
                let (t0, t1) = self.rho.cell(j);
                c.powf(self.r) * self.prime.measure()[i] * crate::grid::power_integral(t0, t1, e)
            })
            .sum()
    }

    /// Value at `(cell i, ρ)`.
    pub fn value(&self, i: usize, j: usize, rho: f64) -> f64 {
        self.coefficients[i * self.rho.len() + j] * rho.powf((f64::from(self.k) - 1.0) / self.r)
    }
}

pub fn transform_to_halfspace(g: &BiRadialFunction, params: &HlsParams) -> Result<HalfspaceFunction> {
    if params.k == 0 {
        return Err(Error::Precondition("the half-space form needs k >= 1".into()));
    }
    if g.perp.dim() != params.k {
        return Err(Error::GridMismatch("perpendicular grid dimension differs from k".into()));
    }
    let factor = sphere_area(params.k).powf(1.0 / params.r);
    Ok(HalfspaceFunction {
        prime: g.prime.clone(),
        rho: Arc::new(RadialGrid::from_edges(1, g.perp.edges().to_vec())?),
        coefficients: g.values.iter().map(|v| factor * v).collect(),
        k: params.k,
        r: params.r,
    })
}

/// `∫∫ f(x) G(y', ρ) |x - y|^{-λ} ρ^{-β̂} dx dy' dρ`, from the assembled `E` data.
pub fn halfspace_functional(op: &DiscreteOperator, f: &RadialFunction, big_g: &HalfspaceFunction) -> Result<f64> {
    let spec = require_spec(op)?;
    if !big_g.prime.same_as(op.prime_grid()) || big_g.rho.edges() != op.perp_grid().edges() {
        return Err(Error::GridMismatch("half-space function grids differ from the operator's".into()));
    }
    let ef = op.extend(f)?;
    let area = sphere_area(spec.params.k);
    Ok(ef
        .values
        .iter()
        .zip(&big_g.coefficients)
        .zip(op.row_measure())
        .map(|((e, c), mu)| c * mu * e / area)
        .sum())
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ConstantRelationReport {
    pub n_hat: f64,
    pub halfspace_constant: f64,
    pub predicted_factor: f64,
    pub predicted: f64,
    pub ratio: f64,
    pub relative_error: f64,
    pub norm_r_full: f64,
    pub norm_r_halfspace: f64,
}

/// Half-space constant from the transformed optimizing pair versus the
/// prediction `|S^{k-1}|^{1/r-1} · nHat`.
pub fn constant_relation_check(op: &DiscreteOperator, est: &ConstantEstimate) -> Result<ConstantRelationReport> {
    let spec = *require_spec(op)?;
    let prm = spec.params;
    if prm.k == 0 {
        return Err(Error::Precondition("the constant relation needs k >= 1".into()));
    }
    let big_g = transform_to_halfspace(&est.g_sharp, &prm)?;
    let full = lp_norm(&est.g_sharp, prm.r).powf(prm.r);
    let half = big_g.integral_power_r();
    let value = halfspace_functional(op, &est.f_sharp, &big_g)?;
    let constant = value / (lp_norm(&est.f_sharp, prm.p) * half.powf(1.0 / prm.r));
    let factor = sphere_area(prm.k).powf(1.0 / prm.r - 1.0);
    let predicted = factor * est.n_hat;
    Ok(ConstantRelationReport {
        n_hat: est.n_hat,
        halfspace_constant: constant,
        predicted_factor: factor,
        predicted,
        ratio: constant / predicted,
        relative_error: (constant - predicted).abs() / predicted,
        norm_r_full: full,
        norm_r_halfspace: half,
    })
}
