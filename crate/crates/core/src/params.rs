//! Parameter algebra for the weighted inequality
//!
//! ```text
//! | ∬ f(x) g(y) |x|^{-α} |x-y|^{-λ} |y''|^{-β} dx dy | ≤ N ‖f‖_{L^p(R^{n-k})} ‖g‖_{L^r(R^n)}
//! ```
//!
//! with `y = (y', y'') ∈ R^{n-k} × R^k`. Everything downstream is driven by
//! [`HlsParams`]; [`validate`] decides admissibility and [`derive_exponents`]
//! produces the secondary exponents (dual exponent `q`, reduced kernel
//! exponent `γ`, Euler–Lagrange exponents `κ`, `θ`, ...).

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;

use crate::error::{Error, Result};

/// Relative tolerance for the balance condition.
pub const BALANCE_RTOL: f64 = 1e-12;

/// Relative slack used when deciding strict inequalities at a boundary.
const BOUNDARY_RTOL: f64 = 1e-12;

/// Surface area of the unit sphere `S^{d-1} ⊂ R^d`.
///
/// `d = 0` returns 1 so that the degenerate perpendicular factor for `k = 0`
/// is neutral in products.
pub fn sphere_area(d: u32) -> f64 {
    match d {
        0 => 1.0,
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 2.0 * PI / f64::from(d - 2) * sphere_area(d - 2),
    }
}

/// Volume of the unit ball in `R^d`.
pub fn ball_volume(d: u32) -> f64 {
    if d == 0 {
        1.0
    } else {
        sphere_area(d) / f64::from(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HlsParams {
    pub n: u32,
    pub k: u32,
    pub lambda: f64,
    pub beta: f64,
    pub p: f64,
    pub r: f64,
    #[serde(default)]
    pub alpha: f64,
}

impl HlsParams {
    pub fn new(n: u32, k: u32, lambda: f64, beta: f64, p: f64, r: f64) -> Self {
        Self {
            n,
            k,
            lambda,
            beta,
            p,
            r,
            alpha: 0.0,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    /// Dimension of the space `f` lives on.
    pub fn base_dim(&self) -> u32 {
        self.n.saturating_sub(self.k)
    }

    /// `(n-k)/p + n/r + α + β + λ - (2n - k)`; zero exactly on balance.
    pub fn balance_residual(&self) -> f64 {
        let n = f64::from(self.n);
        let k = f64::from(self.k);
        (n - k) / self.p + n / self.r + self.alpha + self.beta + self.lambda - (2.0 * n - k)
    }

    pub fn is_balanced(&self) -> bool {
        let scale = 2.0 * f64::from(self.n) - f64::from(self.k);
        self.balance_residual().abs() <= BALANCE_RTOL * scale.max(1.0)
    }

    pub fn regime(&self) -> Regime {
        if self.lambda <= f64::from(self.n) - f64::from(self.k) {
            Regime::LambdaSmall
        } else {
            Regime::LambdaLarge
        }
    }

    /// Strict upper bound on β for the current regime.
    pub fn beta_bound(&self) -> f64 {
        let n = f64::from(self.n);
        let k = f64::from(self.k);
        match self.regime() {
            Regime::LambdaSmall => k - k / self.r,
            Regime::LambdaLarge => n - self.lambda - k / self.r,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DerivedExponents {
    pub q: f64,
    pub gamma: f64,
    pub p_prime: f64,
    pub kappa: f64,
    pub theta: f64,
    pub beta_hat: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// `0 < λ ≤ n - k`
    LambdaSmall,
    /// `λ > n - k`
    LambdaLarge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    DimensionN,
    DimensionK,
    LambdaPositive,
    PGreaterThanOne,
    RGreaterThanOne,
    AlphaNonNegative,
    Balance,
    BetaBound,
    GammaRange,
    /// With `k = 0` there is no `|y''|` weight, so β must vanish.
    BetaWithoutWeight,
    AlphaBound,
    SwExponentSum,
    /// The weighted `|x|^{-α}` variant is only supported for `λ < n - k`.
    AlphaLambdaRange,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Violation::DimensionN => "n >= 1",
            Violation::DimensionK => "0 <= k < n",
            Violation::LambdaPositive => "lambda > 0",
            Violation::PGreaterThanOne => "p > 1",
            Violation::RGreaterThanOne => "r > 1",
            Violation::AlphaNonNegative => "alpha >= 0",
            Violation::Balance => "balance condition",
            Violation::BetaBound => "beta below its regime bound",
            Violation::GammaRange => "0 < gamma < n - k",
            Violation::BetaWithoutWeight => "beta = 0 when k = 0",
            Violation::AlphaBound => "alpha < (n-k)(p-1)/p",
            Violation::SwExponentSum => "1/p + 1/r >= 1",
            Violation::AlphaLambdaRange => "lambda < n - k when alpha > 0",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SwChecks {
    pub alpha_bound: f64,
    pub alpha_ok: bool,
    pub exponent_sum: f64,
    pub exponent_sum_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ValidityReport {
    pub valid: bool,
    pub regime: Regime,
    pub beta_bound: f64,
    pub violations: Vec<Violation>,
    pub sw_checks: Option<SwChecks>,
}

impl ValidityReport {
    pub fn into_result(self) -> Result<()> {
        if self.valid {
            Ok(())
        } else {
            Err(Error::InvalidParams(
                self.violations.iter().map(|v| v.to_string()).collect(),
            ))
        }
    }
}

pub fn derive_exponents(params: &HlsParams) -> Result<DerivedExponents> {
    if !(params.p > 1.0) {
        return Err(Error::InvalidParameter {
            name: "p",
            reason: format!("p = {} must exceed 1", params.p),
        });
    }
    if !(params.r > 1.0) {
        return Err(Error::InvalidParameter {
            name: "r",
            reason: format!("r = {} must exceed 1", params.r),
        });
    }
    let k = f64::from(params.k);
    let q = params.r / (params.r - 1.0);
    Ok(DerivedExponents {
        q,
        gamma: params.lambda - k / q + params.beta + params.alpha,
        p_prime: params.p / (params.p - 1.0),
        kappa: 1.0 / (params.r - 1.0),
        theta: 1.0 / (params.p - 1.0),
        beta_hat: params.beta - (k - 1.0) * (1.0 - 1.0 / params.r),
    })
}

fn strictly_below(x: f64, bound: f64) -> bool {
    x < bound - BOUNDARY_RTOL * bound.abs().max(1.0)
}

pub fn validate(params: &HlsParams) -> ValidityReport {
    let mut violations = Vec::new();
    let n = f64::from(params.n);
    let k = f64::from(params.k);

    if params.n < 1 {
        violations.push(Violation::DimensionN);
    }
    if params.k >= params.n {
        violations.push(Violation::DimensionK);
    }
    if !(params.lambda > 0.0) {
        violations.push(Violation::LambdaPositive);
    }
    if !(params.p > 1.0) {
        violations.push(Violation::PGreaterThanOne);
    }
    if !(params.r > 1.0) {
        violations.push(Violation::RGreaterThanOne);
    }
    if !(params.alpha >= 0.0) {
        violations.push(Violation::AlphaNonNegative);
    }

    let regime = params.regime();
    let beta_bound = params.beta_bound();
    let fields_ok = violations.is_empty();

    if fields_ok {
        if !params.is_balanced() {
            violations.push(Violation::Balance);
        }
        if params.k == 0 {
            if params.beta != 0.0 {
                violations.push(Violation::BetaWithoutWeight);
            }
        } else if !strictly_below(params.beta, beta_bound) {
            violations.push(Violation::BetaBound);
        }
        let d = derive_exponents(params).expect("p, r checked above");
        let upper = n - k;
        if !(d.gamma > BOUNDARY_RTOL * upper) || !strictly_below(d.gamma, upper) {
            violations.push(Violation::GammaRange);
        }
    }

    let sw_checks = if params.alpha > 0.0 && fields_ok {
        let alpha_bound = (n - k) * (params.p - 1.0) / params.p;
        let alpha_ok = strictly_below(params.alpha, alpha_bound);
        let exponent_sum = 1.0 / params.p + 1.0 / params.r;
        let exponent_sum_ok = exponent_sum >= 1.0 - BOUNDARY_RTOL;
        if !alpha_ok {
            violations.push(Violation::AlphaBound);
        }
        if !exponent_sum_ok {
            violations.push(Violation::SwExponentSum);
        }
        if !strictly_below(params.lambda, n - k) {
            violations.push(Violation::AlphaLambdaRange);
        }
        Some(SwChecks {
            alpha_bound,
            alpha_ok,
            exponent_sum,
            exponent_sum_ok,
        })
    } else {
        None
    };

    ValidityReport {
        valid: violations.is_empty(),
        regime,
        beta_bound,
        violations,
        sw_checks,
    }
}

/// The field left free in [`solve_balance`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceUnknown {
    Lambda,
    Beta,
    P,
    R,
    /// `p` and `r` constrained equal and solved jointly.
    PEqualsR,
}

/// Solve the balance condition for one free field. The current value of the
/// free field in `params` is ignored.
pub fn solve_balance(params: &HlsParams, unknown: BalanceUnknown) -> Result<f64> {
    let n = f64::from(params.n);
    let k = f64::from(params.k);
    let target = 2.0 * n - k;
    let weights = params.alpha + params.beta + params.lambda;
    let unsolvable = |field, reason: String| Err(Error::Unsolvable { field, reason });

    match unknown {
        BalanceUnknown::Lambda => {
            let lambda = target - (n - k) / params.p - n / params.r - params.alpha - params.beta;
            if lambda > 0.0 {
                Ok(lambda)
            } else {
                unsolvable("lambda", format!("required lambda = {lambda} is not positive"))
            }
        }
        BalanceUnknown::Beta => {
            Ok(target - (n - k) / params.p - n / params.r - params.alpha - params.lambda)
        }
        BalanceUnknown::P => {
            // rest = (n-k)/p
            let rest = target - n / params.r - weights;
            if rest > 0.0 && rest < n - k {
                Ok((n - k) / rest)
            } else {
                unsolvable("p", format!("(n-k)/p = {rest} forces p <= 1 or p < 0"))
            }
        }
        BalanceUnknown::R => {
            let rest = target - (n - k) / params.p - weights;
            if rest > 0.0 && rest < n {
                Ok(n / rest)
            } else {
                unsolvable("r", format!("n/r = {rest} forces r <= 1 or r < 0"))
            }
        }
        BalanceUnknown::PEqualsR => {
            let rest = target - weights;
            let p = (2.0 * n - k) / rest;
            if rest > 0.0 && p > 1.0 {
                Ok(p)
            } else {
                unsolvable("p", format!("(2n-k)/p = {rest} forces p <= 1"))
            }
        }
    }
}

/// Apply [`solve_balance`] and write the solution back into a copy of `params`.
pub fn balanced(params: &HlsParams, unknown: BalanceUnknown) -> Result<HlsParams> {
    let v = solve_balance(params, unknown)?;
    let mut out = *params;
    match unknown {
        BalanceUnknown::Lambda => out.lambda = v,
        BalanceUnknown::Beta => out.beta = v,
        BalanceUnknown::P => out.p = v,
        BalanceUnknown::R => out.r = v,
        BalanceUnknown::PEqualsR => {
            out.p = v;
            out.r = v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set_a() -> HlsParams {
        HlsParams::new(2, 1, 0.7, 0.05, 4.0 / 3.0, 4.0 / 3.0)
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn exponents_set_a() {
        let d = derive_exponents(&set_a()).unwrap();
        assert!(close(d.q, 4.0, 1e-14));
        assert!(close(d.gamma, 0.5, 1e-14));
        assert!(close(d.kappa, 3.0, 1e-14));
        assert!(close(d.theta, 3.0, 1e-14));
        assert!(close(d.beta_hat, 0.05, 1e-14));
        assert!(close(d.p_prime, 4.0, 1e-14));
    }

    #[test]
    fn exponents_classical_and_k2() {
        let d = derive_exponents(&HlsParams::new(1, 0, 0.5, 0.0, 4.0 / 3.0, 4.0 / 3.0)).unwrap();
        assert!(close(d.q, 4.0, 1e-14) && close(d.gamma, 0.5, 1e-14));

        let d = derive_exponents(&HlsParams::new(3, 2, 1.5, 0.2, 1.25, 2.0)).unwrap();
        assert!(close(d.q, 2.0, 1e-14));
        assert!(close(d.gamma, 0.7, 1e-14));
        assert!(close(d.beta_hat, -0.3, 1e-14));
    }

    #[test]
    fn exponents_reject_endpoints() {
        let mut p = set_a();
        p.p = 1.0;
        assert!(matches!(derive_exponents(&p), Err(Error::InvalidParameter { name: "p", .. })));
        let mut p = set_a();
        p.r = 0.5;
        assert!(matches!(derive_exponents(&p), Err(Error::InvalidParameter { name: "r", .. })));
    }

    #[test]
    fn validate_set_a() {
        let rep = validate(&set_a());
        assert!(rep.valid, "{:?}", rep.violations);
        assert_eq!(rep.regime, Regime::LambdaSmall);
        assert!(close(rep.beta_bound, 0.25, 1e-14));
        assert!(rep.sw_checks.is_none());
    }

    #[test]
    fn validate_large_lambda_zero_bound() {
        let base = HlsParams::new(3, 1, 2.5, 0.0, 2.0, 2.0);
        let p = balanced(&base, BalanceUnknown::P).unwrap();
        assert!(close(p.p, 2.0, 1e-14));
        let rep = validate(&p);
        assert!(!rep.valid);
        assert_eq!(rep.regime, Regime::LambdaLarge);
        assert!(rep.beta_bound.abs() < 1e-14);
        assert!(rep.violations.contains(&Violation::BetaBound));
    }

    #[test]
    fn validate_gamma_boundary() {
        // p = r = 2 forces 1/p + 1/r = 1 and hence gamma = n - k
        let base = HlsParams::new(2, 1, 1.0, 0.0, 2.0, 2.0);
        let p = balanced(&base, BalanceUnknown::Beta).unwrap();
        let d = derive_exponents(&p).unwrap();
        assert!(close(d.gamma, 1.0, 1e-14));
        let rep = validate(&p);
        assert!(!rep.valid);
        assert!(rep.violations.contains(&Violation::GammaRange));
    }

    #[test]
    fn validate_reports_field_violations() {
        let p = HlsParams::new(2, 2, -1.0, 0.0, 0.5, 2.0);
        let rep = validate(&p);
        assert!(!rep.valid);
        for v in [Violation::DimensionK, Violation::LambdaPositive, Violation::PGreaterThanOne] {
            assert!(rep.violations.contains(&v));
        }
    }

    #[test]
    fn validate_k0_requires_zero_beta() {
        let classical = HlsParams::new(1, 0, 0.5, 0.0, 4.0 / 3.0, 4.0 / 3.0);
        assert!(validate(&classical).valid);
        let mut bad = classical;
        bad.beta = 0.1;
        bad.lambda = 0.4;
        assert!(validate(&bad).violations.contains(&Violation::BetaWithoutWeight));
    }

    #[test]
    fn validate_sw_variant() {
        let p = balanced(&set_a().with_alpha(0.1), BalanceUnknown::Beta).unwrap();
        assert!(close(p.beta, -0.05, 1e-13));
        let rep = validate(&p);
        assert!(rep.valid, "{:?}", rep.violations);
        let sw = rep.sw_checks.unwrap();
        assert!(close(sw.alpha_bound, 0.25, 1e-14));

        let at_bound = balanced(&set_a().with_alpha(0.25), BalanceUnknown::Beta).unwrap();
        assert!(validate(&at_bound).violations.contains(&Violation::AlphaBound));

        let mut large = HlsParams::new(3, 1, 2.2, -0.5, 2.0, 2.0).with_alpha(0.1);
        large = balanced(&large, BalanceUnknown::P).unwrap();
        assert!(validate(&large).violations.contains(&Violation::AlphaLambdaRange));
    }

    #[test]
    fn solve_balance_examples() {
        let lam = solve_balance(&set_a(), BalanceUnknown::Lambda).unwrap();
        assert!(close(lam, 0.7, 1e-14));

        let classical = HlsParams::new(1, 0, 0.5, 0.0, 0.0, 0.0);
        let p = solve_balance(&classical, BalanceUnknown::PEqualsR).unwrap();
        assert!(close(p, 4.0 / 3.0, 1e-14));

        let k2 = HlsParams::new(3, 2, 1.5, 0.0, 1.25, 2.0);
        assert!(close(solve_balance(&k2, BalanceUnknown::Beta).unwrap(), 0.2, 1e-14));

        let r = solve_balance(&set_a(), BalanceUnknown::R).unwrap();
        assert!(close(r, 4.0 / 3.0, 1e-14));
    }

    #[test]
    fn solve_balance_unsolvable() {
        // huge lambda + beta leave no room for 1/p > 0
        let p = HlsParams::new(2, 1, 5.0, 0.0, 2.0, 2.0);
        assert!(matches!(
            solve_balance(&p, BalanceUnknown::P),
            Err(Error::Unsolvable { field: "p", .. })
        ));
        // required p <= 1
        let p = HlsParams::new(2, 1, 0.1, 0.0, 2.0, 100.0);
        assert!(solve_balance(&p, BalanceUnknown::P).is_err());
        let p = HlsParams::new(2, 1, 0.0, 5.0, 1.5, 1.5);
        assert!(solve_balance(&p, BalanceUnknown::Lambda).is_err());
    }

    #[test]
    fn sphere_areas() {
        assert_eq!(sphere_area(1), 2.0);
        assert!(close(sphere_area(2), 2.0 * PI, 1e-15));
        assert!(close(sphere_area(3), 4.0 * PI, 1e-15));
        assert!(close(sphere_area(4), 2.0 * PI * PI, 1e-15));
        assert!(close(ball_volume(3), 4.0 * PI / 3.0, 1e-15));
    }

    #[test]
    fn regime_boundary_continuity() {
        for &(n, k, r) in &[(2u32, 1u32, 4.0 / 3.0), (3, 2, 2.0), (3, 1, 1.5)] {
            let lam = f64::from(n - k);
            let mut p = HlsParams::new(n, k, lam, 0.0, 2.0, r);
            let small = p.beta_bound();
            p.lambda = lam * (1.0 + 1e-15) + 1e-15;
            let large = p.beta_bound();
            assert!((small - large).abs() < 1e-12);
        }
    }
}
