//! Gauss–Legendre rules.

use std::sync::OnceLock;

/// Nodes and weights on [-1, 1], computed by Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    let mut out = vec![(0.0, 0.0); n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=n {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            dp = nf * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out[i] = (-x, w);
        out[n - 1 - i] = (x, w);
    }
    if n % 2 == 1 {
        // midpoint node is exactly zero
        let mid = n / 2;
        out[mid].0 = 0.0;
    }
    out
}

macro_rules! cached_rule {
    ($name:ident, $n:expr) => {
        pub fn $name() -> &'static [(f64, f64)] {
            static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
            RULE.get_or_init(|| gauss_legendre($n))
        }
    };
}

cached_rule!(gl2, 2);
cached_rule!(gl4, 4);
cached_rule!(gl6, 6);
cached_rule!(gl8, 8);
cached_rule!(gl16, 16);
cached_rule!(gl20, 20);

/// Integrate `f` over `[a, b]` with the given rule.
#[inline]
pub fn integrate(rule: &[(f64, f64)], a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut s = 0.0;
    for &(x, w) in rule {
        s += w * f(c + h * x);
    }
    s * h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_exactly() {
        for n in [1usize, 2, 4, 6, 8, 16, 20] {
            let rule = gauss_legendre(n);
            let wsum: f64 = rule.iter().map(|r| r.1).sum();
            assert!((wsum - 2.0).abs() < 1e-14, "n={n}");
            for deg in 0..2 * n {
                let exact = if deg % 2 == 0 { 2.0 / (deg as f64 + 1.0) } else { 0.0 };
                let got: f64 = rule.iter().map(|&(x, w)| w * x.powi(deg as i32)).sum();
                assert!((got - exact).abs() < 1e-13, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn integrate_maps_interval() {
        let v = integrate(gl8(), 1.0, 3.0, |x| x * x);
        assert!((v - 26.0 / 3.0).abs() < 1e-13);
    }
}
