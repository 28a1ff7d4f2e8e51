use std::sync::Arc;

use proptest::prelude::*;
use whls::grid::{RadialFunction, RadialGrid};
use whls::kernel::{build_extension, DiscreteOperator, KernelSpec};
use whls::params::HlsParams;
use whls::probes::*;
use whls::Error;

const R: f64 = 4.0 / 3.0;

fn params(n: u32, k: u32, lambda: f64, beta: f64) -> HlsParams {
    HlsParams::new(n, k, lambda, beta, R, R)
}

fn set_a() -> HlsParams {
    params(2, 1, 0.7, 0.05)
}

fn operator(p: HlsParams, m: usize) -> DiscreteOperator {
    let g = Arc::new(RadialGrid::log(1, 1e-3, 1e2, m, true).unwrap());
    build_extension(&KernelSpec::new(p).unwrap(), g.clone(), g.clone(), g).unwrap()
}

fn fit(rep: &ProbeReport) -> &Fit {
    rep.fit.as_ref().unwrap()
}

#[test]
fn beta_sharpness_small_lambda_construction() {
    let boundary = probe_beta_sharpness(&params(2, 1, 0.5, 0.25), &DEFAULT_EPSILONS).unwrap();
    assert_eq!(boundary.verdict, Verdict::Diverges);
    assert_eq!(fit(&boundary).kind, FitKind::Logarithmic);
    assert!(fit(&boundary).r_squared >= 0.99);

    let above = probe_beta_sharpness(&params(2, 1, 0.5, 0.3), &DEFAULT_EPSILONS).unwrap();
    assert_eq!(above.verdict, Verdict::Diverges);
    assert!((fit(&above).exponent - 0.2).abs() <= 0.05 * 0.2);

    let planar = probe_beta_sharpness(&params(3, 1, 1.0, 0.3), &DEFAULT_EPSILONS).unwrap();
    assert_eq!(planar.verdict, Verdict::Diverges);
}

#[test]
fn beta_sharpness_large_lambda_construction() {
    // bound n - λ - k/r = 0.05
    let boundary = probe_beta_sharpness(&params(2, 1, 1.2, 0.05), &DEFAULT_EPSILONS).unwrap();
    assert_eq!(boundary.verdict, Verdict::Diverges);
    assert_eq!(fit(&boundary).kind, FitKind::Logarithmic);
    let above = probe_beta_sharpness(&params(2, 1, 1.2, 0.1), &DEFAULT_EPSILONS).unwrap();
    assert!((fit(&above).exponent - 0.2).abs() <= 0.05 * 0.2);
}

#[test]
fn lambda_range_probe() {
    let log = probe_lambda_range(&params(2, 1, 1.25, 0.0), &DEFAULT_EPSILONS).unwrap();
    assert_eq!(log.verdict, Verdict::Diverges);
    assert_eq!(fit(&log).kind, FitKind::Logarithmic);
    let power = probe_lambda_range(&params(2, 1, 1.35, 0.0), &DEFAULT_EPSILONS).unwrap();
    assert!((fit(&power).exponent - 0.4).abs() <= 0.05 * 0.4);
    assert!(matches!(probe_lambda_range(&params(2, 1, 1.0, 0.0), &DEFAULT_EPSILONS), Err(Error::Precondition(_))));
    assert!(probe_lambda_range(&params(2, 1, 1.3, 0.1), &DEFAULT_EPSILONS).is_err());
}

#[test]
fn probes_reject_the_valid_region() {
    assert!(matches!(probe_beta_sharpness(&set_a(), &DEFAULT_EPSILONS), Err(Error::Precondition(_))));
    assert!(probe_beta_sharpness(&params(1, 0, 0.5, 0.0), &DEFAULT_EPSILONS).is_err());
}

#[test]
fn norm_equivalence_cases() {
    let g = Arc::new(RadialGrid::log(1, 1e-3, 1e2, 32, true).unwrap());
    let zero = RadialFunction::zeros(g.clone());
    let rep = norm_equivalence(&zero, &set_a()).unwrap();
    assert_eq!(rep.verdict, Verdict::Holds);
    assert_eq!(rep.details["w"], 0.0);

    let h = g.sample(|x| if x < 1.0 { 1.0 } else { 0.0 });
    let rep = norm_equivalence(&h, &set_a()).unwrap();
    assert_eq!(rep.verdict, Verdict::Holds);
    assert!((rep.details["constant"].as_f64().unwrap() - 1_229_312.0).abs() < 1e-6);
    assert_eq!(rep.observations.len(), 3);

    let planar = Arc::new(RadialGrid::log(2, 1e-3, 1e2, 16, true).unwrap());
    assert!(norm_equivalence(&planar.sample(|_| 1.0), &set_a()).is_err());
    assert!(norm_equivalence(&h, &params(2, 1, 0.7, 0.3)).is_err());
}

#[test]
fn adams_ratio_is_homogeneous_and_stable() {
    let (coarse, fine) = (operator(set_a(), 24), operator(set_a(), 48));
    for tf in TestFunction::FAMILY {
        let f = tf.sample(coarse.input_grid());
        let base = adams_ratio(&coarse, &f).unwrap();
        for c in [1e-3, 0.5, 7.0, 1e4] {
            let mut cf = f.clone();
            whls::grid::CellFunction::scale(&mut cf, c);
            let v = adams_ratio(&coarse, &cf).unwrap();
            assert!((v - base).abs() <= 1e-10 * base, "{} c={c}: {v} vs {base}", tf.name());
        }
    }
    let rep = adams_bound_check(&TestFunction::FAMILY, &coarse, &fine).unwrap();
    assert_eq!(rep.verdict, Verdict::Holds);
    assert_eq!(rep.observations.len(), 6);
    assert!(adams_bound_check(&[], &coarse, &fine).is_err());
    let zero = RadialFunction::zeros(coarse.input_grid().clone());
    assert!(matches!(adams_ratio(&coarse, &zero), Err(Error::ZeroFunction)));
}

#[test]
fn weighted_probe_requires_alpha() {
    let a = set_a();
    let (c, f) = (operator(a, 16), operator(a, 32));
    assert!(sw_probe(&TestFunction::FAMILY, &c, &f).is_err());
    let sw = params(2, 1, 0.7, -0.05).with_alpha(0.1);
    let (c, f) = (operator(sw, 24), operator(sw, 48));
    let rep = sw_probe(&TestFunction::FAMILY, &c, &f).unwrap();
    assert_eq!(rep.verdict, Verdict::Holds);
    assert!(sw_probe(&TestFunction::FAMILY, &operator(a, 16), &f).is_err());
}

#[test]
fn dyadic_lemma_examples_and_errors() {
    let g = Arc::new(RadialGrid::from_edges(1, vec![1.0, 2.0, 4.0]).unwrap());
    let ind = RadialFunction::new(g.clone(), vec![1.0, 1.0]).unwrap();
    let rep = dyadic_lemma_check(&ind, 0.5, 2.0).unwrap();
    assert_eq!(rep.details["lhs"], 1.0);
    assert!((rep.details["rhs"].as_f64().unwrap() - 64.0).abs() < 1e-12);
    let zero_cell = Arc::new(RadialGrid::from_edges(1, vec![0.0, 1.0, 2.0]).unwrap());
    assert!(dyadic_lemma_check(&RadialFunction::new(zero_cell, vec![1.0, 1.0]).unwrap(), 0.5, 2.0).is_err());
    assert!(dyadic_lemma_check(&ind, 0.0, 2.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn dyadic_lemma_holds_for_monotone_steps(
        increments in prop::collection::vec(0.0f64..3.0, 1..30),
        gamma in 0.05f64..2.0,
        tau in 1.0f64..6.0,
    ) {
        let m = increments.len();
        let edges: Vec<f64> = (0..=m).map(|i| 0.01 * 1.5f64.powi(i as i32)).collect();
        let mut acc = 0.0;
        let values: Vec<f64> = increments.iter().map(|d| { acc += d; acc }).collect();
        let h = RadialFunction::new(Arc::new(RadialGrid::from_edges(1, edges).unwrap()), values).unwrap();
        let rep = dyadic_lemma_check(&h, gamma, tau).unwrap();
        prop_assert_eq!(rep.verdict, Verdict::Holds);
    }
}
