use devcert::certify::{
    approval_probability, certify, certify_with_rule, characterize, clopper_pearson, coverage_test, hoeffding_delta,
    hoeffding_interval, three_sigma, validate_criterion_1, validate_with_rule, ApprovalRule, CertificationPlan,
    Estimator, Side, GRID,
};
use devcert::devices::{DeviceModel, Observable, RobustSet};
use proptest::prelude::*;
use statrs::distribution::{Binomial, DiscreteCDF};

fn cp_plan(param: &str, trials: u64, eps: f64) -> CertificationPlan {
    CertificationPlan::uniform(&[param], Estimator::ClopperPearson { side: Side::Two }, trials, eps).unwrap()
}

fn dark_set(lo: f64, hi: f64) -> RobustSet {
    RobustSet::componentwise(&[("dark", lo, hi)]).unwrap()
}

#[test]
fn clopper_pearson_edge_cases() {
    let up = clopper_pearson(0, 100, 0.05, Side::Upper).unwrap();
    let oracle = 1.0 - 0.05f64.powf(1.0 / 100.0);
    assert_eq!(up.low, 0.0);
    assert!((up.high - oracle).abs() < 1e-9);
    assert!((up.high - 0.029513).abs() < 1e-6);
    let lo = clopper_pearson(100, 100, 0.05, Side::Lower).unwrap();
    assert!((lo.low - (1.0 - oracle)).abs() < 1e-9);
    assert_eq!(lo.high, 1.0);
    let mut prev = f64::INFINITY;
    for eps in [0.1, 0.3, 0.5, 0.7, 0.9, 0.99] {
        let h = clopper_pearson(0, 1, eps, Side::Upper).unwrap().high;
        assert!(h < prev);
        prev = h;
    }
    assert!(prev < 0.02);
}

#[test]
fn clopper_pearson_matches_binomial_tails() {
    // Oracle: at the two-sided bounds the binomial tails equal ε/2.
    for &(k, n, eps) in &[(3u64, 50u64, 0.05), (17, 200, 0.01), (1, 10, 0.1), (499, 1000, 0.05)] {
        let ci = clopper_pearson(k, n, eps, Side::Two).unwrap();
        let upper_tail = Binomial::new(ci.low, n).unwrap().sf(k - 1);
        let lower_tail = Binomial::new(ci.high, n).unwrap().cdf(k);
        assert!((upper_tail - eps / 2.0).abs() < 1e-7, "{k}/{n}: {upper_tail}");
        assert!((lower_tail - eps / 2.0).abs() < 1e-7, "{k}/{n}: {lower_tail}");
    }
}

#[test]
fn hoeffding_examples() {
    let oracle = ((2.0f64 * 1e6).ln() / 2000.0).sqrt();
    assert!((hoeffding_delta(1000, 1e-6, (0.0, 1.0)) - oracle).abs() < 1e-12);
    assert!((oracle - 0.085172).abs() < 1e-6);
    let near_one = hoeffding_delta(100, 1.0 - 1e-12, (0.0, 1.0));
    assert!((near_one - (2f64.ln() / 200.0).sqrt()).abs() < 1e-6);
    assert!(hoeffding_delta(10_000_000, 0.05, (0.0, 1.0)) < 1e-3);
    let ci = hoeffding_interval(0.02, 100, 0.05, (0.0, 1.0)).unwrap();
    assert_eq!(ci.low, 0.0);
    assert!((ci.high - (0.02 + hoeffding_delta(100, 0.05, (0.0, 1.0)))).abs() < 1e-15);
}

proptest! {
    #[test]
    fn interval_width_shrinks_with_level(k in 0u64..200, extra in 0u64..300, e1 in 0.001f64..0.5, e2 in 0.001f64..0.5) {
        let n = k + extra + 1;
        let (lo, hi) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
        let wide = clopper_pearson(k, n, lo, Side::Two).unwrap();
        let narrow = clopper_pearson(k, n, hi, Side::Two).unwrap();
        prop_assert!(narrow.width() <= wide.width() + 1e-12);
        prop_assert!(wide.low <= narrow.low + 1e-12 && narrow.high <= wide.high + 1e-12);
        prop_assert!(hoeffding_delta(n, hi, (0.0, 1.0)) <= hoeffding_delta(n, lo, (0.0, 1.0)));
    }

    #[test]
    fn hoeffding_width_shrinks_with_trials(n in 1u64..100_000, m in 1u64..100_000, eps in 0.001f64..0.5) {
        let (a, b) = if n < m { (n, m) } else { (m, n) };
        prop_assert!(hoeffding_delta(b, eps, (0.0, 1.0)) <= hoeffding_delta(a, eps, (0.0, 1.0)));
    }

    #[test]
    fn intervals_contain_the_estimate(k in 0u64..200, extra in 0u64..300, eps in 0.001f64..0.5) {
        let n = k + extra + 1;
        let ci = clopper_pearson(k, n, eps, Side::Two).unwrap();
        prop_assert!(ci.contains(k as f64 / n as f64));
        prop_assert!(0.0 <= ci.low && ci.high <= 1.0);
    }
}

#[test]
fn midpoint_model_is_approved() {
    let m = DeviceModel::iid_detector(0.025, 0).unwrap();
    let plan = cp_plan("dark", 20_000, 0.05);
    let s = dark_set(0.0, 0.05);
    let approved = (0..100).filter(|&seed| certify(&m, &s, &plan, seed).unwrap().approved).count();
    assert!(approved >= 99, "{approved}");
}

#[test]
fn model_far_outside_is_rejected() {
    let plan = cp_plan("dark", 2000, 0.05);
    let s = dark_set(0.0, 0.02);
    let width = clopper_pearson(40, 2000, 0.05, Side::Two).unwrap().width();
    let m = DeviceModel::iid_detector(0.02 + 5.0 * width, 0).unwrap();
    assert!((0..100).all(|seed| !certify(&m, &s, &plan, seed).unwrap().approved));
}

#[test]
fn single_point_robust_set_never_approves() {
    let m = DeviceModel::iid_detector(0.01, 0).unwrap();
    let s = dark_set(0.01, 0.01);
    for est in [Estimator::ClopperPearson { side: Side::Two }, Estimator::Hoeffding] {
        let plan = CertificationPlan::uniform(&["dark"], est, 1000, 0.05).unwrap();
        assert!((0..50).all(|seed| !certify(&m, &s, &plan, seed).unwrap().approved));
        assert_eq!(approval_probability(&m, &s, &plan, ApprovalRule::Containment).unwrap(), Some(0.0));
    }
}

#[test]
fn characterization_region_is_the_snapped_interval() {
    let m = DeviceModel::iid_detector(0.03, 0).unwrap();
    let plan = cp_plan("dark", 500, 0.05);
    let s = dark_set(0.0, 0.1);
    for seed in 0..10 {
        let region = characterize(&m, &plan, seed).unwrap();
        let outcome = certify(&m, &s, &plan, seed).unwrap();
        let ci = &outcome.intervals[0];
        let iv = region.interval("dark").unwrap();
        assert!(iv.low <= ci.low && ci.high <= iv.high);
        assert!(ci.low - iv.low < GRID + 1e-15 && iv.high - ci.high < GRID + 1e-15);
    }
}

#[test]
fn criterion_1_examples() {
    let s = dark_set(0.0, 0.05);
    let plan = cp_plan("dark", 1000, 0.05);
    let far = validate_criterion_1(&DeviceModel::iid_detector(0.2, 0).unwrap(), &s, &plan, 2000, 1).unwrap();
    assert_eq!(far.approvals, 0);
    assert!(far.bound_ok);
    let near = validate_criterion_1(&DeviceModel::iid_detector(0.051, 0).unwrap(), &s, &plan, 10_000, 2).unwrap();
    assert!(near.bound_ok);
    assert!(near.approval_rate <= 0.05 + three_sigma(0.05, 10_000));
    assert!(validate_criterion_1(&DeviceModel::iid_detector(0.2, 0).unwrap(), &s, &plan, 0, 1).is_err());
    assert!(validate_criterion_1(&DeviceModel::iid_detector(0.01, 0).unwrap(), &s, &plan, 100, 1).is_err());
}

#[test]
fn analytic_approval_matches_sampling() {
    let m = DeviceModel::iid_detector(0.045, 0).unwrap();
    let s = dark_set(0.0, 0.05);
    let plan = cp_plan("dark", 2000, 0.05);
    let exact = approval_probability(&m, &s, &plan, ApprovalRule::Containment).unwrap().unwrap();
    let trials = 4000u64;
    let hits = (0..trials).filter(|&seed| certify(&m, &s, &plan, seed).unwrap().approved).count();
    let rate = hits as f64 / trials as f64;
    let sigma = (exact * (1.0 - exact) / trials as f64).sqrt();
    assert!((rate - exact).abs() <= 4.0 * sigma + 1e-12, "{rate} vs {exact}");
}

#[test]
fn coverage_examples() {
    let cp = coverage_test(Estimator::ClopperPearson { side: Side::Two }, Observable::Bernoulli, 0.1, 200, 0.05, 10_000, 3).unwrap();
    assert!(cp.coverage >= 0.95 - three_sigma(0.05, 10_000), "{}", cp.coverage);
    let hf = coverage_test(Estimator::Hoeffding, Observable::Bernoulli, 0.5, 50, 0.01, 10_000, 4).unwrap();
    assert!(hf.coverage >= 0.99, "{}", hf.coverage);
    let point = Observable::BoundedMean { low: 0.0, high: 1.0, spread: 0.0 };
    let pm = coverage_test(Estimator::Hoeffding, point, 0.3, 20, 0.05, 500, 5).unwrap();
    assert_eq!(pm.coverage, 1.0);
    assert!(coverage_test(Estimator::Hoeffding, Observable::Bernoulli, 0.5, 50, 0.01, 0, 4).is_err());
}

#[test]
fn overlap_rule_admits_models_outside() {
    let s = dark_set(0.0, 0.05);
    let plan = cp_plan("dark", 1000, 0.05);
    let m = DeviceModel::iid_detector(0.055, 0).unwrap();
    let overlap = validate_with_rule(&m, &s, &plan, ApprovalRule::Overlap, 10_000, 6).unwrap();
    assert!(overlap.approval_rate > 0.05 + three_sigma(0.05, 10_000));
    let strict = validate_with_rule(&m, &s, &plan, ApprovalRule::Containment, 10_000, 6).unwrap();
    assert!(strict.bound_ok);
    let a = certify_with_rule(&m, &s, &plan, ApprovalRule::Overlap, 9).unwrap();
    let b = certify_with_rule(&m, &s, &plan, ApprovalRule::Overlap, 9).unwrap();
    assert_eq!(a, b);
}

#[test]
fn plan_validation() {
    let e = Estimator::ClopperPearson { side: Side::Two };
    assert!(CertificationPlan::uniform(&["dark"], e, 100, 0.0).is_err());
    assert!(CertificationPlan::uniform(&["dark"], e, 100, 1.0).is_err());
    assert!(CertificationPlan::uniform(&["dark"], e, 0, 0.05).is_err());
    assert!(CertificationPlan::uniform(&["dark", "dark"], e, 10, 0.05).is_err());
    let m = DeviceModel::iid_detector(0.01, 0).unwrap();
    let uncovered = RobustSet::componentwise(&[("dark", 0.0, 0.05), ("trojan", 0.0, 0.1)]).unwrap();
    assert!(certify(&m, &uncovered, &cp_plan("dark", 100, 0.05), 0).is_err());
}
