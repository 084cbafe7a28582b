use std::collections::BTreeMap;

use devcert::certify::{ApprovalRule, CertificationPlan, Estimator, Side};
use devcert::compose::random::random_scenario;
use devcert::compose::{
    approval_state, build_counterexample, null_channel, otp_leakage_channel, proof_step_audit, run_conditional,
    run_sequence, verify_adaptive_bound, verify_main_bound, ComposeError, InitialState, Scenario, CERT_REGISTER,
};
use devcert::devices::{AttackSpec, DeviceModel, RobustSet};
use devcert::protocol::{eve_guessing_probability, KeyLayout};
use devcert::qstate::{trace_distance, DensityOperator, KrausChannel, Layout, Register};
use devcert::suite::{adaptive_fixtures, single_region_fixture, single_region_reference, AdaptiveKind};
use proptest::prelude::*;

fn dark_set() -> RobustSet {
    RobustSet::componentwise(&[("dark", 0.0, 0.05)]).unwrap()
}

fn detector_scenario(dark: f64, strength: f64, length: usize, n: usize, p: f64) -> Scenario {
    Scenario::from_model(
        DeviceModel::iid_detector(dark, length).unwrap(),
        AttackSpec::KeyCopy { strength },
        dark_set(),
        0.05,
        InitialState::Joint(approval_state(p).unwrap()),
        n,
        length,
    )
    .unwrap()
}

#[test]
fn counterexample_family() {
    for length in 1..=4 {
        let s = build_counterexample(length, 0.05, 7).unwrap();
        let r = verify_main_bound(&s).unwrap();
        let exact = 1.0 - 0.5f64.powi(length as i32);
        assert!((r.conditional_distance - exact).abs() < 1e-9, "{length}: {}", r.conditional_distance);
        assert!((r.lhs - 0.05 * exact).abs() < 1e-9);
        assert!(r.lhs <= r.eps_cert);
        assert!(r.holds_sum && r.holds_max);
        let end = run_sequence(&s).unwrap();
        let (_, approved) = end.real.condition(CERT_REGISTER, 1).unwrap();
        let guess = eve_guessing_probability(&approved, "KA1", &["E1"]).unwrap();
        assert!((guess - 1.0).abs() < 1e-9);
    }
    assert!(build_counterexample(2, 0.0, 1).is_err());
    assert!(build_counterexample(9, 0.5, 1).is_err());
}

#[test]
fn never_approved_means_identical_end_states() {
    let s = detector_scenario(0.01, 0.7, 1, 2, 0.0);
    let end = run_sequence(&s).unwrap();
    assert!(trace_distance(&end.real, &end.ideal).unwrap() < 1e-15);
    let r = verify_main_bound(&s).unwrap();
    assert_eq!(r.lhs, 0.0);
    assert_eq!(r.conditional_distance, 0.0);
}

#[test]
fn ideal_instances_give_zero() {
    let s = detector_scenario(0.0, 0.0, 2, 2, 0.8);
    let r = verify_main_bound(&s).unwrap();
    assert!(r.lhs.abs() < 1e-12 && r.joint_distance.abs() < 1e-12);
    assert!(r.eps_qkd.iter().all(|e| e.abs() < 1e-9));
}

/// Joint distribution of named classical registers, built independently of the library.
type Dist = Vec<(BTreeMap<&'static str, usize>, f64)>;

/// Oracle for two iid detector instances with one-bit keys, Eve copying each key with
/// probability `s` and a one-time pad of the bit 1 with the first key in between.
fn otp_oracle(dark: f64, s: f64, p: f64, ideal: bool) -> Dist {
    let flip = dark / 2.0;
    let blank = 2;
    let mut out: Dist = vec![(
        ["F", "KA1", "KB1", "E1", "C1", "KA2", "KB2", "E2"].into_iter().map(|r| (r, 0)).collect(),
        1.0 - p,
    )];
    // (alice, bob, eve, weight) for one instance.
    let mut instance = Vec::new();
    for k in 0..2usize {
        for kb in 0..2usize {
            let pb = if k == kb { 1.0 - flip } else { flip };
            for (e, pe) in [(k, s), (blank, 1.0 - s)] {
                instance.push((k, kb, e, 0.5 * pb * pe));
            }
        }
    }
    let per_instance: Vec<(usize, usize, usize, f64)> = if ideal {
        // Keys replaced by a fresh shared bit; Eve keeps her marginal.
        let mut eve = BTreeMap::new();
        for &(_, _, e, w) in &instance {
            *eve.entry(e).or_insert(0.0) += w;
        }
        (0..2).flat_map(|k| eve.iter().map(move |(&e, &w)| (k, k, e, 0.5 * w))).collect()
    } else {
        instance
    };
    for &(a1, b1, e1, w1) in &per_instance {
        for &(a2, b2, e2, w2) in &per_instance {
            let regs = [
                ("F", 1),
                ("KA1", 1 + a1),
                ("KB1", 1 + b1),
                ("E1", e1),
                ("C1", a1 ^ 1),
                ("KA2", 1 + a2),
                ("KB2", 1 + b2),
                ("E2", e2),
            ];
            out.push((regs.into_iter().collect(), p * w1 * w2));
        }
    }
    out
}

fn oracle_distance(a: &Dist, b: &Dist) -> f64 {
    let mut diff: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    for (m, w) in a {
        *diff.entry(m.values().copied().collect()).or_insert(0.0) += w;
    }
    for (m, w) in b {
        *diff.entry(m.values().copied().collect()).or_insert(0.0) -= w;
    }
    0.5 * diff.values().map(|x| x.abs()).sum::<f64>()
}

fn matches_oracle(state: &DensityOperator, oracle: &Dist) -> f64 {
    let names: Vec<String> = state.layout().classical().map(|r| r.name.clone()).collect();
    assert_eq!(state.layout().quantum_dim(), 1);
    let mut expected: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    for (m, w) in oracle {
        let key: Vec<usize> = names.iter().map(|n| m[n.as_str()]).collect();
        *expected.entry(key).or_insert(0.0) += w;
    }
    let mut gap = 0.0;
    for (key, block) in state.blocks() {
        gap += (block[(0, 0)].re - expected.remove(key).unwrap_or(0.0)).abs();
    }
    gap + expected.values().map(|w| w.abs()).sum::<f64>()
}

#[test]
fn two_instance_otp_matches_classical_oracle() {
    let (dark, strength, p) = (0.02, 0.3, 0.6);
    let mut s = detector_scenario(dark, strength, 1, 2, p);
    s.inter_instance = vec![otp_leakage_channel(&s.instances[0].keys, "1", "C1").unwrap()];
    let end = run_sequence(&s).unwrap();
    let real = otp_oracle(dark, strength, p, false);
    let ideal = otp_oracle(dark, strength, p, true);
    assert!(matches_oracle(&end.real, &real) < 1e-12);
    assert!(matches_oracle(&end.ideal, &ideal) < 1e-12);

    let d = oracle_distance(&real, &ideal);
    assert!(d > 0.0);
    assert!((trace_distance(&end.real, &end.ideal).unwrap() - d).abs() < 1e-12);
    let r = verify_main_bound(&s).unwrap();
    assert!((r.lhs - d).abs() < 1e-12);
    assert!(r.holds_sum && r.holds_max);

    // In the ideal world the ciphertext says nothing about what Eve saw.
    let (_, approved) = end.ideal.condition(CERT_REGISTER, 1).unwrap();
    for c1 in 0..3 {
        for e1 in 0..3 {
            let joint: f64 = ideal
                .iter()
                .filter(|(m, _)| m["F"] == 1 && m["C1"] == c1 && m["E1"] == e1)
                .map(|(_, w)| w / p)
                .sum();
            let pc = approved.probability("C1", c1).unwrap();
            let pe = approved.probability("E1", e1).unwrap();
            assert!((joint - pc * pe).abs() < 1e-12, "C1={c1} E1={e1}");
        }
    }
}

#[test]
fn outside_robust_set_needs_low_approval() {
    let mk = |p| {
        Scenario::from_model(
            DeviceModel::iid_detector(0.2, 1).unwrap(),
            AttackSpec::KeyCopy { strength: 1.0 },
            dark_set(),
            0.05,
            InitialState::Joint(approval_state(p).unwrap()),
            1,
            1,
        )
        .unwrap()
    };
    assert!(matches!(verify_main_bound(&mk(0.3)), Err(ComposeError::Criterion1 { .. })));
    let ok = verify_main_bound(&mk(0.04)).unwrap();
    assert!(!ok.mu_in_robust_set && ok.lhs <= ok.eps_cert);
}

#[test]
fn stipulated_epsilon_below_audit_is_rejected() {
    let mut s = detector_scenario(0.01, 0.5, 1, 1, 0.5);
    s.instances[0].stipulated_epsilon = Some(0.0);
    assert!(matches!(verify_main_bound(&s), Err(ComposeError::Criterion2 { index: 1, .. })));
    s.instances[0].stipulated_epsilon = Some(0.6);
    let r = verify_main_bound(&s).unwrap();
    assert_eq!(r.eps_qkd, vec![0.6]);
}

#[test]
fn dimension_cap_is_reported() {
    let mut s = Scenario::from_model(
        DeviceModel::phase_coherent_source(0.02, 2).unwrap(),
        AttackSpec::HighLossUsd,
        RobustSet::componentwise(&[("coherence", 0.0, 0.1)]).unwrap(),
        0.05,
        InitialState::Joint(approval_state(0.5).unwrap()),
        2,
        2,
    )
    .unwrap();
    s.dimension_cap = 4;
    let err = verify_main_bound(&s).unwrap_err();
    assert!(err.is_dimension_cap(), "{err}");
}

#[test]
fn certified_initial_state_uses_analytic_probability() {
    let plan = CertificationPlan::uniform(&["dark"], Estimator::ClopperPearson { side: Side::Two }, 500, 0.05).unwrap();
    let empty = DensityOperator::maximally_mixed(Layout::empty());
    let s = Scenario::from_model(
        DeviceModel::iid_detector(0.02, 1).unwrap(),
        AttackSpec::KeyCopy { strength: 0.1 },
        dark_set(),
        0.05,
        InitialState::Certified {
            plan: plan.clone(),
            rule: ApprovalRule::Containment,
            rejected: empty.clone(),
            approved: empty,
            monte_carlo_trials: 0,
            seed: 3,
        },
        2,
        1,
    )
    .unwrap();
    let r = verify_main_bound(&s).unwrap();
    let exact = devcert::certify::approval_probability(&s.model, &s.robust_set, &plan, ApprovalRule::Containment)
        .unwrap()
        .unwrap();
    assert_eq!(r.approval.probability, exact);
    assert!((r.lhs - exact * r.conditional_distance).abs() < 1e-12);
}

#[test]
fn null_channel_keeps_shared_registers_and_blanks_new_ones() {
    let keys = KeyLayout::new(1);
    let otp = otp_leakage_channel(&keys, "1", "C").unwrap();
    let null = null_channel(&otp).unwrap();
    let input = keys.ideal_key_state(1).unwrap();
    let out = null.apply(&input).unwrap();
    assert!((out.probability("C", 0).unwrap() - 1.0).abs() < 1e-15);
    for v in 1..3 {
        assert!((out.probability("KA", v).unwrap() - 0.5).abs() < 1e-15);
    }
    let q = Layout::new(vec![Register::quantum("Q", 2)]).unwrap();
    let discard = KrausChannel::new(q.clone(), Layout::empty(), vec![devcert::qstate::linalg::CMatrix::identity(1, 2)]);
    assert!(discard.is_err() || null_channel(&discard.unwrap()).is_ok());
}

#[test]
fn single_region_adaptive_matches_fixed_protocol() {
    let f = single_region_fixture(11);
    let a = verify_adaptive_bound(&f.scenario).unwrap();
    let m = verify_main_bound(&single_region_reference(&f).unwrap()).unwrap();
    assert!((a.lhs - m.lhs).abs() < 1e-9);
    assert!((a.eps_total_sum - m.eps_total_sum).abs() < 1e-9);
    assert_eq!(a.regions, 1);
}

#[test]
fn adaptive_fixtures_hold() {
    let fixtures = adaptive_fixtures(5);
    assert!(fixtures.len() >= 20);
    for f in fixtures.iter().filter(|f| f.kind != AdaptiveKind::SingleRegion).step_by(3) {
        let r = verify_adaptive_bound(&f.scenario).unwrap();
        assert!(r.holds_sum && r.holds_max, "{}", f.label);
        if f.kind == AdaptiveKind::RejectAsZeroLength {
            assert!(r.lhs <= r.eps_cert + 1e-12, "{}: {}", f.label, r.lhs);
        }
        let total: f64 = r.outcomes.iter().map(|o| o.probability).sum();
        assert!((total - 1.0).abs() < 1e-9 || !r.enumerated, "{}", f.label);
    }
}

#[test]
fn proof_steps_hold_on_a_small_run() {
    let r = proof_step_audit(4, 30, 5).unwrap();
    assert_eq!(r.trials, 30);
    assert!(r.max_violation() <= 1e-9, "{r:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn random_scenarios_hold(seed in any::<u64>()) {
        let s = random_scenario(seed, 3).unwrap();
        let r = verify_main_bound(&s).unwrap();
        prop_assert!(r.holds_sum && r.holds_max);
        prop_assert!(r.eps_total_max <= r.eps_total_sum);
        prop_assert!((r.lhs - r.joint_distance).abs() < 1e-9);
    }

    #[test]
    fn conditional_run_matches_gated_run(p in 0.01f64..1.0, dark in 0.0f64..0.05, strength in 0.0f64..1.0) {
        let s = detector_scenario(dark, strength, 1, 2, p);
        let end = run_sequence(&s).unwrap();
        let (_, cond) = approval_state(1.0).unwrap().condition(CERT_REGISTER, 1).unwrap();
        let direct = run_conditional(&s, &cond).unwrap();
        let (_, real) = end.real.condition(CERT_REGISTER, 1).unwrap();
        let (_, ideal) = end.ideal.condition(CERT_REGISTER, 1).unwrap();
        prop_assert!(trace_distance(&real.partial_trace(&direct.real.layout().names()).unwrap(), &direct.real).unwrap() < 1e-12);
        prop_assert!(trace_distance(&ideal.partial_trace(&direct.ideal.layout().names()).unwrap(), &direct.ideal).unwrap() < 1e-12);
    }
}
