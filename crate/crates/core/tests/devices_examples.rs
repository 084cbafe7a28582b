use std::collections::BTreeMap;

use devcert::devices::{
    in_robust_set, instance_channel, sample_cert_observable, AttackSpec, DeviceModel, Observation, ParameterVector,
    RobustSet,
};
use devcert::protocol::{audit_epsilon, eve_guessing_probability, AuditOptions};
use devcert::qstate::linalg::{c, CMatrix};
use devcert::qstate::{trace_distance, DensityOperator, Layout};

fn count(o: Observation) -> (u64, u64) {
    match o {
        Observation::Count { successes, trials } => (successes, trials),
        other => panic!("expected counts, got {other:?}"),
    }
}

#[test]
fn robust_set_examples() {
    let s = RobustSet::componentwise(&[("dark", 0.0, 0.02)]).unwrap();
    let mu = |v| ParameterVector::from_pairs(&[("dark", v)]).unwrap();
    assert!(in_robust_set(&mu(0.01), &s).unwrap());
    assert!(!in_robust_set(&mu(0.03), &s).unwrap());
    assert!(in_robust_set(&mu(0.02), &s).unwrap());
    assert!(RobustSet::componentwise(&[("dark", 0.1, 0.0)]).is_err());
}

#[test]
fn phase_randomized_source_is_secure() {
    let m = DeviceModel::phase_coherent_source(0.0, 1).unwrap();
    let inst = instance_channel(&m, &AttackSpec::None, 1, 1).unwrap();
    let a = audit_epsilon(&inst, &AuditOptions::default()).unwrap();
    assert!(a.upper < 1e-9 && a.lower < 1e-12);
}

#[test]
fn coherent_source_at_high_loss_leaks_the_key() {
    let m = DeviceModel::phase_coherent_source(1.0, 1).unwrap();
    let inst = instance_channel(&m, &AttackSpec::HighLossUsd, 1, 1).unwrap();
    let out = inst.channel.apply(&DensityOperator::maximally_mixed(Layout::empty())).unwrap();
    assert!((eve_guessing_probability(&out, "KA1", &["E1"]).unwrap() - 1.0).abs() < 1e-9);
    // Oracle: ½ Σ_k |k k⟩⟨k k| ⊗ |k⟩⟨k| with Eve's register of dimension 3.
    let mut blocks = BTreeMap::new();
    for k in 0..2 {
        let v = inst.keys.value(1, k);
        let mut e = CMatrix::zeros(3, 3);
        e[(k, k)] = c(0.5);
        blocks.insert(vec![v, v], e);
    }
    let oracle = DensityOperator::from_blocks(out.layout().clone(), blocks).unwrap();
    assert!(trace_distance(&out, &oracle).unwrap() < 1e-12);
}

#[test]
fn degrading_dark_rate() {
    let m = DeviceModel::degrading_detector(0.01, 1.0, 1).unwrap();
    let oracle = 0.01 + 3.0 * 1.0 * 1e-3;
    assert!((m.dark_rate(3).unwrap() - oracle).abs() < 1e-15);
    assert!((m.dark_rate(3).unwrap() - 0.013).abs() < 1e-15);
}

#[test]
fn dark_count_sampling() {
    let zero = DeviceModel::iid_detector(0.0, 0).unwrap();
    let one = DeviceModel::iid_detector(1.0, 0).unwrap();
    for seed in 0..5 {
        assert_eq!(count(sample_cert_observable(&zero, "dark", 500, seed).unwrap()), (0, 500));
        assert_eq!(count(sample_cert_observable(&one, "dark", 500, seed).unwrap()), (500, 500));
    }
    let m = DeviceModel::iid_detector(0.1, 0).unwrap();
    // Binomial standard deviation sqrt(0.09/10⁵) ≈ 9.5e-4, so ±0.005 is over 5σ.
    for seed in 0..20 {
        let (k, n) = count(sample_cert_observable(&m, "dark", 100_000, seed).unwrap());
        let rate = k as f64 / n as f64;
        assert!((rate - 0.1).abs() <= 0.005, "seed {seed}: {rate}");
    }
    assert_eq!(
        sample_cert_observable(&m, "dark", 1000, 42).unwrap(),
        sample_cert_observable(&m, "dark", 1000, 42).unwrap()
    );
}

#[test]
fn bounded_mean_observable_stays_in_range() {
    let m = DeviceModel::degrading_detector(0.01, 2.0, 0).unwrap();
    for seed in 0..10 {
        match sample_cert_observable(&m, "temp", 200, seed).unwrap() {
            Observation::Mean { mean, low, high, trials } => {
                assert_eq!(trials, 200);
                assert!(low <= mean && mean <= high);
                assert!((mean - 2.0).abs() < 0.2);
            }
            other => panic!("{other:?}"),
        }
    }
}

#[test]
fn out_of_range_parameters_rejected() {
    assert!(DeviceModel::iid_detector(1.5, 0).is_err());
    assert!(DeviceModel::phase_coherent_source(-0.1, 0).is_err());
    assert!(DeviceModel::degrading_detector(0.01, 50.0, 0).is_err());
    let m = DeviceModel::iid_detector(0.1, 3).unwrap();
    assert!(instance_channel(&m, &AttackSpec::None, 1, 2).is_err());
    assert!(instance_channel(&m, &AttackSpec::KeyCopy { strength: 2.0 }, 1, 4).is_err());
}
