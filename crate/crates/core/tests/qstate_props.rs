use devcert::qstate::linalg::{c, CMatrix};
use devcert::qstate::random::{haar_unitary, random_channel, random_state};
use devcert::qstate::{
    diamond_norm_upper_bound, induced_norm_lower_bound, trace_distance, ChannelDifference, DensityOperator, KrausChannel,
    Layout, Register,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cq(classical: usize, quantum: usize) -> Layout {
    let mut regs = Vec::new();
    if classical > 1 {
        regs.push(Register::classical("X", classical));
    }
    regs.push(Register::quantum("A", quantum));
    Layout::new(regs).unwrap()
}

fn qubit() -> Layout {
    Layout::new(vec![Register::quantum("A", 2)]).unwrap()
}

fn pauli_x() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)])
}

fn layouts() -> impl Strategy<Value = (usize, usize)> {
    (1usize..=2, 1usize..=3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn channels_preserve_trace(seed in any::<u64>(), (cd, qd) in layouts(), ops in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = cq(cd, qd);
        let ch = random_channel(&l, &l, ops, &mut rng).unwrap();
        let out = ch.apply(&random_state(&l, &mut rng)).unwrap();
        prop_assert!((out.trace() - 1.0).abs() < 1e-10);
        out.validate().unwrap();
    }

    #[test]
    fn trace_distance_triangle(seed in any::<u64>(), (cd, qd) in layouts()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = cq(cd, qd);
        let (a, b, m) = (random_state(&l, &mut rng), random_state(&l, &mut rng), random_state(&l, &mut rng));
        let ab = trace_distance(&a, &b).unwrap();
        let am = trace_distance(&a, &m).unwrap();
        let mb = trace_distance(&m, &b).unwrap();
        prop_assert!(ab <= am + mb + 1e-9);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
    }

    #[test]
    fn channels_contract_trace_distance(seed in any::<u64>(), (cd, qd) in layouts(), dout in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = cq(cd, qd);
        let out = Layout::new(vec![Register::quantum("B", dout)]).unwrap();
        let ch = random_channel(&l, &out, rng.random_range(1..4), &mut rng).unwrap();
        let (a, b) = (random_state(&l, &mut rng), random_state(&l, &mut rng));
        let before = trace_distance(&a, &b).unwrap();
        let after = trace_distance(&ch.apply(&a).unwrap(), &ch.apply(&b).unwrap()).unwrap();
        prop_assert!(after <= before + 1e-9);
    }

    #[test]
    fn compose_is_associative(seed in any::<u64>(), qd in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = cq(1, qd);
        let chans: Vec<KrausChannel> = (0..3).map(|_| random_channel(&l, &l, 2, &mut rng).unwrap()).collect();
        let left = KrausChannel::compose(&KrausChannel::compose(&chans[0], &chans[1]).unwrap(), &chans[2]).unwrap();
        let right = KrausChannel::compose(&chans[0], &KrausChannel::compose(&chans[1], &chans[2]).unwrap()).unwrap();
        let rho = random_state(&l, &mut rng);
        let seq = chans.iter().fold(rho.clone(), |s, ch| ch.apply(&s).unwrap());
        prop_assert!(trace_distance(&left.apply(&rho).unwrap(), &right.apply(&rho).unwrap()).unwrap() < 1e-10);
        prop_assert!(trace_distance(&left.apply(&rho).unwrap(), &seq).unwrap() < 1e-10);
    }

    #[test]
    fn identity_is_neutral_for_compose(seed in any::<u64>(), (cd, qd) in layouts()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = cq(cd, qd);
        let ch = random_channel(&l, &l, 2, &mut rng).unwrap();
        let id = KrausChannel::identity(l.clone());
        let rho = random_state(&l, &mut rng);
        let direct = ch.apply(&rho).unwrap();
        for composed in [KrausChannel::compose(&id, &ch).unwrap(), KrausChannel::compose(&ch, &id).unwrap()] {
            prop_assert!(trace_distance(&composed.apply(&rho).unwrap(), &direct).unwrap() < 1e-10);
        }
    }

    #[test]
    fn tensor_then_trace_recovers_factor(seed in any::<u64>(), (cd, qd) in layouts()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_state(&cq(cd, qd), &mut rng);
        let b = random_state(&Layout::new(vec![Register::quantum("B", 2), Register::classical("Y", 3)]).unwrap(), &mut rng);
        let ab = a.tensor(&b).unwrap();
        let names: Vec<&str> = a.layout().names();
        let back = ab.partial_trace(&names).unwrap();
        prop_assert!(trace_distance(&back, &a).unwrap() < 1e-12);
    }

    #[test]
    fn sampled_lower_below_certified_upper(seed in any::<u64>(), qd in 1usize..=2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = cq(1, qd);
        let d = ChannelDifference::new(
            random_channel(&l, &l, 2, &mut rng).unwrap(),
            random_channel(&l, &l, 2, &mut rng).unwrap(),
        ).unwrap();
        let lower = induced_norm_lower_bound(&d, 40, seed).unwrap();
        let upper = diamond_norm_upper_bound(&d).unwrap();
        prop_assert!(lower <= upper + 1e-6);
    }
}

#[test]
fn bit_flip_lower_bound_approaches_one() {
    let d = ChannelDifference::new(
        KrausChannel::identity(qubit()),
        KrausChannel::unitary(qubit(), pauli_x()).unwrap(),
    )
    .unwrap();
    // Oracle: evaluation at |0⟩ gives distance 1 between |0⟩ and |1⟩.
    let at_zero = trace_distance(
        &DensityOperator::basis(qubit(), &[0]).unwrap(),
        &DensityOperator::basis(qubit(), &[1]).unwrap(),
    )
    .unwrap();
    assert!((at_zero - 1.0).abs() < 1e-12);
    let lower = induced_norm_lower_bound(&d, 1000, 17).unwrap();
    assert!((0.99..=1.0 + 1e-12).contains(&lower), "{lower}");
    assert_eq!(lower, induced_norm_lower_bound(&d, 1000, 17).unwrap());
    assert!((diamond_norm_upper_bound(&d).unwrap() - 1.0).abs() < 1e-6);
}

#[test]
fn identical_channels_have_zero_distance() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let l = cq(2, 2);
    let ch = random_channel(&l, &l, 2, &mut rng).unwrap();
    let d = ChannelDifference::new(ch.clone(), ch).unwrap();
    assert_eq!(induced_norm_lower_bound(&d, 50, 1).unwrap(), 0.0);
    assert!(diamond_norm_upper_bound(&d).unwrap() < 1e-9);
}

#[test]
fn unitary_product_matches_matrix_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (u, v) = (haar_unitary(2, &mut rng), haar_unitary(2, &mut rng));
    let composed = KrausChannel::compose(
        &KrausChannel::unitary(qubit(), u.clone()).unwrap(),
        &KrausChannel::unitary(qubit(), v.clone()).unwrap(),
    )
    .unwrap();
    let rho = random_state(&qubit(), &mut rng);
    let dense = rho.to_dense();
    let vu = &v * &u;
    let expected = &vu * dense * vu.adjoint();
    let got = composed.apply(&rho).unwrap().to_dense();
    assert!((got - expected).norm() < 1e-12);
}
