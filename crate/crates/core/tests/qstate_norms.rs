use devcert::qstate::linalg::{self, c, CMatrix, C64, ZERO};
use devcert::qstate::random;
use devcert::qstate::{
    diamond_norm_bounds, diamond_norm_upper_bound, induced_norm_lower_bound, trace_distance, ChannelDifference,
    DensityOperator, DiamondOptions, KrausChannel, Layout, Register,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn qudit(d: usize) -> Layout {
    Layout::new(vec![Register::quantum("A", d)]).unwrap()
}

fn unitary_difference(u: CMatrix, v: CMatrix) -> ChannelDifference {
    let d = u.nrows();
    ChannelDifference::new(
        KrausChannel::unitary(qudit(d), u).unwrap(),
        KrausChannel::unitary(qudit(d), v).unwrap(),
    )
    .unwrap()
}

/// Half diamond distance of two unitaries from the eigenphases of `U†V`: the origin's
/// distance to their convex hull is `cos(arc/2)` when they fit in an arc below π.
fn unitary_oracle(u: &CMatrix, v: &CMatrix) -> f64 {
    let w = u.adjoint() * v;
    let mut phases: Vec<f64> = w.eigenvalues_complex_unsorted().iter().map(|z| z.arg()).collect();
    phases.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = phases.len();
    let mut largest_gap = 0.0f64;
    for i in 0..n {
        let next = if i + 1 < n { phases[i + 1] } else { phases[0] + 2.0 * std::f64::consts::PI };
        largest_gap = largest_gap.max(next - phases[i]);
    }
    let arc = 2.0 * std::f64::consts::PI - largest_gap;
    if arc >= std::f64::consts::PI {
        1.0
    } else {
        (arc / 2.0).sin()
    }
}

trait ComplexEigen {
    fn eigenvalues_complex_unsorted(&self) -> Vec<C64>;
}

impl ComplexEigen for CMatrix {
    fn eigenvalues_complex_unsorted(&self) -> Vec<C64> {
        // W is normal: its eigenvalues are those of the Schur form's diagonal.
        self.clone().schur().eigenvalues().map(|v| v.iter().copied().collect()).unwrap_or_else(|| {
            let s = self.clone().schur();
            let (_, t) = s.unpack();
            t.diagonal().iter().copied().collect()
        })
    }
}

#[test]
fn trace_distance_examples() {
    let q = qudit(2);
    let zero = DensityOperator::basis(q.clone(), &[0]).unwrap();
    let one = DensityOperator::basis(q.clone(), &[1]).unwrap();
    let mixed = DensityOperator::maximally_mixed(q);
    assert_eq!(trace_distance(&zero, &zero).unwrap(), 0.0);
    assert!((trace_distance(&zero, &one).unwrap() - 1.0).abs() < 1e-15);
    // Eigenvalues of I/2 − |0⟩⟨0| are ±1/2.
    assert!((trace_distance(&mixed, &zero).unwrap() - 0.5).abs() < 1e-15);
}

#[test]
fn trace_distance_rejects_layout_mismatch() {
    let a = DensityOperator::maximally_mixed(qudit(2));
    let b = DensityOperator::maximally_mixed(Layout::new(vec![Register::quantum("B", 2)]).unwrap());
    assert!(trace_distance(&a, &b).is_err());
}

#[test]
fn identity_versus_bit_flip() {
    let x = CMatrix::from_row_slice(2, 2, &[ZERO, c(1.0), c(1.0), ZERO]);
    let diff = unitary_difference(linalg::identity(2), x);
    let upper = diamond_norm_upper_bound(&diff).unwrap();
    assert!((upper - 1.0).abs() < 1e-9, "{upper}");
    let lower = induced_norm_lower_bound(&diff, 1000, 11).unwrap();
    assert!(lower >= 0.99 && lower <= 1.0 + 1e-12, "{lower}");
    assert_eq!(lower, induced_norm_lower_bound(&diff, 1000, 11).unwrap());
}

#[test]
fn identity_versus_phase_matches_closed_form() {
    let v = CMatrix::from_row_slice(2, 2, &[c(1.0), ZERO, ZERO, C64::from_polar(1.0, 1.0)]);
    let diff = unitary_difference(linalg::identity(2), v);
    let b = diamond_norm_bounds(&diff, &DiamondOptions::default()).unwrap();
    assert!((b.upper - 0.5f64.sin()).abs() < 1e-9, "{b:?}");
}

#[test]
fn zero_difference() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ch = random::random_channel(&qudit(3), &qudit(2), 3, &mut rng).unwrap();
    let diff = ChannelDifference::new(ch.clone(), ch).unwrap();
    assert_eq!(diamond_norm_upper_bound(&diff).unwrap(), 0.0);
    assert_eq!(induced_norm_lower_bound(&diff, 10, 1).unwrap(), 0.0);
}

#[test]
fn random_unitaries_match_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for d in [2usize, 3, 4, 6, 8] {
        for _ in 0..4 {
            let u = random::haar_unitary(d, &mut rng);
            let v = random::haar_unitary(d, &mut rng);
            let expected = unitary_oracle(&u, &v);
            let b = diamond_norm_bounds(&unitary_difference(u, v), &DiamondOptions::default()).unwrap();
            assert!((b.upper - expected).abs() < 1e-6, "d={d} {b:?} vs {expected}");
        }
    }
}

#[test]
fn random_channels_sandwich() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for (din, dout) in [(2usize, 2usize), (2, 4), (3, 3), (4, 4), (4, 8), (8, 8)] {
        for _ in 0..3 {
            let a = random::random_channel(&qudit(din), &qudit(dout), 2, &mut rng).unwrap();
            let b = random::random_channel(&qudit(din), &qudit(dout), 3, &mut rng).unwrap();
            let diff = ChannelDifference::new(a, b).unwrap();
            let bounds = diamond_norm_bounds(&diff, &DiamondOptions::default()).unwrap();
            let sampled = induced_norm_lower_bound(&diff, 200, 3).unwrap();
            assert!(sampled <= bounds.upper + 1e-9, "{sampled} > {bounds:?}");
            assert!(bounds.gap() < 1e-7, "{din}x{dout} {bounds:?}");
        }
    }
}

#[test]
fn dimension_cap_enforced() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random::random_channel(&qudit(8), &qudit(16), 1, &mut rng).unwrap();
    let diff = ChannelDifference::new(a.clone(), a).unwrap();
    assert!(matches!(
        diamond_norm_upper_bound(&diff),
        Err(devcert::qstate::QStateError::DimensionCap { dim: 128, cap: 64 })
    ));
}
