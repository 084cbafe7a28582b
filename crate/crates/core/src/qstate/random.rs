//! Seeded random states, unitaries and channels for property checks.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;

use super::layout::{unflatten, Layout};
use super::linalg::{self, CMatrix, C64};
use super::state::DensityOperator;
use super::{KrausChannel, QStateError};

pub fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| {
        C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    })
}

/// Unit vector with a unitarily invariant distribution.
pub fn haar_pure_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMatrix {
    let v = gaussian_matrix(dim, 1, rng);
    let n = v.norm();
    v.unscale(n)
}

/// Haar-random unitary from the QR decomposition of a complex Ginibre matrix,
/// with the phases of R's diagonal absorbed.
pub fn haar_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMatrix {
    let qr = gaussian_matrix(dim, dim, rng).qr();
    let (mut q, r) = qr.unpack();
    for j in 0..dim {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
        for i in 0..dim {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// Ginibre-distributed density matrix `G G† / Tr(G G†)` of full rank.
pub fn ginibre_matrix<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMatrix {
    let g = gaussian_matrix(dim, dim, rng);
    let m = &g * g.adjoint();
    let t = linalg::trace(&m).re;
    linalg::hermitize(&m.unscale(t))
}

/// Random state on `layout`: a Ginibre block for every classical value, with the
/// block traces setting the classical distribution.
pub fn random_state<R: Rng + ?Sized>(layout: &Layout, rng: &mut R) -> DensityOperator {
    let dq = layout.quantum_dim();
    let cdims = layout.classical_dims();
    let mut blocks = BTreeMap::new();
    let mut total = 0.0;
    for ci in 0..layout.classical_dim() {
        let g = gaussian_matrix(dq, dq, rng);
        let m = linalg::hermitize(&(&g * g.adjoint()));
        total += linalg::trace(&m).re;
        blocks.insert(unflatten(ci, &cdims), m);
    }
    for b in blocks.values_mut() {
        *b = b.unscale(total);
    }
    DensityOperator::from_blocks_unchecked(layout.clone(), blocks)
}

/// Random channel with `ops` Kraus operators: `K_i = A_i S^{-1/2}` with Gaussian `A_i`
/// and `S = Σ A_i† A_i`, on the full input and output spaces. At least `⌈din/dout⌉`
/// operators are drawn so that `S` is invertible.
pub fn random_channel<R: Rng + ?Sized>(
    input: &Layout,
    output: &Layout,
    ops: usize,
    rng: &mut R,
) -> Result<KrausChannel, QStateError> {
    let (din, dout) = (input.dim(), output.dim());
    let a: Vec<CMatrix> = (0..ops.max(din.div_ceil(dout))).map(|_| gaussian_matrix(dout, din, rng)).collect();
    let mut s = CMatrix::zeros(din, din);
    for k in &a {
        s += k.adjoint() * k;
    }
    let (vals, vecs) = linalg::hermitian_eigen(&s);
    let inv_sqrt = linalg::spectral_map(&vals, &vecs, |l| 1.0 / l.sqrt());
    let kraus = a.iter().map(|k| k * &inv_sqrt).collect();
    KrausChannel::new(input.clone(), output.clone(), kraus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn haar_unitary_is_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u = haar_unitary(5, &mut rng);
        assert!(linalg::max_abs(&(u.adjoint() * &u - linalg::identity(5))) < 1e-12);
    }

    #[test]
    fn random_state_is_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layout = Layout::new(vec![
            super::super::Register::classical("K", 3),
            super::super::Register::quantum("Q", 4),
        ])
        .unwrap();
        random_state(&layout, &mut rng).validate().unwrap();
    }
}
