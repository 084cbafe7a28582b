//! Dense complex matrix helpers shared by the state and channel code.

use nalgebra::DMatrix;
use num_complex::Complex;

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn identity(d: usize) -> CMatrix {
    CMatrix::identity(d, d)
}

pub fn hermitize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

/// Largest entrywise deviation from Hermiticity.
pub fn hermiticity_error(m: &CMatrix) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn trace(m: &CMatrix) -> C64 {
    m.diagonal().iter().sum()
}

/// Eigen-decomposition of the Hermitian part of `m`.
pub fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    if m.nrows() == 1 {
        return (vec![m[(0, 0)].re], identity(1));
    }
    let eig = hermitize(m).symmetric_eigen();
    (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
}

pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    if m.nrows() == 1 {
        return vec![m[(0, 0)].re];
    }
    hermitize(m).symmetric_eigenvalues().iter().copied().collect()
}

/// Sum of |eigenvalues| of the Hermitian part.
pub fn trace_norm_hermitian(m: &CMatrix) -> f64 {
    hermitian_eigenvalues(m).iter().map(|l| l.abs()).sum()
}

/// Rebuild `V diag(f(λ)) V†`.
pub fn spectral_map(vals: &[f64], vecs: &CMatrix, f: impl Fn(f64) -> f64) -> CMatrix {
    let n = vals.len();
    let mut scaled = vecs.clone();
    for (j, &l) in vals.iter().enumerate() {
        let s = c(f(l));
        for i in 0..n {
            scaled[(i, j)] *= s;
        }
    }
    &scaled * vecs.adjoint()
}

/// Positive part of a Hermitian matrix.
pub fn positive_part(m: &CMatrix) -> CMatrix {
    let (vals, vecs) = hermitian_eigen(m);
    spectral_map(&vals, &vecs, |l| l.max(0.0))
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Column vector `|i⟩` of dimension `d`.
pub fn basis_vector(d: usize, i: usize) -> CMatrix {
    let mut v = CMatrix::zeros(d, 1);
    v[(i, 0)] = ONE;
    v
}

/// Multi-index tables: `table[a][b]` is the flat index of the composite whose
/// `slots` pick components from `a` (over `dims_a`) or `b` (over `dims_b`).
#[derive(Debug, Clone, Copy)]
pub enum Slot {
    A(usize),
    B(usize),
}

pub fn index_table(slots: &[Slot], full_dims: &[usize], dims_a: &[usize], dims_b: &[usize]) -> Vec<Vec<usize>> {
    let na: usize = dims_a.iter().product();
    let nb: usize = dims_b.iter().product();
    let mut table = vec![vec![0usize; nb]; na];
    let mut ma = vec![0usize; dims_a.len()];
    for (a, row) in table.iter_mut().enumerate() {
        unflatten_into(a, dims_a, &mut ma);
        let mut mb = vec![0usize; dims_b.len()];
        for (b, cell) in row.iter_mut().enumerate() {
            unflatten_into(b, dims_b, &mut mb);
            let mut idx = 0usize;
            for (slot, &d) in slots.iter().zip(full_dims) {
                let v = match *slot {
                    Slot::A(k) => ma[k],
                    Slot::B(k) => mb[k],
                };
                idx = idx * d + v;
            }
            *cell = idx;
        }
    }
    table
}

fn unflatten_into(mut index: usize, dims: &[usize], out: &mut [usize]) {
    for (slot, &d) in out.iter_mut().zip(dims).rev() {
        *slot = index % d;
        index /= d;
    }
}

/// Trace out every subsystem whose position is not in `keep` (positions ascending).
pub fn partial_trace(m: &CMatrix, dims: &[usize], keep: &[usize]) -> CMatrix {
    let slots: Vec<Slot> = (0..dims.len())
        .map(|p| match keep.iter().position(|&k| k == p) {
            Some(i) => Slot::A(i),
            None => Slot::B(p - keep.iter().filter(|&&k| k < p).count()),
        })
        .collect();
    let keep_dims: Vec<usize> = keep.iter().map(|&k| dims[k]).collect();
    let traced_dims: Vec<usize> = (0..dims.len()).filter(|p| !keep.contains(p)).map(|p| dims[p]).collect();
    let table = index_table(&slots, dims, &keep_dims, &traced_dims);
    let dk: usize = keep_dims.iter().product();
    let dt: usize = traced_dims.iter().product();
    let mut out = CMatrix::zeros(dk, dk);
    for a in 0..dk {
        for b in 0..dk {
            let mut acc = ZERO;
            for t in 0..dt {
                acc += m[(table[a][t], table[b][t])];
            }
            out[(a, b)] = acc;
        }
    }
    out
}

/// Permutation operator taking subsystems ordered by `dims` into the order `perm`,
/// i.e. new subsystem `i` is old subsystem `perm[i]`.
pub fn permutation_matrix(dims: &[usize], perm: &[usize]) -> CMatrix {
    let d: usize = dims.iter().product();
    let new_dims: Vec<usize> = perm.iter().map(|&p| dims[p]).collect();
    let mut out = CMatrix::zeros(d, d);
    let mut old = vec![0usize; dims.len()];
    for i in 0..d {
        unflatten_into(i, dims, &mut old);
        let mut j = 0usize;
        for (k, &p) in perm.iter().enumerate() {
            j = j * new_dims[k] + old[p];
        }
        out[(j, i)] = ONE;
    }
    out
}

/// Conjugation `P M P†` by a subsystem permutation, without forming `P`.
pub fn permute_subsystems(m: &CMatrix, dims: &[usize], perm: &[usize]) -> CMatrix {
    let d: usize = dims.iter().product();
    let new_dims: Vec<usize> = perm.iter().map(|&p| dims[p]).collect();
    let mut map = vec![0usize; d];
    let mut old = vec![0usize; dims.len()];
    for (i, slot) in map.iter_mut().enumerate() {
        unflatten_into(i, dims, &mut old);
        let mut j = 0usize;
        for (k, &p) in perm.iter().enumerate() {
            j = j * new_dims[k] + old[p];
        }
        *slot = j;
    }
    let mut out = CMatrix::zeros(d, d);
    for i in 0..d {
        for k in 0..d {
            out[(map[i], map[k])] = m[(i, k)];
        }
    }
    out
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn is_exact_zero(m: &CMatrix) -> bool {
    m.iter().all(|z| z.re == 0.0 && z.im == 0.0)
}
