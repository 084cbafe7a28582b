use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::channel::ChannelDifference;
use super::linalg::{self, CMatrix};
use super::random;
use super::state::DensityOperator;
use super::{QStateError, DEFAULT_DIMENSION_CAP};

/// `½‖a − b‖₁`, from the eigenvalues of the Hermitian difference block by block.
///
/// The two states must hold the same registers; if their orders differ, both are
/// brought to name order first. The result does not depend on argument order.
pub fn trace_distance(a: &DensityOperator, b: &DensityOperator) -> Result<f64, QStateError> {
    if !a.layout().same_registers(b.layout()) {
        return Err(QStateError::Layout(format!(
            "trace distance between {} and {}",
            a.layout(),
            b.layout()
        )));
    }
    let (a, b) = if a.layout() == b.layout() {
        (a.clone(), b.clone())
    } else {
        let mut names = a.layout().names();
        names.sort_unstable();
        (a.reorder(&names)?, b.reorder(&names)?)
    };
    let zero = CMatrix::zeros(a.quantum_dim(), a.quantum_dim());
    let mut keys: Vec<&Vec<usize>> = a.blocks().keys().chain(b.blocks().keys()).collect();
    keys.sort_unstable();
    keys.dedup();
    let mut total = 0.0;
    for key in keys {
        let x = a.block(key).unwrap_or(&zero);
        let y = b.block(key).unwrap_or(&zero);
        // Fixed operand order per block keeps d(a, b) and d(b, a) bitwise equal.
        let diff = if lexicographic_le(x, y) { y - x } else { x - y };
        total += linalg::trace_norm_hermitian(&diff);
    }
    Ok(0.5 * total)
}

fn lexicographic_le(x: &CMatrix, y: &CMatrix) -> bool {
    for (p, q) in x.iter().zip(y.iter()) {
        match (p.re, p.im).partial_cmp(&(q.re, q.im)) {
            Some(std::cmp::Ordering::Less) => return true,
            Some(std::cmp::Ordering::Greater) => return false,
            _ => {}
        }
    }
    true
}

/// Largest output trace distance over `samples` random pure inputs.
///
/// Each sample draws a classical input value uniformly and a Haar-random pure state
/// on the quantum input together with an ancilla of the same dimension. Deterministic
/// for a fixed seed.
pub fn induced_norm_lower_bound(diff: &ChannelDifference, samples: usize, seed: u64) -> Result<f64, QStateError> {
    if samples == 0 {
        return Err(QStateError::InvalidChannel("samples must be positive".into()));
    }
    let input = diff.minuend().input_layout();
    let d = input.quantum_dim();
    let nc = input.classical_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0f64;
    for _ in 0..samples {
        let ci = rng.random_range(0..nc);
        let psi = random::haar_pure_vector(d * d, &mut rng);
        // Amplitudes as a d × d matrix: row = system index, column = ancilla index.
        let psi = CMatrix::from_fn(d, d, |i, a| psi[(i * d + a, 0)]);
        let outputs = |ch: &'_ super::KrausChannel| {
            let mut blocks: BTreeMap<Vec<usize>, CMatrix> = BTreeMap::new();
            for b in &ch.branches()[ci] {
                for k in &b.ops {
                    let out = k * &psi;
                    let v = CMatrix::from_column_slice(out.len(), 1, out.as_slice());
                    let term = &v * v.adjoint();
                    match blocks.get_mut(&b.output) {
                        Some(acc) => *acc += term,
                        None => {
                            blocks.insert(b.output.clone(), term);
                        }
                    }
                }
            }
            blocks
        };
        let mut blocks = outputs(diff.minuend());
        for (key, m) in outputs(diff.subtrahend()) {
            match blocks.get_mut(&key) {
                Some(acc) => *acc -= m,
                None => {
                    blocks.insert(key, -m);
                }
            }
        }
        let value: f64 = blocks.values().map(|m| 0.5 * linalg::trace_norm_hermitian(m)).sum();
        best = best.max(value);
    }
    Ok(best)
}

/// Settings for the completely bounded norm computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiamondOptions {
    /// Cap on `quantum_in × quantum_out`.
    pub dimension_cap: usize,
    pub max_iterations: usize,
    /// Stop once certified upper and lower values are this close.
    pub target_gap: f64,
    /// Report non-convergence if the final gap exceeds this.
    pub max_gap: f64,
}

impl Default for DiamondOptions {
    fn default() -> Self {
        Self {
            dimension_cap: DEFAULT_DIMENSION_CAP,
            max_iterations: 2_000,
            target_gap: 1e-10,
            max_gap: 1e-7,
        }
    }
}

/// Certified bracket on half the completely bounded trace norm of a channel difference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiamondBounds {
    /// Attained by an explicit input state.
    pub lower: f64,
    /// Value of an explicit dual-feasible point.
    pub upper: f64,
    pub iterations: usize,
}

impl DiamondBounds {
    pub fn gap(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Half the diamond norm of `diff`, as a certified upper value.
pub fn diamond_norm_upper_bound(diff: &ChannelDifference) -> Result<f64, QStateError> {
    Ok(diamond_norm_bounds(diff, &DiamondOptions::default())?.upper)
}

/// Solves `max_ρ Σ_c Tr[((√ρ ⊗ 1) J_c (√ρ ⊗ 1))₊]` over input density operators `ρ`,
/// for each classical input value, where `J_c` are the Choi blocks of the difference.
///
/// Every iterate gives a lower value, and `Z_c = (ρ^{-1/2} ⊗ 1) M_c₊ (ρ^{-1/2} ⊗ 1)`
/// with `M_c = (√ρ ⊗ 1) J_c (√ρ ⊗ 1)` satisfies `Z_c ≥ J_c`, `Z_c ≥ 0`, so
/// `λ_max(Σ_c Tr_out Z_c)` is an upper value. The primal is maximized by L-BFGS over
/// a factor `A` of `ρ`.
pub fn diamond_norm_bounds(diff: &ChannelDifference, opts: &DiamondOptions) -> Result<DiamondBounds, QStateError> {
    let din = diff.minuend().input_layout().quantum_dim();
    let dout = diff.minuend().output_layout().quantum_dim();
    if din * dout > opts.dimension_cap {
        return Err(QStateError::DimensionCap {
            dim: din * dout,
            cap: opts.dimension_cap,
        });
    }
    let mut total = DiamondBounds {
        lower: 0.0,
        upper: 0.0,
        iterations: 0,
    };
    for blocks in diff.choi_blocks() {
        let js: Vec<CMatrix> = blocks
            .into_values()
            .map(|j| linalg::hermitize(&j))
            .filter(|j| linalg::max_abs(j) > 0.0)
            .collect();
        let b = solve_block(&js, din, dout, opts)?;
        total.lower = total.lower.max(b.lower);
        total.upper = total.upper.max(b.upper);
        total.iterations = total.iterations.max(b.iterations);
    }
    Ok(total)
}

/// Value and ascent gradient of `f(A) = Σ_c Tr[((A† ⊗ 1) J_c (A ⊗ 1))₊] / Tr(A A†)`,
/// which equals the primal objective at `ρ = A A† / Tr(A A†)`. The gradient pairs with
/// perturbations `δA` through `Re Tr[g† δA]`.
fn value_and_gradient(js: &[CMatrix], a: &CMatrix, dout: usize) -> (f64, CMatrix) {
    let din = a.nrows();
    let t = a.norm_squared();
    let ak = linalg::kron(a, &linalg::identity(dout));
    let mut value = 0.0;
    let mut g = CMatrix::zeros(din, din);
    for j in js {
        let ja = j * &ak;
        let n = ak.adjoint() * &ja;
        let (vals, vecs) = linalg::hermitian_eigen(&n);
        value += vals.iter().filter(|&&l| l > 0.0).sum::<f64>();
        let positive = linalg::spectral_map(&vals, &vecs, |l| if l > 0.0 { 1.0 } else { 0.0 });
        g += linalg::partial_trace(&(ja * positive), &[din, dout], &[0]);
    }
    let value = value / t;
    let grad = (g.scale(2.0) - a.scale(2.0 * value)).unscale(t);
    (value, grad)
}

/// `λ_max(ρ^{-1/2} G ρ^{-1/2})` with `G = Σ_c Tr_out[((√ρ ⊗ 1) J_c (√ρ ⊗ 1))₊]`:
/// the dual value of `Z_c = (ρ^{-1/2} ⊗ 1) M_c₊ (ρ^{-1/2} ⊗ 1)`. Needs full-rank `ρ`.
fn dual_value(js: &[CMatrix], rho: &CMatrix, dout: usize) -> Option<f64> {
    let din = rho.nrows();
    let (vals, vecs) = linalg::hermitian_eigen(rho);
    if vals.iter().any(|&l| !(l > 0.0)) {
        return None;
    }
    let sqrt = linalg::spectral_map(&vals, &vecs, f64::sqrt);
    let inv_sqrt = linalg::spectral_map(&vals, &vecs, |l| 1.0 / l.sqrt());
    let s = linalg::kron(&sqrt, &linalg::identity(dout));
    let mut g = CMatrix::zeros(din, din);
    for j in js {
        let m = &s * j * &s;
        g += linalg::partial_trace(&linalg::positive_part(&m), &[din, dout], &[0]);
    }
    let x = linalg::hermitize(&(&inv_sqrt * g * &inv_sqrt));
    let eig = linalg::hermitian_eigenvalues(&x);
    if eig.iter().any(|l| !l.is_finite()) {
        return None;
    }
    Some(eig.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// Best dual value over a few full-rank perturbations of `A A†`.
fn dual_near(js: &[CMatrix], a: &CMatrix, dout: usize) -> Option<f64> {
    let din = a.nrows();
    let rho = (a * a.adjoint()).unscale(a.norm_squared());
    [0.0, 1e-12, 1e-10, 1e-8, 1e-6]
        .iter()
        .filter_map(|&delta| {
            let r = rho.scale(1.0 - delta) + linalg::identity(din).scale(delta / din as f64);
            dual_value(js, &linalg::hermitize(&r), dout)
        })
        .reduce(f64::min)
}

fn real_dot(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

const HISTORY: usize = 20;

fn solve_block(js: &[CMatrix], din: usize, dout: usize, opts: &DiamondOptions) -> Result<DiamondBounds, QStateError> {
    if js.is_empty() {
        return Ok(DiamondBounds {
            lower: 0.0,
            upper: 0.0,
            iterations: 0,
        });
    }
    // Z_c = (J_c)₊ is always dual feasible.
    let mut upper = {
        let mut acc = CMatrix::zeros(din, din);
        for j in js {
            acc += linalg::partial_trace(&linalg::positive_part(j), &[din, dout], &[0]);
        }
        largest_eigenvalue(&acc)
    };
    if din == 1 {
        let value: f64 = js.iter().map(|j| linalg::positive_part(j)[(0, 0)].re).sum();
        return Ok(DiamondBounds {
            lower: value.min(upper),
            upper,
            iterations: 0,
        });
    }

    // Limited-memory BFGS ascent on A, with ρ = A A† / Tr(A A†).
    let mut a = linalg::identity(din).unscale((din as f64).sqrt());
    let (mut value, mut grad) = value_and_gradient(js, &a, dout);
    let mut lower = value;
    if let Some(u) = dual_near(js, &a, dout) {
        upper = upper.min(u);
    }
    let mut history: std::collections::VecDeque<(CMatrix, CMatrix, f64)> = std::collections::VecDeque::new();
    let mut iterations = 0;
    while iterations < opts.max_iterations && upper - lower > opts.target_gap {
        iterations += 1;
        let mut dir = grad.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, r) in history.iter().rev() {
            let al = r * real_dot(s, &dir);
            dir -= y.scale(al);
            alphas.push(al);
        }
        dir = match history.back() {
            Some((s, y, _)) => dir.scale(real_dot(s, y) / real_dot(y, y)),
            None => dir.scale(0.1 / grad.norm().max(f64::MIN_POSITIVE)),
        };
        for ((s, y, r), al) in history.iter().zip(alphas.iter().rev()) {
            let b = r * real_dot(y, &dir);
            dir += s.scale(al - b);
        }
        if real_dot(&dir, &grad) <= 0.0 {
            history.clear();
            dir = grad.scale(0.1 / grad.norm().max(f64::MIN_POSITIVE));
        }
        let slope = real_dot(&dir, &grad);
        let mut step = 1.0;
        let mut moved = false;
        for _ in 0..50 {
            let trial = &a + dir.scale(step);
            let (tv, tg) = value_and_gradient(js, &trial, dout);
            if tv.is_finite() && tv >= value + 1e-4 * step * slope - 1e-15 {
                let s = &trial - &a;
                let y = &grad - &tg;
                let sy = real_dot(&s, &y);
                if sy > 0.0 {
                    history.push_back((s, y, 1.0 / sy));
                    if history.len() > HISTORY {
                        history.pop_front();
                    }
                }
                // The objective is scale invariant; renormalizing keeps A well conditioned
                // without disturbing the curvature pairs more than a rescaling would.
                let n = trial.norm();
                a = trial.unscale(n);
                (value, grad) = value_and_gradient(js, &a, dout);
                moved = true;
                break;
            }
            step *= 0.5;
        }
        lower = lower.max(value);
        if let Some(u) = dual_near(js, &a, dout) {
            upper = upper.min(u);
        }
        if !moved {
            break;
        }
    }
    if upper - lower > opts.max_gap {
        return Err(QStateError::NonConvergence { lower, upper, iterations });
    }
    Ok(DiamondBounds {
        lower: lower.min(upper),
        upper,
        iterations,
    })
}

fn largest_eigenvalue(m: &CMatrix) -> f64 {
    linalg::hermitian_eigenvalues(m).into_iter().fold(f64::NEG_INFINITY, f64::max)
}
