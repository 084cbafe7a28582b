//! Variable-length key registers, the ideal-key replacement channel and per-instance
//! security audits.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::qstate::linalg::{self, c, CMatrix};
use crate::qstate::{
    diamond_norm_bounds, induced_norm_lower_bound, Branch, ChannelDifference, DensityOperator, DiamondOptions,
    KrausChannel, Layout, QStateError, Register, TOLERANCE,
};

/// Encoding of a pair of variable-length key registers.
///
/// Each register is classical with one value per (length, key) pair; value
/// `2^ℓ − 1 + k` holds the ℓ-bit key `k`, so length 0 (abort) is value 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyLayout {
    pub max_length: usize,
    pub alice: String,
    pub bob: String,
}

/// Default largest key length.
pub const DEFAULT_MAX_LENGTH: usize = 4;

impl KeyLayout {
    pub fn new(max_length: usize) -> Self {
        Self::named(max_length, "KA", "KB")
    }

    pub fn named(max_length: usize, alice: impl Into<String>, bob: impl Into<String>) -> Self {
        Self {
            max_length,
            alice: alice.into(),
            bob: bob.into(),
        }
    }

    /// Registers `KA{j}`, `KB{j}` of instance `j`.
    pub fn for_instance(max_length: usize, j: usize) -> Self {
        Self::named(max_length, format!("KA{j}"), format!("KB{j}"))
    }

    /// `Σ_{ℓ ≤ ℓ_max} 2^ℓ`.
    pub fn dim(&self) -> usize {
        (1usize << (self.max_length + 1)) - 1
    }

    pub fn value(&self, length: usize, key: usize) -> usize {
        debug_assert!(length <= self.max_length && key < 1 << length);
        (1usize << length) - 1 + key
    }

    /// `(ℓ, k)` for a register value.
    pub fn decode(&self, value: usize) -> (usize, usize) {
        let length = (usize::BITS - 1 - (value + 1).leading_zeros()) as usize;
        (length, value + 1 - (1 << length))
    }

    pub fn alice_register(&self) -> Register {
        Register::classical(self.alice.clone(), self.dim())
    }

    pub fn bob_register(&self) -> Register {
        Register::classical(self.bob.clone(), self.dim())
    }

    pub fn layout(&self) -> Layout {
        Layout::new(vec![self.alice_register(), self.bob_register()]).expect("distinct key register names")
    }

    fn check_length(&self, length: usize) -> Result<(), ProtocolError> {
        if length > self.max_length {
            return Err(ProtocolError::KeyLength {
                length,
                max: self.max_length,
            });
        }
        Ok(())
    }

    /// `ω^ℓ`: uniform perfectly correlated ℓ-bit keys.
    pub fn ideal_key_state(&self, length: usize) -> Result<DensityOperator, ProtocolError> {
        self.check_length(length)?;
        let w = (0.5f64).powi(length as i32);
        let mut blocks = BTreeMap::new();
        for k in 0..1usize << length {
            let v = self.value(length, k);
            blocks.insert(vec![v, v], CMatrix::from_element(1, 1, c(w)));
        }
        Ok(DensityOperator::from_blocks(self.layout(), blocks)?)
    }

    /// The channel `𝒦`: reads the length tag on Alice's register and replaces both
    /// keys with `ω^ℓ`.
    pub fn key_replacement_channel(&self) -> KrausChannel {
        let d = self.dim();
        let mut branches = Vec::with_capacity(d * d);
        for va in 0..d {
            let (length, _) = self.decode(va);
            let amp = c((0.5f64).powi(length as i32).sqrt());
            let list: Vec<Branch> = (0..1usize << length)
                .map(|k| {
                    let v = self.value(length, k);
                    Branch {
                        output: vec![v, v],
                        ops: vec![CMatrix::from_element(1, 1, amp)],
                    }
                })
                .collect();
            for _ in 0..d {
                branches.push(list.clone());
            }
        }
        KrausChannel::from_branches(self.layout(), self.layout(), branches).expect("replacement channel is CPTP")
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("key length {length} exceeds the maximum {max}")]
    KeyLength { length: usize, max: usize },
    #[error("instance {index}: {reason}")]
    Instance { index: usize, reason: String },
    #[error("register {0} must be classical for key guessing")]
    NonClassicalKey(String),
    #[error("audit bracket inverted: lower {lower} above upper {upper}")]
    AuditInverted { lower: f64, upper: f64 },
    #[error(transparent)]
    State(#[from] QStateError),
}

/// One protocol instance: a channel producing the instance's key pair and Eve's register.
#[derive(Debug, Clone)]
pub struct InstanceChannel {
    pub index: usize,
    pub channel: KrausChannel,
    pub keys: KeyLayout,
    pub stipulated_epsilon: Option<f64>,
}

impl InstanceChannel {
    pub fn new(
        index: usize,
        channel: KrausChannel,
        keys: KeyLayout,
        stipulated_epsilon: Option<f64>,
    ) -> Result<Self, ProtocolError> {
        let out = channel.output_layout();
        for r in [keys.alice_register(), keys.bob_register()] {
            if out.get(&r.name) != Some(&r) {
                return Err(ProtocolError::Instance {
                    index,
                    reason: format!("output {out} lacks key register {r}"),
                });
            }
        }
        if let Some(e) = stipulated_epsilon {
            if !(0.0..=1.0).contains(&e) {
                return Err(ProtocolError::Instance {
                    index,
                    reason: format!("stipulated epsilon {e} outside [0, 1]"),
                });
            }
        }
        Ok(Self {
            index,
            channel,
            keys,
            stipulated_epsilon,
        })
    }

    /// `𝒦 ∘ E`.
    pub fn ideal_channel(&self) -> Result<KrausChannel, ProtocolError> {
        Ok(KrausChannel::compose(&self.channel, &self.keys.key_replacement_channel())?)
    }

    pub fn difference(&self) -> Result<ChannelDifference, ProtocolError> {
        Ok(ChannelDifference::new(self.channel.clone(), self.ideal_channel()?)?)
    }

    /// Largest length-tag disagreement weight between the two key registers over all
    /// classical inputs; zero for conformant instances.
    pub fn tag_mismatch(&self) -> f64 {
        let out = self.channel.output_layout();
        let cnames: Vec<&str> = out.classical().map(|r| r.name.as_str()).collect();
        let ia = cnames.iter().position(|n| *n == self.keys.alice).unwrap();
        let ib = cnames.iter().position(|n| *n == self.keys.bob).unwrap();
        let dq = self.channel.input_layout().quantum_dim();
        let mut worst = 0.0f64;
        for list in self.channel.branches() {
            let mut acc = CMatrix::zeros(dq, dq);
            for b in list {
                if self.keys.decode(b.output[ia]).0 != self.keys.decode(b.output[ib]).0 {
                    for k in &b.ops {
                        acc += k.adjoint() * k;
                    }
                }
            }
            worst = worst.max(linalg::hermitian_eigenvalues(&acc).into_iter().fold(0.0, f64::max));
        }
        worst
    }
}

/// Certified bracket on an instance's security parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonAudit {
    /// Best sampled output distance.
    pub lower: f64,
    /// Half diamond norm of `E − 𝒦∘E` (dual certificate).
    pub upper: f64,
    /// Primal value reached by the diamond-norm solver.
    pub solver_lower: f64,
}

/// Audit settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditOptions {
    pub samples: usize,
    pub seed: u64,
    pub diamond: DiamondOptions,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self {
            samples: 200,
            seed: 0,
            diamond: DiamondOptions::default(),
        }
    }
}

/// Sampled lower and certified upper values for `sup d(E[σ], 𝒦∘E[σ])` over
/// ancilla-extended inputs.
pub fn audit_epsilon(inst: &InstanceChannel, opts: &AuditOptions) -> Result<EpsilonAudit, ProtocolError> {
    let diff = inst.difference()?;
    let bounds = diamond_norm_bounds(&diff, &opts.diamond)?;
    let lower = induced_norm_lower_bound(&diff, opts.samples, opts.seed)?;
    if lower > bounds.upper + TOLERANCE {
        return Err(ProtocolError::AuditInverted {
            lower,
            upper: bounds.upper,
        });
    }
    Ok(EpsilonAudit {
        lower,
        upper: bounds.upper,
        solver_lower: bounds.lower,
    })
}

/// Optimal probability of guessing the classical register `key` from `eve`.
///
/// Exact for commuting hypotheses (including classical `eve`) and for two hypotheses;
/// otherwise the value of an iterated measurement, accurate to the reported dual gap.
pub fn eve_guessing_probability(state: &DensityOperator, key: &str, eve: &[&str]) -> Result<f64, ProtocolError> {
    let reg = state
        .layout()
        .get(key)
        .ok_or_else(|| QStateError::UnknownRegister(key.to_string()))?;
    if !reg.is_classical() {
        return Err(ProtocolError::NonClassicalKey(key.to_string()));
    }
    let mut keep = vec![key];
    keep.extend_from_slice(eve);
    let reduced = state.partial_trace(&keep)?.reorder(&keep)?;
    // Group by Eve's classical values; hypotheses are indexed by the key value.
    let mut groups: BTreeMap<Vec<usize>, Vec<CMatrix>> = BTreeMap::new();
    for (k, block) in reduced.blocks() {
        groups.entry(k[1..].to_vec()).or_default().push(block.clone());
    }
    Ok(groups.values().map(|hyps| discrimination(hyps).0).sum())
}

/// `max Σ_k Tr[M_k ρ_k]` over POVMs, with a certified upper value.
pub fn discrimination(hyps: &[CMatrix]) -> (f64, f64) {
    let d = hyps[0].nrows();
    if d == 1 {
        let v = hyps.iter().map(|h| h[(0, 0)].re).fold(0.0, f64::max);
        return (v, v);
    }
    if hyps.len() == 1 {
        let v = linalg::trace(&hyps[0]).re;
        return (v, v);
    }
    if hyps.len() == 2 {
        let v = 0.5 * (linalg::trace(&(&hyps[0] + &hyps[1])).re + linalg::trace_norm_hermitian(&(&hyps[0] - &hyps[1])));
        return (v, v);
    }
    let commuting = hyps.iter().enumerate().all(|(i, a)| {
        hyps[i + 1..]
            .iter()
            .all(|b| linalg::max_abs(&(a * b - b * a)) <= 1e-13)
    });
    if commuting {
        // A generic combination of commuting operators diagonalizes all of them.
        let mut mix = CMatrix::zeros(d, d);
        for (i, h) in hyps.iter().enumerate() {
            mix += h.scale(1.0 + (i as f64 + 1.0).sqrt() * std::f64::consts::E);
        }
        let (_, vecs) = linalg::hermitian_eigen(&mix);
        let mut total = 0.0;
        for col in 0..d {
            let v = vecs.column(col);
            let best = hyps
                .iter()
                .map(|h| (v.adjoint() * h * v)[(0, 0)].re)
                .fold(f64::NEG_INFINITY, f64::max);
            total += best;
        }
        return (total, total);
    }
    iterative_discrimination(hyps)
}

/// Fixed-point iteration `M_k ← S^{-1/2} M_k ρ_k M_k S^{-1/2}` with the dual point
/// `Y = herm(Σ_k ρ_k M_k)` lifted until `Y ≥ ρ_k`.
fn iterative_discrimination(hyps: &[CMatrix]) -> (f64, f64) {
    let d = hyps[0].nrows();
    let n = hyps.len();
    let mut povm: Vec<CMatrix> = vec![linalg::identity(d).scale(1.0 / n as f64); n];
    let (mut lower, mut upper) = (0.0f64, f64::INFINITY);
    for _ in 0..5000 {
        let value: f64 = hyps.iter().zip(&povm).map(|(h, m)| linalg::trace(&(h * m)).re).sum();
        lower = lower.max(value);
        let mut y = CMatrix::zeros(d, d);
        for (h, m) in hyps.iter().zip(&povm) {
            y += h * m;
        }
        let y = linalg::hermitize(&y);
        let lift = hyps
            .iter()
            .map(|h| linalg::hermitian_eigenvalues(&(h - &y)).into_iter().fold(0.0, f64::max))
            .fold(0.0, f64::max);
        upper = upper.min(linalg::trace(&y).re + d as f64 * lift);
        if upper - lower <= 1e-12 {
            break;
        }
        let terms: Vec<CMatrix> = hyps.iter().zip(&povm).map(|(h, m)| linalg::hermitize(&(m * h * m))).collect();
        let mut s = CMatrix::zeros(d, d);
        for t in &terms {
            s += t;
        }
        let (vals, vecs) = linalg::hermitian_eigen(&s);
        let inv_sqrt = linalg::spectral_map(&vals, &vecs, |l| if l > 1e-300 { 1.0 / l.sqrt() } else { 0.0 });
        let proj = linalg::spectral_map(&vals, &vecs, |l| if l > 1e-300 { 0.0 } else { 1.0 });
        povm = terms
            .iter()
            .map(|t| linalg::hermitize(&(&inv_sqrt * t * &inv_sqrt)))
            .collect();
        // Assign any unsupported subspace to the first outcome so the POVM stays complete.
        povm[0] += proj;
    }
    (lower, upper)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_encoding_roundtrip() {
        let keys = KeyLayout::new(4);
        assert_eq!(keys.dim(), 31);
        for v in 0..keys.dim() {
            let (l, k) = keys.decode(v);
            assert!(l <= 4 && k < 1 << l);
            assert_eq!(keys.value(l, k), v);
        }
        assert_eq!(keys.decode(0), (0, 0));
    }

    #[test]
    fn ideal_key_state_length_one() {
        let keys = KeyLayout::new(2);
        let w = keys.ideal_key_state(1).unwrap();
        assert_eq!(w.blocks().len(), 2);
        assert!((w.entry(&[1, 1], 0, 0).re - 0.5).abs() < 1e-15);
        assert!((w.entry(&[2, 2], 0, 0).re - 0.5).abs() < 1e-15);
        assert_eq!(w.entry(&[1, 2], 0, 0).re, 0.0);
        assert!(matches!(keys.ideal_key_state(3), Err(ProtocolError::KeyLength { .. })));
    }

    #[test]
    fn helstrom_for_two_pure_states() {
        let a = CMatrix::from_row_slice(2, 2, &[c(0.5), c(0.0), c(0.0), c(0.0)]);
        let b = CMatrix::from_row_slice(2, 2, &[c(0.25), c(0.25), c(0.25), c(0.25)]);
        let (v, _) = discrimination(&[a, b]);
        // Equal priors, overlap |⟨0|+⟩|² = 1/2.
        assert!((v - 0.5 * (1.0 + (1.0f64 - 0.5).sqrt())).abs() < 1e-12, "{v}");
    }

    #[test]
    fn iterative_matches_trine_value() {
        // Three symmetric qubit states at 120°, prior 1/3: optimal success 2/3.
        let trine: Vec<CMatrix> = (0..3)
            .map(|i| {
                let t = 2.0 * std::f64::consts::PI * i as f64 / 3.0;
                let v = CMatrix::from_column_slice(2, 1, &[c((t / 2.0).cos()), c((t / 2.0).sin())]);
                (&v * v.adjoint()).scale(1.0 / 3.0)
            })
            .collect();
        let (lower, upper) = iterative_discrimination(&trine);
        assert!(lower <= upper + 1e-12);
        assert!((lower - 2.0 / 3.0).abs() < 1e-9, "{lower} {upper}");
    }
}
