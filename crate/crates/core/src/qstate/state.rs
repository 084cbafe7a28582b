use std::collections::BTreeMap;

use super::layout::{flatten, unflatten, Layout, Register};
use super::linalg::{self, c, CMatrix, Slot, C64, ZERO};
use super::{QStateError, TOLERANCE};

/// A normalized cq-state: block diagonal over the joint classical value, dense on the
/// quantum registers.
///
/// Blocks are keyed by the tuple of classical values (classical registers in layout
/// order). Absent keys are zero blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    layout: Layout,
    blocks: BTreeMap<Vec<usize>, CMatrix>,
}

impl DensityOperator {
    /// Build without checking the state invariants. Exact-zero blocks are dropped.
    pub(crate) fn from_blocks_unchecked(layout: Layout, blocks: BTreeMap<Vec<usize>, CMatrix>) -> Self {
        let blocks = blocks.into_iter().filter(|(_, b)| !linalg::is_exact_zero(b)).collect();
        Self { layout, blocks }
    }

    pub fn from_blocks(layout: Layout, blocks: BTreeMap<Vec<usize>, CMatrix>) -> Result<Self, QStateError> {
        let cdims = layout.classical_dims();
        let dq = layout.quantum_dim();
        for (key, b) in &blocks {
            if key.len() != cdims.len() || key.iter().zip(&cdims).any(|(v, d)| v >= d) {
                return Err(QStateError::Layout(format!("classical value {key:?} outside {layout}")));
            }
            if b.nrows() != dq || b.ncols() != dq {
                return Err(QStateError::Layout(format!(
                    "block is {}x{}, quantum dimension is {dq}",
                    b.nrows(),
                    b.ncols()
                )));
            }
        }
        let s = Self::from_blocks_unchecked(layout, blocks);
        s.validate()?;
        Ok(s)
    }

    /// Checks Hermiticity, unit trace and positivity to [`TOLERANCE`].
    pub fn validate(&self) -> Result<(), QStateError> {
        let mut tr = 0.0;
        for (key, b) in &self.blocks {
            let h = linalg::hermiticity_error(b);
            if h > TOLERANCE {
                return Err(QStateError::InvalidState(format!("block {key:?} not Hermitian (error {h:e})")));
            }
            let min = linalg::hermitian_eigenvalues(b).into_iter().fold(f64::INFINITY, f64::min);
            if min < -TOLERANCE {
                return Err(QStateError::InvalidState(format!("block {key:?} has eigenvalue {min:e}")));
            }
            tr += linalg::trace(b).re;
        }
        if (tr - 1.0).abs() > TOLERANCE {
            return Err(QStateError::InvalidState(format!("trace is {tr}")));
        }
        Ok(())
    }

    /// From a dense matrix over the full tensor product (registers in layout order).
    /// Coherences between distinct classical values must vanish to tolerance.
    pub fn from_dense(layout: Layout, m: &CMatrix) -> Result<Self, QStateError> {
        let d = layout.dim();
        if m.nrows() != d || m.ncols() != d {
            return Err(QStateError::Layout(format!("matrix is {}x{}, layout {layout} has dim {d}", m.nrows(), m.ncols())));
        }
        let table = full_index_table(&layout);
        let cdims = layout.classical_dims();
        let dq = layout.quantum_dim();
        let mut worst = 0.0f64;
        for (ca, rows_a) in table.iter().enumerate() {
            for (cb, rows_b) in table.iter().enumerate() {
                if ca == cb {
                    continue;
                }
                for &i in rows_a {
                    for &j in rows_b {
                        worst = worst.max(m[(i, j)].norm());
                    }
                }
            }
        }
        if worst > TOLERANCE {
            let name = layout.classical().next().map(|r| r.name.clone()).unwrap_or_default();
            return Err(QStateError::NotClassical(name, worst));
        }
        let mut blocks = BTreeMap::new();
        for (cf, rows) in table.iter().enumerate() {
            let b = CMatrix::from_fn(dq, dq, |i, j| m[(rows[i], rows[j])]);
            blocks.insert(unflatten(cf, &cdims), b);
        }
        Self::from_blocks(layout, blocks)
    }

    /// Dense matrix over the full tensor product. Intended for small layouts.
    pub fn to_dense(&self) -> CMatrix {
        let d = self.layout.dim();
        let cdims = self.layout.classical_dims();
        let table = full_index_table(&self.layout);
        let mut m = CMatrix::zeros(d, d);
        for (key, b) in &self.blocks {
            let rows = &table[flatten(key, &cdims)];
            for (i, &ri) in rows.iter().enumerate() {
                for (j, &rj) in rows.iter().enumerate() {
                    m[(ri, rj)] = b[(i, j)];
                }
            }
        }
        m
    }

    /// `|ψ⟩⟨ψ|` for a normalized amplitude vector over the full layout.
    pub fn pure(layout: Layout, amplitudes: &[C64]) -> Result<Self, QStateError> {
        if amplitudes.len() != layout.dim() {
            return Err(QStateError::Layout(format!(
                "{} amplitudes for dimension {}",
                amplitudes.len(),
                layout.dim()
            )));
        }
        let v = CMatrix::from_column_slice(amplitudes.len(), 1, amplitudes);
        Self::from_dense(layout, &(&v * v.adjoint()))
    }

    /// Computational basis state with one value per register (layout order).
    pub fn basis(layout: Layout, values: &[usize]) -> Result<Self, QStateError> {
        if values.len() != layout.len() || values.iter().zip(layout.registers()).any(|(v, r)| *v >= r.dim) {
            return Err(QStateError::Layout(format!("basis values {values:?} invalid for {layout}")));
        }
        let mut key = Vec::new();
        let mut qvals = Vec::new();
        for (v, r) in values.iter().zip(layout.registers()) {
            if r.is_classical() {
                key.push(*v);
            } else {
                qvals.push(*v);
            }
        }
        let dq = layout.quantum_dim();
        let qi = flatten(&qvals, &layout.quantum_dims());
        let mut b = CMatrix::zeros(dq, dq);
        b[(qi, qi)] = c(1.0);
        Ok(Self::from_blocks_unchecked(layout, BTreeMap::from([(key, b)])))
    }

    pub fn maximally_mixed(layout: Layout) -> Self {
        let cdims = layout.classical_dims();
        let nc: usize = cdims.iter().product();
        let dq = layout.quantum_dim();
        let w = 1.0 / (nc * dq) as f64;
        let blocks = (0..nc)
            .map(|i| (unflatten(i, &cdims), CMatrix::identity(dq, dq).scale(w)))
            .collect();
        Self { layout, blocks }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn blocks(&self) -> &BTreeMap<Vec<usize>, CMatrix> {
        &self.blocks
    }

    pub fn block(&self, key: &[usize]) -> Option<&CMatrix> {
        self.blocks.get(key)
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn quantum_dim(&self) -> usize {
        self.layout.quantum_dim()
    }

    pub fn trace(&self) -> f64 {
        self.blocks.values().map(|b| linalg::trace(b).re).sum()
    }

    pub fn tensor(&self, other: &DensityOperator) -> Result<DensityOperator, QStateError> {
        let layout = self.layout.concat(&other.layout)?;
        let mut blocks = BTreeMap::new();
        for (ka, a) in &self.blocks {
            for (kb, b) in &other.blocks {
                let mut key = ka.clone();
                key.extend_from_slice(kb);
                blocks.insert(key, linalg::kron(a, b));
            }
        }
        Ok(Self::from_blocks_unchecked(layout, blocks))
    }

    /// Reduced state on the named registers (kept in this state's order).
    pub fn partial_trace(&self, keep: &[&str]) -> Result<DensityOperator, QStateError> {
        let layout = self.layout.restrict(keep)?;
        let mut ckeep = Vec::new();
        let mut qkeep = Vec::new();
        let (mut ci, mut qi) = (0, 0);
        for r in self.layout.registers() {
            let kept = keep.contains(&r.name.as_str());
            if r.is_classical() {
                if kept {
                    ckeep.push(ci);
                }
                ci += 1;
            } else {
                if kept {
                    qkeep.push(qi);
                }
                qi += 1;
            }
        }
        let qdims = self.layout.quantum_dims();
        let mut blocks: BTreeMap<Vec<usize>, CMatrix> = BTreeMap::new();
        for (key, b) in &self.blocks {
            let nk: Vec<usize> = ckeep.iter().map(|&i| key[i]).collect();
            let reduced = if qkeep.len() == qdims.len() {
                b.clone()
            } else {
                linalg::partial_trace(b, &qdims, &qkeep)
            };
            match blocks.get_mut(&nk) {
                Some(acc) => *acc += reduced,
                None => {
                    blocks.insert(nk, reduced);
                }
            }
        }
        Ok(Self::from_blocks_unchecked(layout, blocks))
    }

    /// Same state with registers permuted into the order given by `names`.
    pub fn reorder(&self, names: &[&str]) -> Result<DensityOperator, QStateError> {
        if names.len() != self.layout.len() {
            return Err(QStateError::Layout(format!("reorder needs all {} registers", self.layout.len())));
        }
        let mut regs = Vec::new();
        for n in names {
            regs.push(self.layout.get(n).cloned().ok_or_else(|| QStateError::UnknownRegister((*n).to_string()))?);
        }
        let layout = Layout::new(regs)?;
        if layout == self.layout {
            return Ok(self.clone());
        }
        let old_c: Vec<&str> = self.layout.classical().map(|r| r.name.as_str()).collect();
        let old_q: Vec<&str> = self.layout.quantum().map(|r| r.name.as_str()).collect();
        let cperm: Vec<usize> = layout
            .classical()
            .map(|r| old_c.iter().position(|n| *n == r.name).unwrap())
            .collect();
        let qperm: Vec<usize> = layout
            .quantum()
            .map(|r| old_q.iter().position(|n| *n == r.name).unwrap())
            .collect();
        let qdims = self.layout.quantum_dims();
        let identity_q = qperm.iter().enumerate().all(|(i, &p)| i == p);
        let blocks = self
            .blocks
            .iter()
            .map(|(k, b)| {
                let nk = cperm.iter().map(|&p| k[p]).collect();
                let nb = if identity_q {
                    b.clone()
                } else {
                    linalg::permute_subsystems(b, &qdims, &qperm)
                };
                (nk, nb)
            })
            .collect();
        Ok(Self { layout, blocks })
    }

    /// Rename a register.
    pub fn relabel(&self, from: &str, to: &str) -> Result<DensityOperator, QStateError> {
        let regs = self
            .layout
            .registers()
            .iter()
            .map(|r| {
                let mut r = r.clone();
                if r.name == from {
                    r.name = to.to_string();
                }
                r
            })
            .collect();
        if !self.layout.contains(from) {
            return Err(QStateError::UnknownRegister(from.to_string()));
        }
        Ok(Self {
            layout: Layout::new(regs)?,
            blocks: self.blocks.clone(),
        })
    }

    fn classical_position(&self, register: &str) -> Result<usize, QStateError> {
        let reg = self
            .layout
            .get(register)
            .ok_or_else(|| QStateError::UnknownRegister(register.to_string()))?;
        if !reg.is_classical() {
            return Err(QStateError::Layout(format!("register {register} is quantum")));
        }
        Ok(self.layout.classical().position(|r| r.name == register).unwrap())
    }

    /// Probability that a classical register holds `value`.
    pub fn probability(&self, register: &str, value: usize) -> Result<f64, QStateError> {
        let pos = self.classical_position(register)?;
        Ok(self
            .blocks
            .iter()
            .filter(|(k, _)| k[pos] == value)
            .map(|(_, b)| linalg::trace(b).re)
            .sum())
    }

    /// Normalized state conditioned on a classical value, with that register removed.
    pub fn condition(&self, register: &str, value: usize) -> Result<(f64, DensityOperator), QStateError> {
        let pos = self.classical_position(register)?;
        let p = self.probability(register, value)?;
        if p <= 0.0 {
            return Err(QStateError::InvalidState(format!("{register}={value} has probability {p}")));
        }
        let keep: Vec<&str> = self
            .layout
            .names()
            .into_iter()
            .filter(|n| *n != register)
            .collect();
        let layout = self.layout.restrict(&keep)?;
        let blocks = self
            .blocks
            .iter()
            .filter(|(k, _)| k[pos] == value)
            .map(|(k, b)| {
                let mut nk = k.clone();
                nk.remove(pos);
                (nk, b.unscale(p))
            })
            .collect();
        Ok((p, Self { layout, blocks }))
    }

    /// `Σ_v p_v ρ_v ⊗ |v⟩⟨v|` with the classical register appended last.
    pub fn classical_mixture(register: Register, branches: &[(f64, &DensityOperator)]) -> Result<DensityOperator, QStateError> {
        if !register.is_classical() || register.dim != branches.len() {
            return Err(QStateError::Layout(format!(
                "mixture register {register} must be classical with one value per branch"
            )));
        }
        let first = branches
            .first()
            .ok_or_else(|| QStateError::Layout("empty mixture".into()))?
            .1;
        let total: f64 = branches.iter().map(|(p, _)| p).sum();
        if branches.iter().any(|(p, _)| *p < 0.0) || (total - 1.0).abs() > TOLERANCE {
            return Err(QStateError::InvalidState(format!("mixture weights sum to {total}")));
        }
        let layout = first.layout.concat(&Layout::new(vec![register])?)?;
        let mut blocks = BTreeMap::new();
        for (v, (p, st)) in branches.iter().enumerate() {
            if st.layout != first.layout {
                return Err(QStateError::Layout(format!("branch layouts differ: {} vs {}", st.layout, first.layout)));
            }
            if *p == 0.0 {
                continue;
            }
            for (k, b) in &st.blocks {
                let mut nk = k.clone();
                nk.push(v);
                blocks.insert(nk, b.scale(*p));
            }
        }
        Ok(Self::from_blocks_unchecked(layout, blocks))
    }

    /// Clamp eigenvalues in `[-τ, 0)` to zero and renormalize the trace.
    /// Larger negative eigenvalues are reported, never repaired.
    pub fn normalized(&self) -> Result<DensityOperator, QStateError> {
        let mut blocks = BTreeMap::new();
        let mut tr = 0.0;
        for (k, b) in &self.blocks {
            let (vals, vecs) = linalg::hermitian_eigen(b);
            if let Some(min) = vals.iter().copied().reduce(f64::min) {
                if min < -TOLERANCE {
                    return Err(QStateError::InvalidState(format!("block {k:?} has eigenvalue {min:e}")));
                }
            }
            let fixed = linalg::spectral_map(&vals, &vecs, |l| l.max(0.0));
            tr += linalg::trace(&fixed).re;
            blocks.insert(k.clone(), fixed);
        }
        if tr <= 0.0 {
            return Err(QStateError::InvalidState("zero trace".into()));
        }
        for b in blocks.values_mut() {
            *b = b.unscale(tr);
        }
        Ok(Self::from_blocks_unchecked(self.layout.clone(), blocks))
    }

    /// Entry of the quantum block for a classical key (zero if absent).
    pub fn entry(&self, key: &[usize], i: usize, j: usize) -> C64 {
        self.blocks.get(key).map(|b| b[(i, j)]).unwrap_or(ZERO)
    }
}

/// For every flattened classical value, the full-space indices of its quantum block.
pub(crate) fn full_index_table(layout: &Layout) -> Vec<Vec<usize>> {
    let mut slots = Vec::new();
    let (mut ci, mut qi) = (0, 0);
    for r in layout.registers() {
        if r.is_classical() {
            slots.push(Slot::A(ci));
            ci += 1;
        } else {
            slots.push(Slot::B(qi));
            qi += 1;
        }
    }
    let full: Vec<usize> = layout.registers().iter().map(|r| r.dim).collect();
    linalg::index_table(&slots, &full, &layout.classical_dims(), &layout.quantum_dims())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qubit(name: &str) -> Register {
        Register::quantum(name, 2)
    }

    #[test]
    fn dense_roundtrip_with_classical_register() {
        let layout = Layout::new(vec![qubit("A"), Register::classical("F", 2)]).unwrap();
        let s0 = DensityOperator::basis(Layout::new(vec![qubit("A")]).unwrap(), &[0]).unwrap();
        let s1 = DensityOperator::maximally_mixed(Layout::new(vec![qubit("A")]).unwrap());
        let mix = DensityOperator::classical_mixture(Register::classical("F", 2), &[(0.3, &s0), (0.7, &s1)]).unwrap();
        assert_eq!(mix.layout(), &layout);
        let dense = mix.to_dense();
        let back = DensityOperator::from_dense(layout, &dense).unwrap();
        assert_eq!(back, mix);
        assert!((mix.probability("F", 1).unwrap() - 0.7).abs() < 1e-15);
        let (p, cond) = mix.condition("F", 1).unwrap();
        assert!((p - 0.7).abs() < 1e-15);
        assert_eq!(cond, s1);
    }

    #[test]
    fn coherent_classical_register_is_rejected() {
        let layout = Layout::new(vec![Register::classical("K", 2)]).unwrap();
        let h = 1.0 / 2f64.sqrt();
        let err = DensityOperator::pure(layout, &[c(h), c(h)]).unwrap_err();
        assert!(matches!(err, QStateError::NotClassical(_, _)));
    }

    #[test]
    fn partial_trace_of_bell_state_is_maximally_mixed() {
        let layout = Layout::new(vec![qubit("A"), qubit("B")]).unwrap();
        let h = 1.0 / 2f64.sqrt();
        let bell = DensityOperator::pure(layout, &[c(h), ZERO, ZERO, c(h)]).unwrap();
        let ra = bell.partial_trace(&["A"]).unwrap();
        let mm = DensityOperator::maximally_mixed(Layout::new(vec![qubit("A")]).unwrap());
        assert!(linalg::max_abs(&(ra.to_dense() - mm.to_dense())) < 1e-15);
    }

    #[test]
    fn tensor_then_trace_recovers_factor() {
        let a = DensityOperator::basis(Layout::new(vec![Register::classical("K", 3)]).unwrap(), &[2]).unwrap();
        let b = DensityOperator::maximally_mixed(Layout::new(vec![qubit("E")]).unwrap());
        let ab = a.tensor(&b).unwrap();
        assert_eq!(ab.partial_trace(&["K"]).unwrap(), a);
        assert_eq!(ab.partial_trace(&["E"]).unwrap(), b);
        let trivial = DensityOperator::basis(Layout::empty(), &[]).unwrap();
        assert_eq!(a.tensor(&trivial).unwrap(), a);
    }

    #[test]
    fn reorder_swaps_blocks() {
        let a = DensityOperator::basis(Layout::new(vec![qubit("A")]).unwrap(), &[1]).unwrap();
        let b = DensityOperator::maximally_mixed(Layout::new(vec![Register::quantum("B", 3)]).unwrap());
        let ab = a.tensor(&b).unwrap();
        let ba = b.tensor(&a).unwrap();
        let swapped = ab.reorder(&["B", "A"]).unwrap();
        assert!(linalg::max_abs(&(swapped.to_dense() - ba.to_dense())) < 1e-15);
    }

    #[test]
    fn normalized_rejects_large_negative_eigenvalue() {
        let layout = Layout::new(vec![qubit("A")]).unwrap();
        let bad = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c(1.1), c(-0.1)]));
        let s = DensityOperator::from_blocks_unchecked(layout.clone(), BTreeMap::from([(vec![], bad)]));
        assert!(s.normalized().is_err());
        let tiny = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c(1.0), c(-1e-12)]));
        let s = DensityOperator::from_blocks_unchecked(layout, BTreeMap::from([(vec![], tiny)]));
        let n = s.normalized().unwrap();
        assert!(n.validate().is_ok());
    }
}
