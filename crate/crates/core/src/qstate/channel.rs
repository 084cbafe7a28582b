use std::collections::BTreeMap;

use super::layout::{flatten, unflatten, Layout, Register};
use super::linalg::{self, CMatrix, Slot};
use super::state::{full_index_table, DensityOperator};
use super::{QStateError, TOLERANCE};

/// Quantum operations taking one classical input value to one classical output value.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    /// Classical output values, in the order of the output layout's classical registers.
    pub output: Vec<usize>,
    /// Kraus operators on the quantum part, `quantum_out × quantum_in`.
    pub ops: Vec<CMatrix>,
}

/// A CPTP map between register layouts, stored as a classically controlled instrument.
///
/// The channel reads its classical input registers in their preferred basis and
/// writes its classical outputs decohered. For each flattened classical input value
/// it holds the list of branches that value may lead to. A channel without classical
/// registers is an ordinary Kraus list (one input value, one branch).
#[derive(Debug, Clone, PartialEq)]
pub struct KrausChannel {
    input: Layout,
    output: Layout,
    branches: Vec<Vec<Branch>>,
}

impl KrausChannel {
    pub fn from_branches(input: Layout, output: Layout, branches: Vec<Vec<Branch>>) -> Result<Self, QStateError> {
        let nin = input.classical_dim();
        if branches.len() != nin {
            return Err(QStateError::InvalidChannel(format!(
                "{} branch lists for {nin} classical input values",
                branches.len()
            )));
        }
        let (dqi, dqo) = (input.quantum_dim(), output.quantum_dim());
        let odims = output.classical_dims();
        for list in &branches {
            for b in list {
                if b.output.len() != odims.len() || b.output.iter().zip(&odims).any(|(v, d)| v >= d) {
                    return Err(QStateError::InvalidChannel(format!("branch output {:?} outside {output}", b.output)));
                }
                if b.ops.iter().any(|k| k.nrows() != dqo || k.ncols() != dqi) {
                    return Err(QStateError::InvalidChannel(format!("Kraus operator shape must be {dqo}x{dqi}")));
                }
            }
        }
        let ch = Self { input, output, branches };
        let err = ch.completeness_error();
        if !(err <= TOLERANCE) {
            return Err(QStateError::InvalidChannel(format!("completeness violated by {err:e}")));
        }
        Ok(ch)
    }

    /// From Kraus operators on the full input and output spaces (registers in layout
    /// order). Classical input registers are read in their basis and classical
    /// outputs are decohered.
    pub fn new(input: Layout, output: Layout, kraus: Vec<CMatrix>) -> Result<Self, QStateError> {
        let (din, dout) = (input.dim(), output.dim());
        if kraus.is_empty() {
            return Err(QStateError::InvalidChannel("no Kraus operators".into()));
        }
        if kraus.iter().any(|k| k.nrows() != dout || k.ncols() != din) {
            return Err(QStateError::InvalidChannel(format!("Kraus operators must be {dout}x{din}")));
        }
        let in_table = full_index_table(&input);
        let out_table = full_index_table(&output);
        let odims = output.classical_dims();
        let mut branches = Vec::with_capacity(in_table.len());
        for cols in &in_table {
            let mut by_out: BTreeMap<Vec<usize>, Vec<CMatrix>> = BTreeMap::new();
            for (co, rows) in out_table.iter().enumerate() {
                for k in &kraus {
                    let sub = CMatrix::from_fn(rows.len(), cols.len(), |i, j| k[(rows[i], cols[j])]);
                    if !linalg::is_exact_zero(&sub) {
                        by_out.entry(unflatten(co, &odims)).or_default().push(sub);
                    }
                }
            }
            branches.push(by_out.into_iter().map(|(output, ops)| Branch { output, ops }).collect());
        }
        Self::from_branches(input, output, branches)
    }

    pub fn identity(layout: Layout) -> Self {
        let cdims = layout.classical_dims();
        let dq = layout.quantum_dim();
        let branches = (0..layout.classical_dim())
            .map(|ci| {
                vec![Branch {
                    output: unflatten(ci, &cdims),
                    ops: vec![linalg::identity(dq)],
                }]
            })
            .collect();
        Self {
            input: layout.clone(),
            output: layout,
            branches,
        }
    }

    /// Conjugation by a unitary on an all-quantum layout.
    pub fn unitary(layout: Layout, u: CMatrix) -> Result<Self, QStateError> {
        if layout.classical_dim() != 1 || layout.classical().next().is_some() {
            return Err(QStateError::InvalidChannel("unitary channels act on quantum registers only".into()));
        }
        Self::from_branches(
            layout.clone(),
            layout,
            vec![vec![Branch {
                output: vec![],
                ops: vec![u],
            }]],
        )
    }

    /// Convex combination `Σ w_i Φ_i` of channels with identical layouts.
    pub fn mixture(parts: &[(f64, &KrausChannel)]) -> Result<Self, QStateError> {
        let first = parts
            .first()
            .ok_or_else(|| QStateError::InvalidChannel("empty mixture".into()))?
            .1;
        let total: f64 = parts.iter().map(|(w, _)| w).sum();
        if parts.iter().any(|(w, _)| *w < 0.0) || (total - 1.0).abs() > TOLERANCE {
            return Err(QStateError::InvalidChannel(format!("mixture weights sum to {total}")));
        }
        if parts.iter().any(|(_, c)| c.input != first.input || c.output != first.output) {
            return Err(QStateError::InvalidChannel("mixed channels must share layouts".into()));
        }
        let branches = (0..first.branches.len())
            .map(|ci| {
                let mut by_out: BTreeMap<Vec<usize>, Vec<CMatrix>> = BTreeMap::new();
                for (w, ch) in parts.iter().filter(|(w, _)| *w > 0.0) {
                    let s = w.sqrt();
                    for b in &ch.branches[ci] {
                        by_out
                            .entry(b.output.clone())
                            .or_default()
                            .extend(b.ops.iter().map(|k| k.scale(s)));
                    }
                }
                by_out.into_iter().map(|(output, ops)| Branch { output, ops }).collect()
            })
            .collect();
        Self::from_branches(first.input.clone(), first.output.clone(), branches)
    }

    /// Reads `control` and applies `channels[value]`; the control register is passed through.
    /// All channels must share input and output layouts.
    pub fn controlled(control: Register, channels: &[KrausChannel]) -> Result<Self, QStateError> {
        if !control.is_classical() || control.dim != channels.len() || channels.is_empty() {
            return Err(QStateError::InvalidChannel(format!(
                "control {control} must be classical with one value per channel"
            )));
        }
        let first = &channels[0];
        if channels.iter().any(|c| c.input != first.input || c.output != first.output) {
            return Err(QStateError::InvalidChannel("controlled channels must share layouts".into()));
        }
        let ctl = Layout::new(vec![control])?;
        let input = ctl.concat(&first.input)?;
        let output = ctl.concat(&first.output)?;
        let mut branches = Vec::new();
        for (v, ch) in channels.iter().enumerate() {
            for list in &ch.branches {
                branches.push(
                    list.iter()
                        .map(|b| {
                            let mut out = vec![v];
                            out.extend_from_slice(&b.output);
                            Branch {
                                output: out,
                                ops: b.ops.clone(),
                            }
                        })
                        .collect(),
                );
            }
        }
        Ok(Self { input, output, branches })
    }

    pub fn input_layout(&self) -> &Layout {
        &self.input
    }

    pub fn output_layout(&self) -> &Layout {
        &self.output
    }

    /// Branch lists indexed by the flattened classical input value.
    pub fn branches(&self) -> &[Vec<Branch>] {
        &self.branches
    }

    pub fn kraus_count(&self) -> usize {
        self.branches.iter().flatten().map(|b| b.ops.len()).sum()
    }

    /// Largest deviation of `Σ K†K` from the identity over all classical inputs.
    pub fn completeness_error(&self) -> f64 {
        let dq = self.input.quantum_dim();
        let mut worst = 0.0f64;
        for list in &self.branches {
            let mut acc = CMatrix::zeros(dq, dq);
            for b in list {
                for k in &b.ops {
                    acc += k.adjoint() * k;
                }
            }
            worst = worst.max(linalg::max_abs(&(acc - linalg::identity(dq))));
        }
        worst
    }

    /// Pass `extra` through untouched (appended to both input and output).
    pub fn extend(&self, extra: &Layout) -> Result<KrausChannel, QStateError> {
        if extra.is_empty() {
            return Ok(self.clone());
        }
        let input = self.input.concat(extra)?;
        let output = self.output.concat(extra)?;
        let edims = extra.classical_dims();
        let ne = extra.classical_dim();
        let eye = linalg::identity(extra.quantum_dim());
        let mut branches = Vec::with_capacity(self.branches.len() * ne);
        for list in &self.branches {
            for ce in 0..ne {
                let evals = unflatten(ce, &edims);
                branches.push(
                    list.iter()
                        .map(|b| {
                            let mut out = b.output.clone();
                            out.extend_from_slice(&evals);
                            Branch {
                                output: out,
                                ops: b.ops.iter().map(|k| linalg::kron(k, &eye)).collect(),
                            }
                        })
                        .collect(),
                );
            }
        }
        Ok(Self { input, output, branches })
    }

    /// Same channel with its input registers listed in the order `names`.
    pub fn reorder_input(&self, names: &[&str]) -> Result<KrausChannel, QStateError> {
        let (layout, cperm, qperm) = permuted(&self.input, names)?;
        if layout == self.input {
            return Ok(self.clone());
        }
        let old_cdims = self.input.classical_dims();
        let new_cdims = layout.classical_dims();
        let qdims = self.input.quantum_dims();
        // P maps old quantum order to new; ops become K P†.
        let p_adj = linalg::permutation_matrix(&qdims, &qperm).adjoint();
        let mut branches = Vec::with_capacity(self.branches.len());
        for new_ci in 0..layout.classical_dim() {
            let new_vals = unflatten(new_ci, &new_cdims);
            let mut old_vals = vec![0; old_cdims.len()];
            for (k, &p) in cperm.iter().enumerate() {
                old_vals[p] = new_vals[k];
            }
            let list = &self.branches[flatten(&old_vals, &old_cdims)];
            branches.push(
                list.iter()
                    .map(|b| Branch {
                        output: b.output.clone(),
                        ops: b.ops.iter().map(|k| k * &p_adj).collect(),
                    })
                    .collect(),
            );
        }
        Ok(Self {
            input: layout,
            output: self.output.clone(),
            branches,
        })
    }

    /// Same channel with its output registers listed in the order `names`.
    pub fn reorder_output(&self, names: &[&str]) -> Result<KrausChannel, QStateError> {
        let (layout, cperm, qperm) = permuted(&self.output, names)?;
        if layout == self.output {
            return Ok(self.clone());
        }
        let p = linalg::permutation_matrix(&self.output.quantum_dims(), &qperm);
        let branches = self
            .branches
            .iter()
            .map(|list| {
                list.iter()
                    .map(|b| Branch {
                        output: cperm.iter().map(|&i| b.output[i]).collect(),
                        ops: b.ops.iter().map(|k| &p * k).collect(),
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            input: self.input.clone(),
            output: layout,
            branches,
        })
    }

    /// `second ∘ first`. The second channel may act on a subset of the first's outputs;
    /// the remaining outputs pass through.
    pub fn compose(first: &KrausChannel, second: &KrausChannel) -> Result<KrausChannel, QStateError> {
        for r in second.input.registers() {
            if first.output.get(&r.name) != Some(r) {
                return Err(QStateError::Layout(format!(
                    "second channel input {r} is not an output of the first channel {}",
                    first.output
                )));
            }
        }
        let rest: Vec<Register> = first
            .output
            .registers()
            .iter()
            .filter(|r| !second.input.contains(&r.name))
            .cloned()
            .collect();
        let second = second.extend(&Layout::new(rest)?)?.reorder_input(&first.output.names())?;
        let mid_dims = first.output.classical_dims();
        let (dqi, dqo) = (first.input.quantum_dim(), second.output.quantum_dim());
        let mut branches = Vec::with_capacity(first.branches.len());
        for list in &first.branches {
            let mut by_out: BTreeMap<Vec<usize>, Vec<CMatrix>> = BTreeMap::new();
            for b1 in list {
                let mid = flatten(&b1.output, &mid_dims);
                for b2 in &second.branches[mid] {
                    let slot = by_out.entry(b2.output.clone()).or_default();
                    for k2 in &b2.ops {
                        for k1 in &b1.ops {
                            let k = k2 * k1;
                            if !linalg::is_exact_zero(&k) {
                                slot.push(k);
                            }
                        }
                    }
                }
            }
            branches.push(
                by_out
                    .into_iter()
                    .filter(|(_, ops)| !ops.is_empty())
                    .map(|(output, ops)| Branch {
                        output,
                        ops: compress_kraus(ops, dqi, dqo),
                    })
                    .collect(),
            );
        }
        Ok(Self {
            input: first.input.clone(),
            output: second.output,
            branches,
        })
    }

    /// `next ∘ self`.
    pub fn then(&self, next: &KrausChannel) -> Result<KrausChannel, QStateError> {
        Self::compose(self, next)
    }

    /// Layout produced when this channel acts on a state with layout `state`.
    ///
    /// The channel's outputs take the place of its inputs (at the position of the
    /// first input register); a channel without inputs appends its outputs.
    pub fn output_layout_for(&self, state: &Layout) -> Result<Layout, QStateError> {
        Ok(self.plan(state)?.new_layout)
    }

    fn plan(&self, state: &Layout) -> Result<ApplyPlan, QStateError> {
        let mut first_pos = None;
        for r in self.input.registers() {
            let pos = state
                .position(&r.name)
                .ok_or_else(|| QStateError::Layout(format!("channel input {r} missing from state {state}")))?;
            if &state.registers()[pos] != r {
                return Err(QStateError::Layout(format!(
                    "channel input {r} does not match state register {}",
                    state.registers()[pos]
                )));
            }
            first_pos = Some(first_pos.map_or(pos, |p: usize| p.min(pos)));
        }
        let rest: Vec<&Register> = state
            .registers()
            .iter()
            .filter(|r| !self.input.contains(&r.name))
            .collect();
        let insert_at = match first_pos {
            Some(p) => state.registers()[..p].iter().filter(|r| !self.input.contains(&r.name)).count(),
            None => rest.len(),
        };
        let mut regs: Vec<Register> = rest.iter().map(|r| (*r).clone()).collect();
        for (i, r) in self.output.registers().iter().enumerate() {
            regs.insert(insert_at + i, r.clone());
        }
        let new_layout = Layout::new(regs)
            .map_err(|e| QStateError::Layout(format!("applying channel to {state}: {e}")))?;

        // Classical bookkeeping.
        let state_c: Vec<&str> = state.classical().map(|r| r.name.as_str()).collect();
        let cin_pos: Vec<usize> = self
            .input
            .classical()
            .map(|r| state_c.iter().position(|n| *n == r.name).unwrap())
            .collect();
        let out_c: Vec<&str> = self.output.classical().map(|r| r.name.as_str()).collect();
        let new_c_source: Vec<Source> = new_layout
            .classical()
            .map(|r| match out_c.iter().position(|n| *n == r.name) {
                Some(i) => Source::Out(i),
                None => Source::Old(state_c.iter().position(|n| *n == r.name).unwrap()),
            })
            .collect();

        // Quantum embedding tables.
        let rest_q: Vec<&Register> = rest.iter().copied().filter(|r| !r.is_classical()).collect();
        let rest_dims: Vec<usize> = rest_q.iter().map(|r| r.dim).collect();
        let qin: Vec<&str> = self.input.quantum().map(|r| r.name.as_str()).collect();
        let qout: Vec<&str> = self.output.quantum().map(|r| r.name.as_str()).collect();
        let slots_for = |layout: &Layout, chan: &[&str]| -> Vec<Slot> {
            layout
                .quantum()
                .map(|r| match chan.iter().position(|n| *n == r.name) {
                    Some(i) => Slot::B(i),
                    None => Slot::A(rest_q.iter().position(|o| o.name == r.name).unwrap()),
                })
                .collect()
        };
        let old_table = linalg::index_table(
            &slots_for(state, &qin),
            &state.quantum_dims(),
            &rest_dims,
            &self.input.quantum_dims(),
        );
        let new_table = linalg::index_table(
            &slots_for(&new_layout, &qout),
            &new_layout.quantum_dims(),
            &rest_dims,
            &self.output.quantum_dims(),
        );
        Ok(ApplyPlan {
            new_layout,
            cin_pos,
            cin_dims: self.input.classical_dims(),
            new_c_source,
            old_table,
            new_table,
            scalar_only: self.input.quantum_dim() == 1 && self.output.quantum_dim() == 1,
        })
    }

    pub fn apply(&self, state: &DensityOperator) -> Result<DensityOperator, QStateError> {
        let plan = self.plan(state.layout())?;
        let d_old = state.layout().quantum_dim();
        let d_new = plan.new_layout.quantum_dim();
        let mut out: BTreeMap<Vec<usize>, CMatrix> = BTreeMap::new();
        for (key, block) in state.blocks() {
            let cin: Vec<usize> = plan.cin_pos.iter().map(|&p| key[p]).collect();
            for b in &self.branches[flatten(&cin, &plan.cin_dims)] {
                let nk: Vec<usize> = plan
                    .new_c_source
                    .iter()
                    .map(|s| match *s {
                        Source::Old(p) => key[p],
                        Source::Out(i) => b.output[i],
                    })
                    .collect();
                let mut acc = CMatrix::zeros(d_new, d_new);
                for k in &b.ops {
                    if plan.scalar_only {
                        acc += block.scale(k[(0, 0)].norm_sqr());
                    } else {
                        let emb = plan.embed(k, d_new, d_old);
                        acc += &emb * block * emb.adjoint();
                    }
                }
                match out.get_mut(&nk) {
                    Some(slot) => *slot += acc,
                    None => {
                        out.insert(nk, acc);
                    }
                }
            }
        }
        Ok(DensityOperator::from_blocks_unchecked(plan.new_layout, out))
    }

    /// Choi blocks per classical input value, keyed by classical output value.
    /// Each block lives on `quantum_in ⊗ quantum_out` (input factor first) and is
    /// `Σ_K |K⟩⟩⟨⟨K|` with `|K⟩⟩ = Σ_i |i⟩ ⊗ K|i⟩`.
    pub fn choi_blocks(&self) -> Vec<BTreeMap<Vec<usize>, CMatrix>> {
        let (dqi, dqo) = (self.input.quantum_dim(), self.output.quantum_dim());
        self.branches
            .iter()
            .map(|list| {
                let mut blocks: BTreeMap<Vec<usize>, CMatrix> = BTreeMap::new();
                for b in list {
                    let acc = blocks
                        .entry(b.output.clone())
                        .or_insert_with(|| CMatrix::zeros(dqi * dqo, dqi * dqo));
                    for k in &b.ops {
                        let v = vectorize(k);
                        *acc += &v * v.adjoint();
                    }
                }
                blocks
            })
            .collect()
    }

    /// Kraus operators on the full input/output spaces. Only for small layouts.
    pub fn to_dense_kraus(&self) -> Vec<CMatrix> {
        let in_table = full_index_table(&self.input);
        let out_table = full_index_table(&self.output);
        let odims = self.output.classical_dims();
        let (din, dout) = (self.input.dim(), self.output.dim());
        let mut out = Vec::new();
        for (ci, list) in self.branches.iter().enumerate() {
            for b in list {
                let rows = &out_table[flatten(&b.output, &odims)];
                for k in &b.ops {
                    let mut full = CMatrix::zeros(dout, din);
                    for (o, &r) in rows.iter().enumerate() {
                        for (i, &col) in in_table[ci].iter().enumerate() {
                            full[(r, col)] = k[(o, i)];
                        }
                    }
                    out.push(full);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
enum Source {
    Old(usize),
    Out(usize),
}

struct ApplyPlan {
    new_layout: Layout,
    cin_pos: Vec<usize>,
    cin_dims: Vec<usize>,
    new_c_source: Vec<Source>,
    old_table: Vec<Vec<usize>>,
    new_table: Vec<Vec<usize>>,
    scalar_only: bool,
}

impl ApplyPlan {
    fn embed(&self, k: &CMatrix, d_new: usize, d_old: usize) -> CMatrix {
        let mut emb = CMatrix::zeros(d_new, d_old);
        for (old_row, new_row) in self.old_table.iter().zip(&self.new_table) {
            for (i, &col) in old_row.iter().enumerate() {
                for (o, &row) in new_row.iter().enumerate() {
                    emb[(row, col)] = k[(o, i)];
                }
            }
        }
        emb
    }
}

fn permuted(layout: &Layout, names: &[&str]) -> Result<(Layout, Vec<usize>, Vec<usize>), QStateError> {
    if names.len() != layout.len() {
        return Err(QStateError::Layout(format!("reorder of {layout} needs all registers")));
    }
    let mut regs = Vec::new();
    for n in names {
        regs.push(layout.get(n).cloned().ok_or_else(|| QStateError::UnknownRegister((*n).to_string()))?);
    }
    let new = Layout::new(regs)?;
    let old_c: Vec<&str> = layout.classical().map(|r| r.name.as_str()).collect();
    let old_q: Vec<&str> = layout.quantum().map(|r| r.name.as_str()).collect();
    let cperm = new.classical().map(|r| old_c.iter().position(|n| *n == r.name).unwrap()).collect();
    let qperm = new.quantum().map(|r| old_q.iter().position(|n| *n == r.name).unwrap()).collect();
    Ok((new, cperm, qperm))
}

/// `|K⟩⟩` with input index major.
fn vectorize(k: &CMatrix) -> CMatrix {
    let (dout, din) = k.shape();
    CMatrix::from_fn(din * dout, 1, |idx, _| k[(idx % dout, idx / dout)])
}

/// Replace a long Kraus list by at most `din·dout` operators from its Choi matrix.
fn compress_kraus(ops: Vec<CMatrix>, din: usize, dout: usize) -> Vec<CMatrix> {
    if ops.len() <= din * dout {
        return ops;
    }
    let mut choi = CMatrix::zeros(din * dout, din * dout);
    for k in &ops {
        let v = vectorize(k);
        choi += &v * v.adjoint();
    }
    let (vals, vecs) = linalg::hermitian_eigen(&linalg::hermitize(&choi));
    let scale = vals.iter().copied().fold(0.0f64, f64::max);
    vals.iter()
        .enumerate()
        .filter(|(_, &l)| l > scale * 1e-15)
        .map(|(j, &l)| {
            let s = l.sqrt();
            CMatrix::from_fn(dout, din, |o, i| vecs[(i * dout + o, j)] * s)
        })
        .collect()
}

/// A pair of channels with identical layouts whose difference is being measured.
#[derive(Debug, Clone)]
pub struct ChannelDifference {
    minuend: KrausChannel,
    subtrahend: KrausChannel,
}

impl ChannelDifference {
    /// Aligns the subtrahend's register order to the minuend's.
    pub fn new(minuend: KrausChannel, subtrahend: KrausChannel) -> Result<Self, QStateError> {
        if !minuend.input.same_registers(&subtrahend.input) || !minuend.output.same_registers(&subtrahend.output) {
            return Err(QStateError::Layout(format!(
                "channel layouts differ: {} -> {} vs {} -> {}",
                minuend.input, minuend.output, subtrahend.input, subtrahend.output
            )));
        }
        let subtrahend = subtrahend
            .reorder_input(&minuend.input.names())?
            .reorder_output(&minuend.output.names())?;
        Ok(Self { minuend, subtrahend })
    }

    pub fn minuend(&self) -> &KrausChannel {
        &self.minuend
    }

    pub fn subtrahend(&self) -> &KrausChannel {
        &self.subtrahend
    }

    /// Choi blocks of the difference, per classical input and output value.
    pub fn choi_blocks(&self) -> Vec<BTreeMap<Vec<usize>, CMatrix>> {
        let a = self.minuend.choi_blocks();
        let b = self.subtrahend.choi_blocks();
        a.into_iter()
            .zip(b)
            .map(|(mut ja, jb)| {
                for (k, m) in jb {
                    match ja.get_mut(&k) {
                        Some(x) => *x -= m,
                        None => {
                            ja.insert(k, -m);
                        }
                    }
                }
                ja
            })
            .collect()
    }
}
