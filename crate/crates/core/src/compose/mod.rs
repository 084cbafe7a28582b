//! Sequencing certification with protocol instances, real and ideal end states, and
//! numerical checks of the composed security bounds.

mod adaptive;
mod proof;
pub mod random;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use adaptive::{verify_adaptive_bound, AdaptiveReport, AdaptiveScenario, LambdaOutcome, ProtocolRule, ProtocolTable};
pub use proof::{proof_step_audit, ProofStepReport};

use crate::certify::{approval_probability, certify_with_rule, ApprovalRule, CertificationPlan, CertifyError};
use crate::devices::{in_robust_set, instance_channel, AttackSpec, DeviceError, DeviceModel, RobustSet};
use crate::protocol::{audit_epsilon, AuditOptions, EpsilonAudit, InstanceChannel, KeyLayout, ProtocolError};
use crate::qstate::linalg::{c, CMatrix};
use crate::qstate::{
    flatten, trace_distance, unflatten, Branch, DensityOperator, KrausChannel, Layout, QStateError, Register,
    DEFAULT_DIMENSION_CAP, TOLERANCE,
};
use crate::seed;

/// Name of the certification-outcome register.
pub const CERT_REGISTER: &str = "F";

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ComposeError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("live quantum dimension {dim} after step {step} exceeds the cap {cap}")]
    DimensionCap { step: String, dim: usize, cap: usize },
    #[error("state after step {step} would store {entries} matrix entries (limit {limit})")]
    StateSize { step: String, entries: usize, limit: usize },
    #[error("criterion 1 fails: Pr[F=1] = {probability} (± {slack}) exceeds eps_cert = {eps_cert}")]
    Criterion1 { probability: f64, slack: f64, eps_cert: f64 },
    #[error("criterion 2 fails at instance {index}: audited lower bound {lower} exceeds stipulated epsilon {stipulated}")]
    Criterion2 { index: usize, lower: f64, stipulated: f64 },
    #[error("region {0} is not covered by the protocol table")]
    UncoveredRegion(String),
    #[error("invariant violated: {what} ({lhs} vs {rhs})")]
    Invariant { what: String, lhs: f64, rhs: f64 },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    State(#[from] QStateError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Certify(#[from] CertifyError),
}

/// The state before the first instance.
#[derive(Debug, Clone)]
pub enum InitialState {
    /// `σ_{Q₀F}` given directly; `F` must be a classical bit.
    Joint(DensityOperator),
    /// `F` produced by running a certification plan on the scenario's model, with
    /// `Q₀` in `rejected` or `approved` depending on the outcome.
    Certified {
        plan: CertificationPlan,
        rule: ApprovalRule,
        rejected: DensityOperator,
        approved: DensityOperator,
        /// Trials for a Monte Carlo estimate when no exact value exists.
        monte_carlo_trials: u64,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApprovalSource {
    State,
    Analytic,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Approval {
    pub probability: f64,
    pub std_error: f64,
    pub source: ApprovalSource,
}

/// A full experiment: certification outcome followed by `n` instances `E_j` with
/// channels `F_j` between them.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub model: DeviceModel,
    pub attack: AttackSpec,
    pub robust_set: RobustSet,
    pub eps_cert: f64,
    pub initial: InitialState,
    pub instances: Vec<InstanceChannel>,
    /// `F_1, …, F_{n−1}`.
    pub inter_instance: Vec<KrausChannel>,
    pub audit: AuditOptions,
    pub dimension_cap: usize,
}

/// Bound on `classical_dim × quantum_dim²` of any live state. Classical registers
/// are stored blockwise, so they sit outside the quantum cap but still cost memory.
pub const MAX_STATE_ENTRIES: usize = 1 << 22;

impl ComposeError {
    /// Whether the error reports a dimension above the configured cap.
    pub fn is_dimension_cap(&self) -> bool {
        matches!(
            self,
            Self::DimensionCap { .. }
                | Self::StateSize { .. }
                | Self::State(QStateError::DimensionCap { .. })
                | Self::Protocol(ProtocolError::State(QStateError::DimensionCap { .. }))
        )
    }
}

impl Scenario {
    /// Instances `E_1 … E_n` generated from the model and attack, with identity
    /// channels between them.
    pub fn from_model(
        model: DeviceModel,
        attack: AttackSpec,
        robust_set: RobustSet,
        eps_cert: f64,
        initial: InitialState,
        n: usize,
        max_length: usize,
    ) -> Result<Self, ComposeError> {
        let instances = (1..=n)
            .map(|j| instance_channel(&model, &attack, j, max_length))
            .collect::<Result<Vec<_>, _>>()?;
        let s = Self {
            model,
            attack,
            robust_set,
            eps_cert,
            initial,
            instances,
            inter_instance: vec![KrausChannel::identity(Layout::empty()); n.saturating_sub(1)],
            audit: AuditOptions::default(),
            dimension_cap: DEFAULT_DIMENSION_CAP,
        };
        s.check()?;
        Ok(s)
    }

    pub fn n(&self) -> usize {
        self.instances.len()
    }

    /// Checks value ranges and walks the register chain. Returns the live quantum
    /// dimension after each instance.
    pub fn check(&self) -> Result<Vec<usize>, ComposeError> {
        let n = self.n();
        if n == 0 {
            return Err(ComposeError::InvalidScenario("no instances".into()));
        }
        if self.inter_instance.len() + 1 != n {
            return Err(ComposeError::InvalidScenario(format!(
                "{} inter-instance channels for {n} instances",
                self.inter_instance.len()
            )));
        }
        if !(0.0..=1.0).contains(&self.eps_cert) {
            return Err(ComposeError::InvalidScenario(format!("eps_cert {} outside [0, 1]", self.eps_cert)));
        }
        let start = match &self.initial {
            InitialState::Joint(s) => s.layout().clone(),
            InitialState::Certified { rejected, approved, .. } => {
                if rejected.layout() != approved.layout() {
                    return Err(ComposeError::InvalidScenario("conditional initial states differ in layout".into()));
                }
                if rejected.layout().contains(CERT_REGISTER) {
                    return Err(ComposeError::InvalidScenario(format!(
                        "conditional initial states must not carry {CERT_REGISTER}"
                    )));
                }
                rejected.layout().concat(&Layout::new(vec![cert_register()])?)?
            }
        };
        if start.get(CERT_REGISTER) != Some(&cert_register()) {
            return Err(ComposeError::InvalidScenario(format!(
                "initial state needs a classical bit {CERT_REGISTER}, found {start}"
            )));
        }
        let cap_check = |layout: &Layout, step: String| {
            let dim = layout.quantum_dim();
            let entries = layout.classical_dim().saturating_mul(dim.saturating_mul(dim));
            if entries > MAX_STATE_ENTRIES {
                return Err(ComposeError::StateSize {
                    step,
                    entries,
                    limit: MAX_STATE_ENTRIES,
                });
            }
            if dim > self.dimension_cap {
                Err(ComposeError::DimensionCap {
                    step,
                    dim,
                    cap: self.dimension_cap,
                })
            } else {
                Ok(dim)
            }
        };
        cap_check(&start, "initial state".into())?;
        let mut live = start;
        let mut dims = Vec::with_capacity(n);
        for (j, inst) in self.instances.iter().enumerate() {
            let label = j + 1;
            if inst.channel.input_layout().contains(CERT_REGISTER) || inst.channel.output_layout().contains(CERT_REGISTER) {
                return Err(ComposeError::InvalidScenario(format!("instance {label} acts on {CERT_REGISTER}")));
            }
            live = inst
                .channel
                .output_layout_for(&live)
                .map_err(|e| ComposeError::InvalidScenario(format!("instance {label}: {e}")))?;
            dims.push(cap_check(&live, format!("instance {label}"))?);
            if let Some(f) = self.inter_instance.get(j) {
                live = f
                    .output_layout_for(&live)
                    .map_err(|e| ComposeError::InvalidScenario(format!("channel after instance {label}: {e}")))?;
                cap_check(&live, format!("channel after instance {label}"))?;
            }
        }
        Ok(dims)
    }

    /// `σ_{Q₀F}` and the approval probability it carries.
    pub fn initial_state(&self) -> Result<(DensityOperator, Approval), ComposeError> {
        match &self.initial {
            InitialState::Joint(s) => {
                let p = s.probability(CERT_REGISTER, 1)?;
                Ok((
                    s.clone(),
                    Approval {
                        probability: p,
                        std_error: 0.0,
                        source: ApprovalSource::State,
                    },
                ))
            }
            InitialState::Certified {
                plan,
                rule,
                rejected,
                approved,
                monte_carlo_trials,
                seed,
            } => {
                let approval = match approval_probability(&self.model, &self.robust_set, plan, *rule)? {
                    Some(p) => Approval {
                        probability: p.clamp(0.0, 1.0),
                        std_error: 0.0,
                        source: ApprovalSource::Analytic,
                    },
                    None => estimate_approval(&self.model, &self.robust_set, plan, *rule, *monte_carlo_trials, *seed)?,
                };
                let p = approval.probability;
                let state = DensityOperator::classical_mixture(cert_register(), &[(1.0 - p, rejected), (p, approved)])?;
                Ok((state, approval))
            }
        }
    }
}

fn estimate_approval(
    model: &DeviceModel,
    s: &RobustSet,
    plan: &CertificationPlan,
    rule: ApprovalRule,
    trials: u64,
    rng_seed: u64,
) -> Result<Approval, ComposeError> {
    use rayon::prelude::*;
    if trials == 0 {
        return Err(ComposeError::InvalidScenario("Monte Carlo approval estimate needs trials".into()));
    }
    let hits = (0..trials)
        .into_par_iter()
        .map(|t| certify_with_rule(model, s, plan, rule, seed::derive_seed(rng_seed, &[t])).map(|o| o.approved as u64))
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    let p = hits as f64 / trials as f64;
    Ok(Approval {
        probability: p,
        std_error: (p * (1.0 - p) / trials as f64).sqrt().max(1.0 / trials as f64),
        source: ApprovalSource::MonteCarlo,
    })
}

pub fn cert_register() -> Register {
    Register::classical(CERT_REGISTER, 2)
}

/// State `(1 − p)|0⟩⟨0|_F + p|1⟩⟨1|_F` with no other registers.
pub fn approval_state(p: f64) -> Result<DensityOperator, ComposeError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(ComposeError::InvalidScenario(format!("approval probability {p} outside [0, 1]")));
    }
    let mut blocks = BTreeMap::new();
    for (v, w) in [(0, 1.0 - p), (1, p)] {
        if w > 0.0 {
            blocks.insert(vec![v], CMatrix::from_element(1, 1, c(w)));
        }
    }
    Ok(DensityOperator::from_blocks(Layout::new(vec![cert_register()])?, blocks)?)
}

/// The channel run in place of `ch` after a rejection: registers common to input and
/// output pass through, other inputs are discarded and other outputs start at value
/// 0 (for key registers, the empty key).
pub fn null_channel(ch: &KrausChannel) -> Result<KrausChannel, ComposeError> {
    let (input, output) = (ch.input_layout(), ch.output_layout());
    let passes = |r: &Register| output.get(&r.name) == Some(r);
    let in_c: Vec<&Register> = input.classical().collect();
    let cdims = input.classical_dims();
    let out_c_src: Vec<Option<usize>> = output
        .classical()
        .map(|r| in_c.iter().position(|o| o.name == r.name && passes(o)))
        .collect();
    let in_q: Vec<&Register> = input.quantum().collect();
    let qin_dims = input.quantum_dims();
    let qout_dims = output.quantum_dims();
    let out_q_src: Vec<Option<usize>> = output
        .quantum()
        .map(|r| in_q.iter().position(|o| o.name == r.name && passes(o)))
        .collect();
    let traced: Vec<usize> = (0..in_q.len()).filter(|i| !passes(in_q[*i])).collect();
    let traced_dims: Vec<usize> = traced.iter().map(|&i| qin_dims[i]).collect();
    let n_ops: usize = traced_dims.iter().product();
    let (dqi, dqo) = (input.quantum_dim(), output.quantum_dim());
    let mut ops = vec![CMatrix::zeros(dqo, dqi); n_ops];
    for col in 0..dqi {
        let vals = unflatten(col, &qin_dims);
        let m: Vec<usize> = traced.iter().map(|&i| vals[i]).collect();
        let out_vals: Vec<usize> = out_q_src.iter().map(|s| s.map_or(0, |i| vals[i])).collect();
        ops[flatten(&m, &traced_dims)][(flatten(&out_vals, &qout_dims), col)] = c(1.0);
    }
    let branches = (0..input.classical_dim())
        .map(|ci| {
            let vals = unflatten(ci, &cdims);
            vec![Branch {
                output: out_c_src.iter().map(|s| s.map_or(0, |i| vals[i])).collect(),
                ops: ops.clone(),
            }]
        })
        .collect();
    Ok(KrausChannel::from_branches(input.clone(), output.clone(), branches)?)
}

/// `ch` on the approved branch, the null channel on the rejected one.
fn gated(ch: &KrausChannel) -> Result<KrausChannel, ComposeError> {
    Ok(KrausChannel::controlled(cert_register(), &[null_channel(ch)?, ch.clone()])?)
}

/// Real and ideal end states.
#[derive(Debug, Clone)]
pub struct EndStates {
    pub real: DensityOperator,
    pub ideal: DensityOperator,
}

fn run_chain(
    s: &Scenario,
    start: &DensityOperator,
    wrap: impl Fn(&KrausChannel) -> Result<KrausChannel, ComposeError>,
    ideal: bool,
) -> Result<DensityOperator, ComposeError> {
    let mut state = start.clone();
    for (j, inst) in s.instances.iter().enumerate() {
        state = wrap(&inst.channel)?.apply(&state)?;
        if ideal {
            state = inst.keys.key_replacement_channel().apply(&state)?;
        }
        if let Some(f) = s.inter_instance.get(j) {
            state = wrap(f)?.apply(&state)?;
        }
    }
    Ok(state)
}

/// `ρ` and `ρ̃`: the certification outcome gates every channel (rejected devices run
/// nothing and hold empty keys), and the ideal chain applies `𝒦_j` after each instance.
pub fn run_sequence(s: &Scenario) -> Result<EndStates, ComposeError> {
    s.check()?;
    let (sigma, _) = s.initial_state()?;
    Ok(EndStates {
        real: run_chain(s, &sigma, gated, false)?,
        ideal: run_chain(s, &sigma, gated, true)?,
    })
}

/// `Ē_n ∘ … ∘ Ē_1` and its ideal counterpart applied to one conditional state.
pub fn run_conditional(s: &Scenario, conditional: &DensityOperator) -> Result<EndStates, ComposeError> {
    let plain = |c: &KrausChannel| Ok(c.clone());
    Ok(EndStates {
        real: run_chain(s, conditional, plain, false)?,
        ideal: run_chain(s, conditional, plain, true)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceAudit {
    pub index: usize,
    pub audit: EpsilonAudit,
    pub stipulated: Option<f64>,
    /// The value entering the bound.
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// `Pr[F=1]·d(real | F=1, ideal | F=1)`.
    pub lhs: f64,
    /// `d(ρ, ρ̃)` of the joint end states.
    pub joint_distance: f64,
    pub conditional_distance: f64,
    pub approval: Approval,
    pub mu_in_robust_set: bool,
    pub eps_cert: f64,
    pub eps_qkd: Vec<f64>,
    pub eps_total_sum: f64,
    pub eps_total_max: f64,
    pub holds_sum: bool,
    pub holds_max: bool,
    pub audits: Vec<InstanceAudit>,
    /// Live quantum dimension after each instance.
    pub live_dims: Vec<usize>,
}

impl BoundReport {
    fn assemble(
        lhs: f64,
        joint_distance: f64,
        conditional_distance: f64,
        approval: Approval,
        mu_in_robust_set: bool,
        eps_cert: f64,
        audits: Vec<InstanceAudit>,
        live_dims: Vec<usize>,
        slack: f64,
    ) -> Self {
        let eps_qkd: Vec<f64> = audits.iter().map(|a| a.epsilon).collect();
        let total: f64 = eps_qkd.iter().sum();
        let eps_total_sum = eps_cert + total;
        let eps_total_max = eps_cert.max(total);
        Self {
            lhs,
            joint_distance,
            conditional_distance,
            approval,
            mu_in_robust_set,
            eps_cert,
            eps_qkd,
            eps_total_sum,
            eps_total_max,
            holds_sum: lhs <= eps_total_sum + TOLERANCE + slack,
            holds_max: lhs <= eps_total_max + TOLERANCE + slack,
            audits,
            live_dims,
        }
    }
}

/// Audits every instance and applies the stipulated-epsilon gate. The gate is
/// enforced when the model lies in the robust set, where the instances must be
/// secure; outside it any stipulation is admissible.
pub fn audit_instances(
    instances: &[InstanceChannel],
    opts: &AuditOptions,
    enforce: bool,
) -> Result<Vec<InstanceAudit>, ComposeError> {
    instances
        .iter()
        .map(|inst| {
            let o = AuditOptions {
                seed: seed::derive_seed(opts.seed, &[inst.index as u64]),
                ..*opts
            };
            let audit = audit_epsilon(inst, &o)?;
            if let Some(e) = inst.stipulated_epsilon {
                if enforce && audit.lower > e + TOLERANCE {
                    return Err(ComposeError::Criterion2 {
                        index: inst.index,
                        lower: audit.lower,
                        stipulated: e,
                    });
                }
            }
            Ok(InstanceAudit {
                index: inst.index,
                audit,
                stipulated: inst.stipulated_epsilon,
                epsilon: inst.stipulated_epsilon.unwrap_or(audit.upper),
            })
        })
        .collect()
}

/// Evaluates both sides of the composed bound after checking the criterion that
/// applies to the model.
pub fn verify_main_bound(s: &Scenario) -> Result<BoundReport, ComposeError> {
    let live_dims = s.check()?;
    let mu_in = in_robust_set(&s.model.params, &s.robust_set)?;
    let audits = audit_instances(&s.instances, &s.audit, mu_in)?;
    let (sigma, approval) = s.initial_state()?;
    if !mu_in {
        let slack = 3.0 * approval.std_error;
        if approval.probability > s.eps_cert + slack + TOLERANCE {
            return Err(ComposeError::Criterion1 {
                probability: approval.probability,
                slack,
                eps_cert: s.eps_cert,
            });
        }
    }
    let joint = run_chain(s, &sigma, gated, false)?;
    let joint_ideal = run_chain(s, &sigma, gated, true)?;
    let joint_distance = trace_distance(&joint, &joint_ideal)?;

    let p = sigma.probability(CERT_REGISTER, 1)?;
    let conditional_distance = if p > 0.0 {
        let (_, cond) = sigma.condition(CERT_REGISTER, 1)?;
        let end = run_conditional(s, &cond)?;
        trace_distance(&end.real, &end.ideal)?
    } else {
        0.0
    };
    let lhs = p * conditional_distance;
    if (lhs - joint_distance).abs() > TOLERANCE {
        return Err(ComposeError::Invariant {
            what: "weighted conditional distance against joint distance".into(),
            lhs,
            rhs: joint_distance,
        });
    }
    Ok(BoundReport::assemble(
        lhs,
        joint_distance,
        conditional_distance,
        approval,
        mu_in,
        s.eps_cert,
        audits,
        live_dims,
        0.0,
    ))
}

/// Phase-coherent source (coherence 1) under the high-loss attack, approved with
/// probability `pr_approve`: Eve holds a perfect copy of the ℓ-bit key.
pub fn build_counterexample(length: usize, pr_approve: f64, rng_seed: u64) -> Result<Scenario, ComposeError> {
    if length > crate::protocol::DEFAULT_MAX_LENGTH {
        return Err(ProtocolError::KeyLength {
            length,
            max: crate::protocol::DEFAULT_MAX_LENGTH,
        }
        .into());
    }
    if !(pr_approve > 0.0 && pr_approve <= 1.0) {
        return Err(ComposeError::InvalidScenario(format!("approval probability {pr_approve} outside (0, 1]")));
    }
    let model = DeviceModel::phase_coherent_source(1.0, length)?;
    let robust = RobustSet::componentwise(&[("coherence", 0.0, 0.1)])?;
    let mut s = Scenario::from_model(
        model,
        AttackSpec::HighLossUsd,
        robust,
        pr_approve,
        InitialState::Joint(approval_state(pr_approve)?),
        1,
        length,
    )?;
    s.instances[0].stipulated_epsilon = Some(0.0);
    s.audit.seed = rng_seed;
    Ok(s)
}

/// Name of the ciphertext register written after instance `j`.
pub fn ciphertext_register_name(j: usize) -> String {
    format!("C{j}")
}

/// One-time pad of `message` with Alice's key: `(K_A, K_B) → (K_A, K_B, C)` where `C`
/// holds `k ⊕ message` when the key has the message's length and the blank symbol
/// `2^ℓ` otherwise.
pub fn otp_leakage_channel(keys: &KeyLayout, message: &str, ciphertext: &str) -> Result<KrausChannel, ComposeError> {
    let length = message.len();
    if length > keys.max_length {
        return Err(ProtocolError::KeyLength {
            length,
            max: keys.max_length,
        }
        .into());
    }
    let m = if length == 0 {
        0
    } else {
        usize::from_str_radix(message, 2)
            .map_err(|_| ComposeError::InvalidScenario(format!("message {message:?} is not a bit string")))?
    };
    let blank = 1usize << length;
    let input = keys.layout();
    let output = input.concat(&Layout::new(vec![Register::classical(ciphertext, blank + 1)])?)?;
    let d = keys.dim();
    let mut branches = Vec::with_capacity(d * d);
    for va in 0..d {
        let (l, k) = keys.decode(va);
        let cval = if l == length { k ^ m } else { blank };
        for vb in 0..d {
            branches.push(vec![Branch {
                output: vec![va, vb, cval],
                ops: vec![CMatrix::from_element(1, 1, c(1.0))],
            }]);
        }
    }
    Ok(KrausChannel::from_branches(input, output, branches)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_channel_passes_and_resets() {
        let input = Layout::new(vec![Register::classical("K", 3), Register::quantum("Q", 2)]).unwrap();
        let output = Layout::new(vec![Register::classical("K", 3), Register::quantum("E", 2)]).unwrap();
        let ch = KrausChannel::new(input.clone(), output, vec![CMatrix::identity(6, 6)]).unwrap();
        let null = null_channel(&ch).unwrap();
        let st = DensityOperator::basis(input, &[2, 1]).unwrap();
        let out = null.apply(&st).unwrap();
        assert!((out.probability("K", 2).unwrap() - 1.0).abs() < 1e-15);
        assert!((out.entry(&[2], 0, 0).re - 1.0).abs() < 1e-15);
    }

    #[test]
    fn otp_with_zero_message_copies_key() {
        let keys = KeyLayout::new(2);
        let ch = otp_leakage_channel(&keys, "00", "C").unwrap();
        let out = ch.apply(&keys.ideal_key_state(2).unwrap()).unwrap();
        for (k, _) in out.blocks() {
            let (_, key) = keys.decode(k[0]);
            assert_eq!(k[2], key);
        }
        assert!(otp_leakage_channel(&keys, "012", "C").is_err());
        assert!(otp_leakage_channel(&keys, "0101", "C").is_err());
    }
}
