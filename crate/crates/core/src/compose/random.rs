//! Seeded random scenarios for checking the composed bounds.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ciphertext_register_name, otp_leakage_channel, ComposeError, InitialState, Scenario, MAX_STATE_ENTRIES};
use crate::certify::{ApprovalRule, CertificationPlan, Estimator, Side};
use crate::devices::{AttackSpec, DeviceModel, RobustSet};
use crate::protocol::{AuditOptions, InstanceChannel, KeyLayout};
use crate::qstate::linalg::{self, c, CMatrix};
use crate::qstate::random::{gaussian_matrix, haar_unitary, random_channel, random_state};
use crate::qstate::{Branch, DensityOperator, KrausChannel, Layout, Register, DEFAULT_DIMENSION_CAP};
use crate::seed;

/// Largest key length of random instances.
pub const RANDOM_MAX_LENGTH: usize = 1;

pub fn link_register_name(j: usize) -> String {
    format!("Q{j}")
}

fn qubit(name: String) -> Register {
    Register::quantum(name, 2)
}

/// Kraus families `A_{o,i}` (`o < outcomes`, `i < ops`) normalized to a complete instrument.
fn random_instrument<R: Rng + ?Sized>(outcomes: usize, ops: usize, dout: usize, din: usize, rng: &mut R) -> Vec<Vec<CMatrix>> {
    let raw: Vec<Vec<CMatrix>> = (0..outcomes)
        .map(|_| (0..ops).map(|_| gaussian_matrix(dout, din, rng)).collect())
        .collect();
    let mut s = CMatrix::zeros(din, din);
    for k in raw.iter().flatten() {
        s += k.adjoint() * k;
    }
    let (vals, vecs) = linalg::hermitian_eigen(&s);
    let inv_sqrt = linalg::spectral_map(&vals, &vecs, |l| 1.0 / l.sqrt());
    raw.into_iter()
        .map(|list| list.into_iter().map(|k| k * &inv_sqrt).collect())
        .collect()
}

/// Instance `j`: `Q_{j−1} → K_A K_B E_j Q_j` with qubits `E_j`, `Q_j`. A mixture of a
/// secure instrument (ideal keys of a measured length, independent of everything
/// else) with weight `1 − insecurity` and an instrument whose key values are
/// correlated with the quantum outputs.
pub fn random_instance<R: Rng + ?Sized>(j: usize, insecurity: f64, rng: &mut R) -> Result<InstanceChannel, ComposeError> {
    let keys = KeyLayout::for_instance(RANDOM_MAX_LENGTH, j);
    let input = Layout::new(vec![qubit(link_register_name(j - 1))])?;
    let output = keys.layout().concat(&Layout::new(vec![
        qubit(crate::devices::eve_register_name(j)),
        qubit(link_register_name(j)),
    ])?)?;
    let ops = rng.random_range(1..=2);
    let secure_ops = random_instrument(2, ops, 4, 2, rng);
    let half = std::f64::consts::FRAC_1_SQRT_2;
    let mut secure = vec![Branch {
        output: vec![0, 0],
        ops: secure_ops[0].clone(),
    }];
    for k in 0..2 {
        let v = keys.value(1, k);
        secure.push(Branch {
            output: vec![v, v],
            ops: secure_ops[1].iter().map(|a| a.scale(half)).collect(),
        });
    }
    let leaky_ops = random_instrument(3, ops, 4, 2, rng);
    let leaky = leaky_ops
        .into_iter()
        .enumerate()
        .map(|(v, ops)| Branch { output: vec![v, v], ops })
        .collect();
    let secure = KrausChannel::from_branches(input.clone(), output.clone(), vec![secure])?;
    let leaky = KrausChannel::from_branches(input, output, vec![leaky])?;
    let ch = KrausChannel::mixture(&[(1.0 - insecurity, &secure), (insecurity, &leaky)])?;
    Ok(InstanceChannel::new(j, ch, keys, None)?)
}

/// Kinds of channels placed between random instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterKind {
    /// One-time pad of a random bit with Alice's key, ciphertext kept.
    Otp,
    /// Random unitary on `Q_j` selected by Alice's key.
    KeyControlledUnitary,
    /// Trace out `E_j`.
    DiscardEve,
    /// Random channel `E_j Q_j → Q_j`.
    Scramble,
}

impl InterKind {
    pub const ALL: [InterKind; 4] = [Self::Otp, Self::KeyControlledUnitary, Self::DiscardEve, Self::Scramble];
    /// Kinds that drop `E_j`.
    pub const SHRINKING: [InterKind; 2] = [Self::DiscardEve, Self::Scramble];
}

/// The channel `F_j` of the given kind following a random instance.
pub fn random_inter_channel<R: Rng + ?Sized>(
    kind: InterKind,
    inst: &InstanceChannel,
    rng: &mut R,
) -> Result<KrausChannel, ComposeError> {
    let j = inst.index;
    let eve = qubit(crate::devices::eve_register_name(j));
    let link = qubit(link_register_name(j));
    Ok(match kind {
        InterKind::Otp => {
            let message = if rng.random_bool(0.5) { "1" } else { "0" };
            otp_leakage_channel(&inst.keys, message, &ciphertext_register_name(j))?
        }
        InterKind::KeyControlledUnitary => {
            let layout = Layout::new(vec![link])?;
            let arms = (0..inst.keys.dim())
                .map(|_| KrausChannel::unitary(layout.clone(), haar_unitary(2, rng)))
                .collect::<Result<Vec<_>, _>>()?;
            KrausChannel::controlled(inst.keys.alice_register(), &arms)?
        }
        InterKind::DiscardEve => {
            let ops = (0..2)
                .map(|m| CMatrix::from_fn(1, 2, |_, i| if i == m { c(1.0) } else { c(0.0) }))
                .collect();
            KrausChannel::new(Layout::new(vec![eve])?, Layout::empty(), ops)?
        }
        InterKind::Scramble => {
            let ops = rng.random_range(1..=3);
            random_channel(&Layout::new(vec![eve, link.clone()])?, &Layout::new(vec![link])?, ops, rng)?
        }
    })
}

/// Two random instances and a random state on `Q_0`.
pub fn random_two_instance<R: Rng + ?Sized>(
    insecurity_1: f64,
    insecurity_2: f64,
    rng: &mut R,
) -> Result<(InstanceChannel, InstanceChannel, DensityOperator), ComposeError> {
    let e1 = random_instance(1, insecurity_1, rng)?;
    let e2 = random_instance(2, insecurity_2, rng)?;
    let sigma = random_state(&Layout::new(vec![qubit(link_register_name(0))])?, rng);
    Ok((e1, e2, sigma))
}

/// Dark-count interval of the robust set used by random scenarios.
pub const RANDOM_ROBUST_DARK: (f64, f64) = (0.0, 0.05);

/// A random scenario with `1 ≤ n ≤ max_n` instances. Even seeds give a model inside
/// the robust set (instances slightly insecure, epsilons audited), odd seeds a model
/// outside it (instances arbitrary, epsilons stipulated at random).
pub fn random_scenario(rng_seed: u64, max_n: usize) -> Result<Scenario, ComposeError> {
    let mut rng = seed::rng_for(rng_seed, &[]);
    let inside = rng_seed.is_multiple_of(2);
    let n = rng.random_range(1..=max_n.max(1));
    let dark = if inside {
        rng.random_range(RANDOM_ROBUST_DARK.0..RANDOM_ROBUST_DARK.1)
    } else {
        rng.random_range(0.051..0.09)
    };
    let model = DeviceModel::iid_detector(dark, RANDOM_MAX_LENGTH)?;
    let robust = RobustSet::componentwise(&[("dark", RANDOM_ROBUST_DARK.0, RANDOM_ROBUST_DARK.1)])?;
    let eps_cert = [0.01, 0.05, 0.1][rng.random_range(0..3)];
    let trials = rng.random_range(50..=400);
    let plan = CertificationPlan::uniform(&["dark"], Estimator::ClopperPearson { side: Side::Two }, trials, eps_cert)?;
    let q0 = Layout::new(vec![qubit(link_register_name(0))])?;
    let initial = InitialState::Certified {
        plan,
        rule: ApprovalRule::Containment,
        rejected: random_state(&q0, &mut rng),
        approved: random_state(&q0, &mut rng),
        monte_carlo_trials: 0,
        seed: rng_seed,
    };
    let mut instances = Vec::with_capacity(n);
    let mut inter = Vec::with_capacity(n.saturating_sub(1));
    let (mut classical, mut quantum) = (2usize, 2usize);
    for j in 1..=n {
        let insecurity = if inside {
            rng.random_range(0.0..0.2)
        } else {
            rng.random_range(0.0..1.0)
        };
        let mut inst = random_instance(j, insecurity, &mut rng)?;
        if !inside {
            inst.stipulated_epsilon = Some(rng.random_range(0.0..0.05));
        }
        classical *= inst.keys.dim() * inst.keys.dim();
        quantum *= 2;
        if j < n {
            // Growing channels only while the remaining instances still fit.
            let rest = 9usize.pow((n - j) as u32);
            let kinds: &[InterKind] = if classical * 3 * rest * (4 * quantum * quantum) <= MAX_STATE_ENTRIES {
                &InterKind::ALL
            } else {
                &InterKind::SHRINKING
            };
            let kind = kinds[rng.random_range(0..kinds.len())];
            match kind {
                InterKind::Otp => classical *= 3,
                InterKind::KeyControlledUnitary => {}
                InterKind::DiscardEve | InterKind::Scramble => quantum /= 2,
            }
            inter.push(random_inter_channel(kind, &inst, &mut rng)?);
        }
        instances.push(inst);
    }
    let s = Scenario {
        model,
        attack: AttackSpec::None,
        robust_set: robust,
        eps_cert,
        initial,
        instances,
        inter_instance: inter,
        audit: AuditOptions {
            seed: rng_seed,
            samples: 50,
            ..AuditOptions::default()
        },
        dimension_cap: DEFAULT_DIMENSION_CAP,
    };
    s.check()?;
    Ok(s)
}
