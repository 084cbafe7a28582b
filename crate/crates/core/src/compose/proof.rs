use rand::Rng;
use serde::{Deserialize, Serialize};

use super::random::{random_inter_channel, random_two_instance, InterKind};
use super::{audit_instances, ComposeError};
use crate::protocol::AuditOptions;
use crate::qstate::random::{random_channel, random_state};
use crate::qstate::{trace_distance, DensityOperator, KrausChannel, Layout, Register};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProofStepReport {
    pub trials: u64,
    pub telescoping_trials: u64,
    /// `max(d(a, c) − d(a, b) − d(b, c))` over random state triples.
    pub triangle_max_violation: f64,
    /// `max(d(Φ[a], Φ[b]) − d(a, b))` over random channels and state pairs.
    pub dpi_max_violation: f64,
    /// Largest violation of any link in the two-instance chain.
    pub telescoping_max_violation: f64,
    /// Largest two-instance distance observed, for scale.
    pub telescoping_max_distance: f64,
}

impl ProofStepReport {
    pub fn max_violation(&self) -> f64 {
        self.triangle_max_violation
            .max(self.dpi_max_violation)
            .max(self.telescoping_max_violation)
    }
}

/// Random layout with total dimension at most 8, sometimes with a classical register.
fn random_layout<R: Rng + ?Sized>(rng: &mut R, prefix: &str) -> Layout {
    let mut regs = Vec::new();
    let mut budget = 8usize;
    if rng.random_bool(0.5) {
        let d = rng.random_range(2..=3);
        regs.push(Register::classical(format!("{prefix}c"), d));
        budget /= d;
    }
    let d = rng.random_range(2..=budget.max(2));
    regs.push(Register::quantum(format!("{prefix}q"), d));
    Layout::new(regs).expect("distinct names")
}

/// The three ingredients of the composed bound on random instances: the triangle
/// inequality, contraction under channels, and the two-instance chain
/// `d(A, C) ≤ d(A, B) + d(B, C) ≤ d(Ē₁σ, 𝒦₁Ē₁σ) + d(B, C) ≤ ε₁ + ε₂` with
/// `A = Ē₂Ē₁σ`, `B = Ē₂𝒦₁Ē₁σ`, `C = 𝒦₂Ē₂𝒦₁Ē₁σ`.
pub fn proof_step_audit(rng_seed: u64, trials: u64, telescoping_trials: u64) -> Result<ProofStepReport, ComposeError> {
    use rayon::prelude::*;
    if trials == 0 {
        return Err(ComposeError::InvalidScenario("proof-step audit needs trials".into()));
    }
    let single = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::rng_for(rng_seed, &[0, t]);
            let layout = random_layout(&mut rng, "X");
            let [a, b, c] = [0; 3].map(|_| random_state(&layout, &mut rng));
            let tri = trace_distance(&a, &c)? - trace_distance(&a, &b)? - trace_distance(&b, &c)?;
            let out = random_layout(&mut rng, "Y");
            let ops = rng.random_range(1..=4);
            let ch = random_channel(&layout, &out, ops, &mut rng)?;
            let dpi = trace_distance(&ch.apply(&a)?, &ch.apply(&b)?)? - trace_distance(&a, &b)?;
            Ok((tri.max(0.0), dpi.max(0.0)))
        })
        .collect::<Result<Vec<(f64, f64)>, ComposeError>>()?;
    let tele = (0..telescoping_trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::rng_for(rng_seed, &[1, t]);
            let kind = InterKind::ALL[rng.random_range(0..InterKind::ALL.len())];
            let t1 = rng.random_range(0.0..1.0);
            let t2 = rng.random_range(0.0..1.0);
            let (e1, e2, sigma) = random_two_instance(t1, t2, &mut rng)?;
            let f1 = random_inter_channel(kind, &e1, &mut rng)?;
            telescoping_violation(&e1, &f1, &e2, &sigma, rng_seed ^ t)
        })
        .collect::<Result<Vec<(f64, f64)>, ComposeError>>()?;
    let fold = |it: &mut dyn Iterator<Item = f64>| it.fold(0.0f64, f64::max);
    Ok(ProofStepReport {
        trials,
        telescoping_trials,
        triangle_max_violation: fold(&mut single.iter().map(|p| p.0)),
        dpi_max_violation: fold(&mut single.iter().map(|p| p.1)),
        telescoping_max_violation: fold(&mut tele.iter().map(|p| p.0)),
        telescoping_max_distance: fold(&mut tele.iter().map(|p| p.1)),
    })
}

/// Largest violation along the two-instance chain, and `d(A, C)`.
pub(crate) fn telescoping_violation(
    e1: &crate::protocol::InstanceChannel,
    f1: &KrausChannel,
    e2: &crate::protocol::InstanceChannel,
    sigma: &DensityOperator,
    audit_seed: u64,
) -> Result<(f64, f64), ComposeError> {
    let k1 = e1.keys.key_replacement_channel();
    let k2 = e2.keys.key_replacement_channel();
    let bar2 = |x: &DensityOperator| -> Result<DensityOperator, ComposeError> { Ok(e2.channel.apply(&f1.apply(x)?)?) };
    let r1 = e1.channel.apply(sigma)?;
    let r1_ideal = k1.apply(&r1)?;
    let a = bar2(&r1)?;
    let b = bar2(&r1_ideal)?;
    let c = k2.apply(&b)?;
    let opts = AuditOptions {
        seed: audit_seed,
        samples: 50,
        ..AuditOptions::default()
    };
    let audits = audit_instances(&[e1.clone(), e2.clone()], &opts, false)?;
    let d_ac = trace_distance(&a, &c)?;
    let d_ab = trace_distance(&a, &b)?;
    let d_bc = trace_distance(&b, &c)?;
    let d_first = trace_distance(&r1, &r1_ideal)?;
    let violation = [
        d_ac - d_ab - d_bc,
        d_ab - d_first,
        d_first - audits[0].audit.upper,
        d_bc - audits[1].audit.upper,
        d_ac - audits[0].audit.upper - audits[1].audit.upper,
    ]
    .into_iter()
    .fold(0.0f64, f64::max);
    Ok((violation, d_ac))
}
