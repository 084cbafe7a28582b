use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{approval_state, audit_instances, run_conditional, ComposeError, InitialState, InstanceAudit, Scenario};
use crate::certify::{characterize, per_parameter_distribution, CertificationPlan, ConfidenceInterval, ConfidenceRegion};
use crate::devices::{AttackSpec, DeviceModel, Interval, RobustSet};
use crate::protocol::AuditOptions;
use crate::qstate::{trace_distance, DensityOperator, KrausChannel, DEFAULT_DIMENSION_CAP, TOLERANCE};
use crate::seed;

/// Protocols keyed by confidence region: the first rule whose box contains the
/// region selects its key length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolRule {
    pub region: BTreeMap<String, Interval>,
    pub key_length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolTable {
    pub rules: Vec<ProtocolRule>,
    /// Key length for regions no rule contains; `None` leaves them uncovered.
    pub default_key_length: Option<usize>,
}

impl ProtocolTable {
    /// Index of the protocol selected by a region (`rules.len()` for the default).
    pub fn select(&self, region: &ConfidenceRegion) -> Result<usize, ComposeError> {
        let intervals = region.intervals();
        let hit = self.rules.iter().position(|rule| {
            rule.region
                .iter()
                .all(|(name, b)| intervals.get(name).is_some_and(|i| b.contains_interval(i)))
        });
        match (hit, self.default_key_length) {
            (Some(i), _) => Ok(i),
            (None, Some(_)) => Ok(self.rules.len()),
            (None, None) => Err(ComposeError::UncoveredRegion(format!("{:?}", region.descriptor.0))),
        }
    }

    pub fn key_length(&self, protocol: usize) -> usize {
        self.rules
            .get(protocol)
            .map_or_else(|| self.default_key_length.unwrap_or(0), |r| r.key_length)
    }
}

/// Characterization followed by instances chosen from the region it outputs.
#[derive(Debug, Clone)]
pub struct AdaptiveScenario {
    pub model: DeviceModel,
    pub attack: AttackSpec,
    /// Estimators at level `ε^cert`.
    pub plan: CertificationPlan,
    pub table: ProtocolTable,
    pub n: usize,
    pub max_length: usize,
    /// `σ_{Q₀}`, the same for every region.
    pub initial: DensityOperator,
    /// Empty for identities.
    pub inter_instance: Vec<KrausChannel>,
    pub audit: AuditOptions,
    /// Regions are enumerated exactly up to this many outcomes and sampled beyond.
    pub enumeration_limit: usize,
    pub monte_carlo_trials: u64,
    pub seed: u64,
}

impl AdaptiveScenario {
    /// Defaults: no channels between instances, exact enumeration up to 10³ regions.
    pub fn new(
        model: DeviceModel,
        attack: AttackSpec,
        plan: CertificationPlan,
        table: ProtocolTable,
        n: usize,
        max_length: usize,
    ) -> Self {
        Self {
            model,
            attack,
            plan,
            table,
            n,
            max_length,
            initial: DensityOperator::maximally_mixed(crate::qstate::Layout::empty()),
            inter_instance: Vec::new(),
            audit: AuditOptions::default(),
            enumeration_limit: 1000,
            monte_carlo_trials: 10_000,
            seed: 0,
        }
    }

    /// The fixed-protocol scenario run after region outcomes selecting `protocol`,
    /// with the device always in use.
    pub fn protocol_scenario(&self, protocol: usize) -> Result<Scenario, ComposeError> {
        let mut model = self.model.clone();
        model.key_length = self.table.key_length(protocol);
        let sigma = self.initial.tensor(&approval_state(1.0)?)?;
        let robust = RobustSet::componentwise(&[])?;
        let mut s = Scenario::from_model(
            model,
            self.attack,
            robust,
            self.plan.eps_cert,
            InitialState::Joint(sigma),
            self.n,
            self.max_length,
        )?;
        if !self.inter_instance.is_empty() {
            s.inter_instance = self.inter_instance.clone();
        }
        s.audit = self.audit;
        s.dimension_cap = DEFAULT_DIMENSION_CAP;
        s.check()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaOutcome {
    pub protocol: usize,
    pub key_length: usize,
    /// Total probability of regions selecting this protocol.
    pub probability: f64,
    /// Probability of those regions that miss the true parameters.
    pub miss_probability: f64,
    pub conditional_distance: f64,
    pub audits: Vec<InstanceAudit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveReport {
    /// `Σ_λ Pr[Λ=λ]·d(real | λ, ideal | λ)`.
    pub lhs: f64,
    pub eps_cert: f64,
    pub eps_qkd: Vec<f64>,
    pub eps_total_sum: f64,
    pub eps_total_max: f64,
    pub holds_sum: bool,
    pub holds_max: bool,
    /// `Pr[μ ∉ Λ]`.
    pub miss_probability: f64,
    pub enumerated: bool,
    pub regions: usize,
    /// Standard error of Monte Carlo estimates (zero when enumerated).
    pub mc_error: f64,
    pub outcomes: Vec<LambdaOutcome>,
}

/// Distribution of the snapped region over all count outcomes, or `None` when it
/// has more than `limit` outcomes or some observable is continuous.
fn enumerate_regions(s: &AdaptiveScenario) -> Result<Option<Vec<(ConfidenceRegion, f64)>>, ComposeError> {
    let mut per = Vec::with_capacity(s.plan.entries.len());
    let mut count = 1usize;
    for e in &s.plan.entries {
        let Some(dist) = per_parameter_distribution(&s.model, e, s.plan.eps_cert)? else {
            return Ok(None);
        };
        count = count.saturating_mul(dist.len());
        if count > s.enumeration_limit {
            return Ok(None);
        }
        per.push((e.parameter.clone(), dist));
    }
    let mut combos: Vec<(Vec<ConfidenceInterval>, f64)> = vec![(Vec::new(), 1.0)];
    for (name, dist) in &per {
        combos = combos
            .into_iter()
            .flat_map(|(cis, w)| {
                dist.iter().map(move |(iv, p)| {
                    let mut next = cis.clone();
                    next.push(ConfidenceInterval {
                        parameter: name.clone(),
                        low: iv.low,
                        high: iv.high,
                        level: s.plan.eps_cert,
                    });
                    (next, w * p)
                })
            })
            .collect();
    }
    Ok(Some(
        combos
            .into_iter()
            .map(|(cis, w)| (ConfidenceRegion::from_intervals(&cis, s.plan.eps_cert), w))
            .collect(),
    ))
}

/// Evaluates the adaptive bound by averaging the fixed-protocol distance over the
/// characterization's regions.
pub fn verify_adaptive_bound(s: &AdaptiveScenario) -> Result<AdaptiveReport, ComposeError> {
    if s.n == 0 {
        return Err(ComposeError::InvalidScenario("no instances".into()));
    }
    let mu = &s.model.params;
    // (protocol) -> (probability, miss probability, per-trial indicator list for MC)
    let mut weights: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    let (enumerated, regions, samples) = match enumerate_regions(s)? {
        Some(dist) => {
            let regions = dist.len();
            for (region, w) in &dist {
                let p = s.table.select(region)?;
                let slot = weights.entry(p).or_default();
                slot.0 += w;
                if !region.contains(mu) {
                    slot.1 += w;
                }
            }
            (true, regions, Vec::new())
        }
        None => {
            if s.monte_carlo_trials == 0 {
                return Err(ComposeError::InvalidScenario("region sampling needs trials".into()));
            }
            let draws = (0..s.monte_carlo_trials)
                .into_par_iter()
                .map(|t| {
                    let region = characterize(&s.model, &s.plan, seed::derive_seed(s.seed, &[t]))?;
                    Ok((s.table.select(&region)?, !region.contains(mu)))
                })
                .collect::<Result<Vec<(usize, bool)>, ComposeError>>()?;
            let w = 1.0 / draws.len() as f64;
            for (p, miss) in &draws {
                let slot = weights.entry(*p).or_default();
                slot.0 += w;
                if *miss {
                    slot.1 += w;
                }
            }
            (false, draws.len(), draws)
        }
    };

    let mut outcomes = Vec::with_capacity(weights.len());
    for (&protocol, &(probability, miss_probability)) in &weights {
        let fixed = s.protocol_scenario(protocol)?;
        let audits = audit_instances(&fixed.instances, &fixed.audit, false)?;
        let (sigma, _) = fixed.initial_state()?;
        let (_, cond) = sigma.condition(super::CERT_REGISTER, 1)?;
        let end = run_conditional(&fixed, &cond)?;
        outcomes.push(LambdaOutcome {
            protocol,
            key_length: s.table.key_length(protocol),
            probability,
            miss_probability,
            conditional_distance: trace_distance(&end.real, &end.ideal)?,
            audits,
        });
    }

    // ε_j: worst audited value over protocols reachable from regions containing μ.
    let mut eps_qkd = vec![0.0f64; s.n];
    for o in outcomes.iter().filter(|o| o.probability - o.miss_probability > 0.0) {
        for (j, a) in o.audits.iter().enumerate() {
            eps_qkd[j] = eps_qkd[j].max(a.epsilon);
        }
    }
    let miss_probability: f64 = outcomes.iter().map(|o| o.miss_probability).sum();
    let lhs: f64 = outcomes.iter().map(|o| o.probability * o.conditional_distance).sum();
    let mc_error = if enumerated {
        0.0
    } else {
        let dist: BTreeMap<usize, f64> = outcomes.iter().map(|o| (o.protocol, o.conditional_distance)).collect();
        let vals: Vec<f64> = samples.iter().map(|(p, _)| dist[p]).collect();
        let m = vals.len() as f64;
        let var = vals.iter().map(|v| (v - lhs).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
        let miss_var = miss_probability * (1.0 - miss_probability);
        (var / m).sqrt().max((miss_var / m).sqrt())
    };
    let eps_cert = s.plan.eps_cert;
    if miss_probability > eps_cert + 3.0 * mc_error + TOLERANCE {
        return Err(ComposeError::Criterion1 {
            probability: miss_probability,
            slack: 3.0 * mc_error,
            eps_cert,
        });
    }
    let total: f64 = eps_qkd.iter().sum();
    let eps_total_sum = eps_cert + total;
    let eps_total_max = eps_cert.max(total);
    let slack = TOLERANCE + 3.0 * mc_error;
    Ok(AdaptiveReport {
        lhs,
        eps_cert,
        eps_qkd,
        eps_total_sum,
        eps_total_max,
        holds_sum: lhs <= eps_total_sum + slack,
        holds_max: lhs <= eps_total_max + slack,
        miss_probability,
        enumerated,
        regions,
        mc_error,
        outcomes,
    })
}
