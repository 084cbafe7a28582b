//! Confidence intervals and regions, the approval rule, and Monte Carlo validators.

mod interval;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, Discrete};

pub use interval::{clopper_pearson, hoeffding_delta, hoeffding_interval, ConfidenceInterval, Estimator, Side};

use crate::devices::{
    in_robust_set, sample_with, DeviceError, DeviceModel, Interval, Observable, Observation, ParameterVector,
    RobustSet,
};
use crate::seed;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum CertifyError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("plan does not match robust set: {0}")]
    PlanMismatch(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

/// How one parameter is estimated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub parameter: String,
    pub estimator: Estimator,
    pub trials: u64,
}

/// Per-parameter estimators, each run at level `ε^cert`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationPlan {
    pub entries: Vec<PlanEntry>,
    pub eps_cert: f64,
}

impl CertificationPlan {
    pub fn new(entries: Vec<PlanEntry>, eps_cert: f64) -> Result<Self, CertifyError> {
        if !(eps_cert > 0.0 && eps_cert < 1.0) {
            return Err(CertifyError::InvalidInput(format!("eps_cert {eps_cert} outside (0, 1)")));
        }
        for (i, e) in entries.iter().enumerate() {
            if entries[..i].iter().any(|o| o.parameter == e.parameter) {
                return Err(CertifyError::InvalidInput(format!("parameter {} planned twice", e.parameter)));
            }
            if e.trials == 0 && !matches!(e.estimator, Estimator::Fixed { .. }) {
                return Err(CertifyError::InvalidInput(format!("no trials for {}", e.parameter)));
            }
        }
        Ok(Self { entries, eps_cert })
    }

    /// One entry with the same estimator and trial count for each named parameter.
    pub fn uniform(parameters: &[&str], estimator: Estimator, trials: u64, eps_cert: f64) -> Result<Self, CertifyError> {
        Self::new(
            parameters
                .iter()
                .map(|p| PlanEntry {
                    parameter: (*p).to_string(),
                    estimator,
                    trials,
                })
                .collect(),
            eps_cert,
        )
    }

    fn check_covers(&self, s: &RobustSet) -> Result<(), CertifyError> {
        let intervals = s
            .intervals()
            .ok_or_else(|| CertifyError::PlanMismatch("certification needs a componentwise robust set".into()))?;
        for name in intervals.keys() {
            if !self.entries.iter().any(|e| &e.parameter == name) {
                return Err(CertifyError::PlanMismatch(format!("no estimator for {name}")));
            }
        }
        Ok(())
    }
}

/// Approval rules. Only containment gives the rejection guarantee; the overlap rule
/// exists as a negative control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ApprovalRule {
    /// Approve iff every interval lies inside its robust interval.
    #[default]
    Containment,
    /// Approve iff every interval meets its robust interval.
    Overlap,
}

impl ApprovalRule {
    pub fn approves(&self, ci: &Interval, robust: &Interval) -> bool {
        match self {
            Self::Containment => robust.contains_interval(ci),
            Self::Overlap => robust.overlaps(ci),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub parameter: String,
    pub observation: Observation,
    pub seed: u64,
}

/// Result of one certification run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationOutcome {
    /// The register `F`.
    pub approved: bool,
    pub intervals: Vec<ConfidenceInterval>,
    pub transcript: Vec<TranscriptEntry>,
}

fn observe(model: &DeviceModel, plan: &CertificationPlan, rng_seed: u64) -> Result<Vec<(ConfidenceInterval, TranscriptEntry)>, CertifyError> {
    plan.entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let s = seed::derive_seed(rng_seed, &[i as u64]);
            let mut rng = seed::rng_for(s, &[]);
            let obs = sample_with(model, &e.parameter, e.trials, &mut rng)?;
            let ci = e.estimator.interval(&e.parameter, &obs, plan.eps_cert)?;
            Ok((
                ci,
                TranscriptEntry {
                    parameter: e.parameter.clone(),
                    observation: obs,
                    seed: s,
                },
            ))
        })
        .collect()
}

fn decide(intervals: &[ConfidenceInterval], s: &RobustSet, rule: ApprovalRule) -> bool {
    let robust = s.intervals().expect("checked componentwise");
    robust.iter().all(|(name, r)| {
        intervals
            .iter()
            .find(|ci| &ci.parameter == name)
            .is_some_and(|ci| rule.approves(&ci.interval(), r))
    })
}

/// Samples every planned observable, builds one interval per parameter at level
/// `ε^cert` and approves iff all are contained in their robust intervals.
pub fn certify(
    model: &DeviceModel,
    s: &RobustSet,
    plan: &CertificationPlan,
    rng_seed: u64,
) -> Result<CertificationOutcome, CertifyError> {
    certify_with_rule(model, s, plan, ApprovalRule::Containment, rng_seed)
}

pub fn certify_with_rule(
    model: &DeviceModel,
    s: &RobustSet,
    plan: &CertificationPlan,
    rule: ApprovalRule,
    rng_seed: u64,
) -> Result<CertificationOutcome, CertifyError> {
    plan.check_covers(s)?;
    let (intervals, transcript): (Vec<_>, Vec<_>) = observe(model, plan, rng_seed)?.into_iter().unzip();
    Ok(CertificationOutcome {
        approved: decide(&intervals, s, rule),
        intervals,
        transcript,
    })
}

/// Exact `Pr[F = 1]` when every planned parameter is counted (Bernoulli trials);
/// `None` if some observable is continuous.
pub fn approval_probability(
    model: &DeviceModel,
    s: &RobustSet,
    plan: &CertificationPlan,
    rule: ApprovalRule,
) -> Result<Option<f64>, CertifyError> {
    plan.check_covers(s)?;
    let robust = s.intervals().expect("checked componentwise");
    let mut total = 1.0;
    for e in &plan.entries {
        let Some(r) = robust.get(&e.parameter) else { continue };
        let p = per_parameter_distribution(model, e, plan.eps_cert)?;
        let Some(dist) = p else { return Ok(None) };
        total *= dist
            .iter()
            .filter(|(ci, _)| rule.approves(ci, r))
            .map(|(_, w)| w)
            .sum::<f64>();
    }
    Ok(Some(total))
}

/// Every interval the estimator can output for this parameter, with its probability.
pub(crate) fn per_parameter_distribution(
    model: &DeviceModel,
    e: &PlanEntry,
    level: f64,
) -> Result<Option<Vec<(Interval, f64)>>, CertifyError> {
    if let Estimator::Fixed { low, high } = e.estimator {
        return Ok(Some(vec![(Interval::new(low, high), 1.0)]));
    }
    if model.observable(&e.parameter)? != Observable::Bernoulli {
        return Ok(None);
    }
    let mu = model.params.require(&e.parameter)?;
    let bin = Binomial::new(mu, e.trials).map_err(|err| CertifyError::InvalidInput(err.to_string()))?;
    let mut out = Vec::with_capacity(e.trials as usize + 1);
    for k in 0..=e.trials {
        let w = bin.pmf(k);
        if w > 0.0 {
            let obs = Observation::Count {
                successes: k,
                trials: e.trials,
            };
            out.push((e.estimator.interval(&e.parameter, &obs, level)?.interval(), w));
        }
    }
    Ok(Some(out))
}

/// Grid resolution of region descriptors.
pub const GRID: f64 = 1e-6;

/// A product of per-parameter intervals on the `10⁻⁶` grid, at level `ε`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RegionDescriptor(pub Vec<(String, i64, i64)>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRegion {
    pub level: f64,
    pub descriptor: RegionDescriptor,
}

impl ConfidenceRegion {
    /// Snap intervals outward to the grid.
    pub fn from_intervals(intervals: &[ConfidenceInterval], level: f64) -> Self {
        let mut cells: Vec<(String, i64, i64)> = intervals
            .iter()
            .map(|ci| {
                (
                    ci.parameter.clone(),
                    (ci.low / GRID).floor() as i64,
                    (ci.high / GRID).ceil() as i64,
                )
            })
            .collect();
        cells.sort();
        Self {
            level,
            descriptor: RegionDescriptor(cells),
        }
    }

    pub fn interval(&self, parameter: &str) -> Option<Interval> {
        self.descriptor
            .0
            .iter()
            .find(|(n, _, _)| n == parameter)
            .map(|(_, lo, hi)| Interval::new(*lo as f64 * GRID, *hi as f64 * GRID))
    }

    pub fn intervals(&self) -> BTreeMap<String, Interval> {
        self.descriptor
            .0
            .iter()
            .map(|(n, lo, hi)| (n.clone(), Interval::new(*lo as f64 * GRID, *hi as f64 * GRID)))
            .collect()
    }

    /// Every constrained parameter lies in its interval (others are unconstrained).
    pub fn contains(&self, mu: &ParameterVector) -> bool {
        self.descriptor.0.iter().all(|(n, lo, hi)| {
            mu.get(n)
                .is_some_and(|v| (*lo as f64 * GRID) <= v && v <= (*hi as f64 * GRID))
        })
    }
}

/// The product of the plan's intervals, snapped outward, as a confidence region.
pub fn characterize(model: &DeviceModel, plan: &CertificationPlan, rng_seed: u64) -> Result<ConfidenceRegion, CertifyError> {
    let (intervals, _): (Vec<_>, Vec<_>) = observe(model, plan, rng_seed)?.into_iter().unzip();
    Ok(ConfidenceRegion::from_intervals(&intervals, plan.eps_cert))
}

/// `3·sqrt(ε(1 − ε)/trials)`.
pub fn three_sigma(eps: f64, trials: u64) -> f64 {
    3.0 * (eps * (1.0 - eps) / trials as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion1Report {
    pub trials: u64,
    pub approvals: u64,
    pub approval_rate: f64,
    /// `ε^cert + 3σ`.
    pub threshold: f64,
    pub bound_ok: bool,
}

/// Approval frequency of a model outside `S` over `trials` seeded certifications.
pub fn validate_criterion_1(
    model: &DeviceModel,
    s: &RobustSet,
    plan: &CertificationPlan,
    trials: u64,
    rng_seed: u64,
) -> Result<Criterion1Report, CertifyError> {
    validate_with_rule(model, s, plan, ApprovalRule::Containment, trials, rng_seed)
}

pub fn validate_with_rule(
    model: &DeviceModel,
    s: &RobustSet,
    plan: &CertificationPlan,
    rule: ApprovalRule,
    trials: u64,
    rng_seed: u64,
) -> Result<Criterion1Report, CertifyError> {
    if trials == 0 {
        return Err(CertifyError::InvalidInput("trials must be positive".into()));
    }
    if in_robust_set(&model.params, s)? {
        return Err(CertifyError::Precondition("model parameters lie inside the robust set".into()));
    }
    plan.check_covers(s)?;
    let approvals = (0..trials)
        .into_par_iter()
        .map(|t| certify_with_rule(model, s, plan, rule, seed::derive_seed(rng_seed, &[t])).map(|o| o.approved as u64))
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    let approval_rate = approvals as f64 / trials as f64;
    let threshold = plan.eps_cert + three_sigma(plan.eps_cert, trials);
    Ok(Criterion1Report {
        trials,
        approvals,
        approval_rate,
        threshold,
        bound_ok: approval_rate <= threshold,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub estimator: Estimator,
    pub mu: f64,
    pub n: u64,
    pub level: f64,
    pub trials: u64,
    pub coverage: f64,
    /// `1 − ε − 3σ`.
    pub threshold: f64,
    pub pass: bool,
}

/// Fraction of seeded runs whose interval contains the true `μ`.
pub fn coverage_test(
    estimator: Estimator,
    observable: Observable,
    mu: f64,
    n: u64,
    level: f64,
    trials: u64,
    rng_seed: u64,
) -> Result<CoverageReport, CertifyError> {
    if trials == 0 {
        return Err(CertifyError::InvalidInput("trials must be positive".into()));
    }
    let mut model = DeviceModel::iid_detector(0.0, 0)?;
    model.params = model.params.with("mu", mu);
    model.extra_observables.insert("mu".into(), observable);
    model.validate()?;
    let draws = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::rng_for(rng_seed, &[t]);
            sample_with(&model, "mu", n, &mut rng)
        })
        .collect::<Result<Vec<_>, _>>()?;
    // Count observations repeat, so each distinct count is inverted once.
    let mut by_count: BTreeMap<u64, bool> = BTreeMap::new();
    let mut hits = 0u64;
    for obs in &draws {
        let covered = match obs {
            Observation::Count { successes, .. } => match by_count.get(successes) {
                Some(c) => *c,
                None => {
                    let c = estimator.interval("mu", obs, level)?.contains(mu);
                    by_count.insert(*successes, c);
                    c
                }
            },
            Observation::Mean { .. } => estimator.interval("mu", obs, level)?.contains(mu),
        };
        hits += covered as u64;
    }
    let coverage = hits as f64 / trials as f64;
    let threshold = 1.0 - level - three_sigma(level, trials);
    Ok(CoverageReport {
        estimator,
        mu,
        n,
        level,
        trials,
        coverage,
        threshold,
        pass: coverage >= threshold,
    })
}
