//! The randomized verification suite: one pass/fail record per acceptance check.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certify::{
    coverage_test, validate_criterion_1, validate_with_rule, ApprovalRule, CertificationPlan, Estimator, PlanEntry,
    Side,
};
use crate::compose::random::{random_instance, random_scenario};
use crate::compose::{
    approval_state, build_counterexample, proof_step_audit, run_sequence, verify_adaptive_bound, verify_main_bound,
    AdaptiveScenario, ComposeError, InitialState, ProtocolRule, ProtocolTable, Scenario, CERT_REGISTER,
};
use crate::devices::{instance_channel, AttackSpec, DeviceModel, Interval, Observable, RobustSet};
use crate::protocol::{audit_epsilon, eve_guessing_probability, AuditOptions, InstanceChannel};
use crate::qstate::linalg::{c, CMatrix};
use crate::qstate::random::haar_unitary;
use crate::qstate::{diamond_norm_bounds, ChannelDifference, DiamondOptions, KrausChannel, Layout, Register};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sizes {
    Tiny,
    #[default]
    Default,
    Large,
}

impl std::str::FromStr for Sizes {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "tiny" => Ok(Self::Tiny),
            "default" => Ok(Self::Default),
            "large" => Ok(Self::Large),
            other => Err(format!("unknown size {other:?} (tiny, default, large)")),
        }
    }
}

/// Trial counts for each check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteSizes {
    pub scenarios: u64,
    pub max_instances: usize,
    pub rate_trials: u64,
    pub coverage_trials: u64,
    pub proof_trials: u64,
    pub telescoping_trials: u64,
    pub random_audit_instances: u64,
}

impl Sizes {
    pub fn counts(self) -> SuiteSizes {
        match self {
            Self::Tiny => SuiteSizes {
                scenarios: 12,
                max_instances: 3,
                rate_trials: 400,
                coverage_trials: 400,
                proof_trials: 100,
                telescoping_trials: 10,
                random_audit_instances: 4,
            },
            Self::Default => SuiteSizes {
                scenarios: 100,
                max_instances: 5,
                rate_trials: 10_000,
                coverage_trials: 10_000,
                proof_trials: 1_000,
                telescoping_trials: 100,
                random_audit_instances: 20,
            },
            Self::Large => SuiteSizes {
                scenarios: 300,
                max_instances: 5,
                rate_trials: 40_000,
                coverage_trials: 40_000,
                proof_trials: 4_000,
                telescoping_trials: 400,
                random_audit_instances: 60,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub id: u32,
    pub name: String,
    pub pass: bool,
    /// The quantity compared against `threshold`.
    pub metric: f64,
    pub threshold: f64,
    pub detail: String,
    #[serde(skip)]
    pub elapsed: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub sizes: SuiteSizes,
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn timed(f: impl FnOnce() -> CheckResult) -> CheckResult {
    let t = Instant::now();
    let mut r = f();
    r.elapsed = t.elapsed();
    r
}

fn failed(id: u32, name: &str, err: impl std::fmt::Display) -> CheckResult {
    CheckResult {
        id,
        name: name.into(),
        pass: false,
        metric: f64::NAN,
        threshold: f64::NAN,
        detail: format!("error: {err}"),
        elapsed: Duration::ZERO,
    }
}

/// Runs every check with sizes from `sizes`.
pub fn run_suite(master_seed: u64, sizes: Sizes) -> SuiteReport {
    let n = sizes.counts();
    let checks = vec![
        timed(|| main_bound_check(master_seed, &n)),
        timed(|| counterexample_check(master_seed)),
        timed(|| rejection_rate_check(master_seed, &n)),
        timed(|| coverage_check(master_seed, &n)),
        timed(|| proof_step_check(master_seed, &n)),
        timed(|| adaptive_check(master_seed)),
        timed(|| sandwich_check(master_seed, &n)),
        timed(|| overlap_rule_check(master_seed, &n)),
    ];
    SuiteReport {
        seed: master_seed,
        sizes: n,
        checks,
    }
}

/// Randomized scenarios: both forms of the composed bound.
pub fn main_bound_check(master_seed: u64, n: &SuiteSizes) -> CheckResult {
    const NAME: &str = "composed bound on randomized scenarios";
    let results: Vec<Result<(bool, f64, bool), ComposeError>> = (0..n.scenarios)
        .into_par_iter()
        .map(|i| {
            let s = random_scenario(seed::derive_seed(master_seed, &[1, i]), n.max_instances)?;
            let r = verify_main_bound(&s)?;
            Ok((r.holds_sum && r.holds_max, r.lhs - r.eps_total_max, r.mu_in_robust_set))
        })
        .collect();
    let mut verified = 0u64;
    let mut holds = 0u64;
    let mut inside = 0u64;
    let mut worst = f64::NEG_INFINITY;
    let mut errors = Vec::new();
    for r in &results {
        match r {
            Ok((h, margin, mu_in)) => {
                verified += 1;
                holds += *h as u64;
                inside += *mu_in as u64;
                worst = worst.max(*margin);
            }
            Err(e) => errors.push(e.to_string()),
        }
    }
    CheckResult {
        id: 1,
        name: NAME.into(),
        pass: errors.is_empty() && holds == verified && verified == n.scenarios && inside > 0 && inside < verified,
        metric: worst,
        threshold: crate::qstate::TOLERANCE,
        detail: format!(
            "{holds}/{verified} scenarios hold ({inside} inside the robust set); worst lhs - eps_total_max = {worst:e}; errors: {}",
            errors.len()
        ),
        elapsed: Duration::ZERO,
    }
}

/// Counterexample with ℓ = 4 approved with probability 0.05.
pub fn counterexample_check(master_seed: u64) -> CheckResult {
    const NAME: &str = "counterexample conditional distance";
    let t = Instant::now();
    let run = || -> Result<(f64, f64, f64, f64), ComposeError> {
        let s = build_counterexample(4, 0.05, master_seed)?;
        let r = verify_main_bound(&s)?;
        let end = run_sequence(&s)?;
        let (_, approved) = end.real.condition(CERT_REGISTER, 1)?;
        let guess = eve_guessing_probability(&approved, "KA1", &["E1"])?;
        Ok((r.conditional_distance, r.lhs, r.eps_cert, guess))
    };
    match run() {
        Ok((d, lhs, eps_cert, guess)) => {
            let secs = t.elapsed().as_secs_f64();
            let exact = 1.0 - 0.5f64.powi(4);
            let pass = (d - exact).abs() <= 1e-9
                && (lhs - 0.05 * exact).abs() <= 1e-9
                && lhs <= eps_cert
                && (guess - 1.0).abs() <= 1e-9
                && secs <= 5.0;
            CheckResult {
                id: 2,
                name: NAME.into(),
                pass,
                metric: d,
                threshold: exact,
                detail: format!("lhs {lhs} vs eps_cert {eps_cert}; guessing probability {guess}"),
                elapsed: Duration::ZERO,
            }
        }
        Err(e) => failed(2, NAME, e),
    }
}

/// Models outside their robust sets, with the plans used to certify them.
pub fn rejection_fixtures() -> Vec<(String, DeviceModel, RobustSet, CertificationPlan)> {
    let cp = Estimator::ClopperPearson { side: Side::Two };
    let detector = (
        "iid_detector dark=0.06".to_string(),
        DeviceModel::iid_detector(0.06, 2).expect("valid"),
        RobustSet::componentwise(&[("dark", 0.0, 0.05)]).expect("valid"),
        CertificationPlan::uniform(&["dark"], cp, 1000, 0.05).expect("valid"),
    );
    let source = (
        "phase_coherent_source coherence=0.15".to_string(),
        DeviceModel::phase_coherent_source(0.15, 2).expect("valid"),
        RobustSet::componentwise(&[("coherence", 0.0, 0.1)]).expect("valid"),
        CertificationPlan::uniform(&["coherence"], cp, 400, 0.05).expect("valid"),
    );
    let degrading = (
        "degrading_detector dark0=0.012 temp=2".to_string(),
        DeviceModel::degrading_detector(0.012, 2.0, 2).expect("valid"),
        RobustSet::componentwise(&[("dark0", 0.0, 0.01), ("temp", 0.0, 5.0)]).expect("valid"),
        CertificationPlan::new(
            vec![
                PlanEntry {
                    parameter: "dark0".into(),
                    estimator: cp,
                    trials: 2000,
                },
                PlanEntry {
                    parameter: "temp".into(),
                    estimator: Estimator::Hoeffding,
                    trials: 200,
                },
            ],
            0.05,
        )
        .expect("valid"),
    );
    vec![detector, source, degrading]
}

/// Approval frequency of every model outside its robust set.
pub fn rejection_rate_check(master_seed: u64, n: &SuiteSizes) -> CheckResult {
    const NAME: &str = "approval rate outside the robust set";
    let mut pass = true;
    let mut worst = f64::NEG_INFINITY;
    let mut detail = Vec::new();
    for (i, (label, model, s, plan)) in rejection_fixtures().into_iter().enumerate() {
        match validate_criterion_1(&model, &s, &plan, n.rate_trials, seed::derive_seed(master_seed, &[3, i as u64])) {
            Ok(r) => {
                pass &= r.bound_ok;
                worst = worst.max(r.approval_rate - r.threshold);
                detail.push(format!("{label}: {:.5} <= {:.5}", r.approval_rate, r.threshold));
            }
            Err(e) => return failed(3, NAME, e),
        }
    }
    CheckResult {
        id: 3,
        name: NAME.into(),
        pass,
        metric: worst,
        threshold: 0.0,
        detail: detail.join("; "),
        elapsed: Duration::ZERO,
    }
}

/// Interval coverage over the parameter grid for both estimators.
pub fn coverage_check(master_seed: u64, n: &SuiteSizes) -> CheckResult {
    const NAME: &str = "interval coverage";
    let mut grid = Vec::new();
    for est in [Estimator::ClopperPearson { side: Side::Two }, Estimator::Hoeffding] {
        for p in [0.0, 0.01, 0.1, 0.5] {
            for trials in [10u64, 100, 1000] {
                for eps in [0.05, 1e-3] {
                    grid.push((est, p, trials, eps));
                }
            }
        }
    }
    let results: Vec<_> = grid
        .par_iter()
        .enumerate()
        .map(|(i, &(est, p, trials, eps))| {
            coverage_test(
                est,
                Observable::Bernoulli,
                p,
                trials,
                eps,
                n.coverage_trials,
                seed::derive_seed(master_seed, &[4, i as u64]),
            )
        })
        .collect();
    let mut pass = true;
    let mut worst = f64::INFINITY;
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(r) => {
                pass &= r.pass;
                worst = worst.min(r.coverage - r.threshold);
                if !r.pass {
                    failures.push(format!("{:?} p={} n={} eps={}", r.estimator, r.mu, r.n, r.level));
                }
            }
            Err(e) => return failed(4, NAME, e),
        }
    }
    CheckResult {
        id: 4,
        name: NAME.into(),
        pass,
        metric: worst,
        threshold: 0.0,
        detail: format!("{} grid points; smallest coverage margin {worst:e}; failing: {failures:?}", grid.len()),
        elapsed: Duration::ZERO,
    }
}

pub fn proof_step_check(master_seed: u64, n: &SuiteSizes) -> CheckResult {
    const NAME: &str = "proof-step audit";
    match proof_step_audit(seed::derive_seed(master_seed, &[5]), n.proof_trials, n.telescoping_trials) {
        Ok(r) => CheckResult {
            id: 5,
            name: NAME.into(),
            pass: r.max_violation() <= 1e-9,
            metric: r.max_violation(),
            threshold: 1e-9,
            detail: format!(
                "triangle {:e}, contraction {:e}, telescoping {:e} over {} + {} trials",
                r.triangle_max_violation, r.dpi_max_violation, r.telescoping_max_violation, r.trials, r.telescoping_trials
            ),
            elapsed: Duration::ZERO,
        },
        Err(e) => failed(5, NAME, e),
    }
}

fn region(name: &str, lo: f64, hi: f64) -> std::collections::BTreeMap<String, Interval> {
    std::collections::BTreeMap::from([(name.to_string(), Interval::new(lo, hi))])
}

/// Key length falling as the coherence region widens.
pub fn tiered_table() -> ProtocolTable {
    ProtocolTable {
        rules: vec![
            ProtocolRule {
                region: region("coherence", 0.0, 0.05),
                key_length: 2,
            },
            ProtocolRule {
                region: region("coherence", 0.0, 0.2),
                key_length: 1,
            },
        ],
        default_key_length: Some(0),
    }
}

/// Full key inside the robust box, zero-length keys (rejection) otherwise.
pub fn reject_table() -> ProtocolTable {
    ProtocolTable {
        rules: vec![ProtocolRule {
            region: region("coherence", 0.0, 0.1),
            key_length: 2,
        }],
        default_key_length: Some(0),
    }
}

#[derive(Debug, Clone)]
pub struct AdaptiveFixture {
    pub label: String,
    pub scenario: AdaptiveScenario,
    pub kind: AdaptiveKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdaptiveKind {
    Plain,
    /// Deterministic region; must agree with the fixed-protocol bound.
    SingleRegion,
    /// Bad regions select zero-length keys; lhs must stay below `ε^cert`.
    RejectAsZeroLength,
}

/// Characterization fixtures: phase-coherent sources across coherence values, plans
/// and tables, a detector fixture, a sampled fixture and the single-region reduction.
pub fn adaptive_fixtures(master_seed: u64) -> Vec<AdaptiveFixture> {
    let cp = Estimator::ClopperPearson { side: Side::Two };
    let mut out = Vec::new();
    for &coherence in &[0.0, 0.02, 0.05, 0.3, 1.0] {
        for &trials in &[100u64, 400] {
            for (tname, table) in [("tiered", tiered_table()), ("reject", reject_table())] {
                let model = DeviceModel::phase_coherent_source(coherence, 0).expect("valid");
                let plan = CertificationPlan::uniform(&["coherence"], cp, trials, 0.05).expect("valid");
                let kind = if tname == "reject" && coherence > 0.1 {
                    AdaptiveKind::RejectAsZeroLength
                } else {
                    AdaptiveKind::Plain
                };
                let mut s = AdaptiveScenario::new(model, AttackSpec::HighLossUsd, plan, table, 2, 2);
                s.seed = seed::derive_seed(master_seed, &[6, out.len() as u64]);
                s.audit.seed = s.seed;
                out.push(AdaptiveFixture {
                    label: format!("source c={coherence} n_cert={trials} table={tname}"),
                    scenario: s,
                    kind,
                });
            }
        }
    }
    for &dark in &[0.01, 0.08] {
        let model = DeviceModel::iid_detector(dark, 0).expect("valid");
        let plan = CertificationPlan::uniform(&["dark"], cp, 300, 0.05).expect("valid");
        let table = ProtocolTable {
            rules: vec![ProtocolRule {
                region: region("dark", 0.0, 0.05),
                key_length: 2,
            }],
            default_key_length: Some(0),
        };
        let mut s = AdaptiveScenario::new(model, AttackSpec::KeyCopy { strength: 0.5 }, plan, table, 2, 2);
        s.seed = seed::derive_seed(master_seed, &[6, out.len() as u64]);
        out.push(AdaptiveFixture {
            label: format!("detector dark={dark} key-copy"),
            scenario: s,
            kind: if dark > 0.05 {
                AdaptiveKind::RejectAsZeroLength
            } else {
                AdaptiveKind::Plain
            },
        });
    }
    {
        let model = DeviceModel::degrading_detector(0.005, 2.0, 0).expect("valid");
        let plan = CertificationPlan::new(
            vec![
                PlanEntry {
                    parameter: "dark0".into(),
                    estimator: cp,
                    trials: 500,
                },
                PlanEntry {
                    parameter: "temp".into(),
                    estimator: Estimator::Hoeffding,
                    trials: 100,
                },
            ],
            0.05,
        )
        .expect("valid");
        let mut rules = region("dark0", 0.0, 0.02);
        rules.insert("temp".into(), Interval::new(0.0, 5.0));
        let table = ProtocolTable {
            rules: vec![ProtocolRule {
                region: rules,
                key_length: 1,
            }],
            default_key_length: Some(0),
        };
        let mut s = AdaptiveScenario::new(model, AttackSpec::KeyCopy { strength: 0.2 }, plan, table, 2, 1);
        s.monte_carlo_trials = 2_000;
        s.seed = seed::derive_seed(master_seed, &[6, out.len() as u64]);
        out.push(AdaptiveFixture {
            label: "degrading detector, sampled regions".into(),
            scenario: s,
            kind: AdaptiveKind::Plain,
        });
    }
    out.push(single_region_fixture(master_seed));
    out
}

pub fn single_region_fixture(master_seed: u64) -> AdaptiveFixture {
    let model = DeviceModel::phase_coherent_source(0.02, 0).expect("valid");
    let plan = CertificationPlan::new(
        vec![PlanEntry {
            parameter: "coherence".into(),
            estimator: Estimator::Fixed { low: 0.0, high: 0.05 },
            trials: 0,
        }],
        0.05,
    )
    .expect("valid");
    let mut s = AdaptiveScenario::new(model, AttackSpec::HighLossUsd, plan, reject_table(), 2, 2);
    s.seed = seed::derive_seed(master_seed, &[6, 99]);
    AdaptiveFixture {
        label: "single deterministic region".into(),
        scenario: s,
        kind: AdaptiveKind::SingleRegion,
    }
}

/// The fixed-protocol scenario equivalent to a single-region fixture, approved with
/// certainty.
pub fn single_region_reference(f: &AdaptiveFixture) -> Result<Scenario, ComposeError> {
    let s = &f.scenario;
    let mut model = s.model.clone();
    model.key_length = s.table.key_length(0);
    let mut out = Scenario::from_model(
        model,
        s.attack,
        RobustSet::componentwise(&[("coherence", 0.0, 0.1)])?,
        s.plan.eps_cert,
        InitialState::Joint(approval_state(1.0)?),
        s.n,
        s.max_length,
    )?;
    out.audit = s.audit;
    Ok(out)
}

pub fn adaptive_check(master_seed: u64) -> CheckResult {
    const NAME: &str = "adaptive bound on characterization fixtures";
    let fixtures = adaptive_fixtures(master_seed);
    let results: Vec<Result<(bool, String), ComposeError>> = fixtures
        .par_iter()
        .map(|f| {
            let r = verify_adaptive_bound(&f.scenario)?;
            let mut ok = r.holds_sum && r.holds_max;
            let mut note = String::new();
            match f.kind {
                AdaptiveKind::Plain => {}
                AdaptiveKind::SingleRegion => {
                    let main = verify_main_bound(&single_region_reference(f)?)?;
                    let gap = (main.lhs - r.lhs).abs().max((main.eps_total_sum - r.eps_total_sum).abs());
                    ok &= gap <= 1e-9;
                    note = format!(" (reduction gap {gap:e})");
                }
                AdaptiveKind::RejectAsZeroLength => {
                    ok &= r.lhs <= r.eps_cert + crate::qstate::TOLERANCE;
                    note = format!(" (lhs {:e} vs eps_cert {})", r.lhs, r.eps_cert);
                }
            }
            Ok((ok, format!("{}{note}", f.label)))
        })
        .collect();
    let mut held = 0;
    let mut bad = Vec::new();
    for r in results {
        match r {
            Ok((true, _)) => held += 1,
            Ok((false, label)) => bad.push(label),
            Err(e) => bad.push(e.to_string()),
        }
    }
    let has_single = fixtures.iter().any(|f| f.kind == AdaptiveKind::SingleRegion);
    let has_reject = fixtures.iter().any(|f| f.kind == AdaptiveKind::RejectAsZeroLength);
    CheckResult {
        id: 6,
        name: NAME.into(),
        pass: bad.is_empty() && fixtures.len() >= 20 && has_single && has_reject,
        metric: held as f64,
        threshold: fixtures.len() as f64,
        detail: format!("{held}/{} fixtures hold; failing: {bad:?}", fixtures.len()),
        elapsed: Duration::ZERO,
    }
}

/// Every instance channel used by the fixtures, plus random instances.
pub fn fixture_instances(master_seed: u64, random: u64) -> Result<Vec<(String, InstanceChannel)>, ComposeError> {
    let mut out = Vec::new();
    for l in 1..=4 {
        let s = build_counterexample(l, 0.05, master_seed)?;
        out.push((format!("counterexample l={l}"), s.instances[0].clone()));
    }
    for (label, model, _, _) in rejection_fixtures() {
        let attack = match model.family {
            crate::devices::Family::PhaseCoherentSource => AttackSpec::HighLossUsd,
            _ => AttackSpec::KeyCopy { strength: 0.5 },
        };
        for j in 1..=2 {
            out.push((format!("{label} instance {j}"), instance_channel(&model, &attack, j, 2)?));
        }
    }
    for &c in &[0.0, 0.25, 0.5, 0.75, 1.0] {
        let model = DeviceModel::phase_coherent_source(c, 2)?;
        out.push((
            format!("source c={c} key-copy"),
            instance_channel(&model, &AttackSpec::KeyCopy { strength: 0.7 }, 1, 2)?,
        ));
    }
    for i in 0..random {
        let mut rng = seed::rng_for(master_seed, &[7, i]);
        let t = rand::Rng::random_range(&mut rng, 0.0..1.0);
        out.push((format!("random instance {i}"), random_instance(1, t, &mut rng)?));
    }
    Ok(out)
}

/// `½‖U·U† − V·V†‖⋄ = sin(Δ/2)` for qubit unitaries whose `U†V` eigenphases differ by `Δ ≤ π`.
pub fn two_unitary_closed_form(u: &CMatrix, v: &CMatrix) -> f64 {
    let w = u.adjoint() * v;
    let tr = w[(0, 0)] + w[(1, 1)];
    let det = w[(0, 0)] * w[(1, 1)] - w[(0, 1)] * w[(1, 0)];
    let disc = (tr * tr - det * c(4.0)).sqrt();
    let (l1, l2) = ((tr + disc) * c(0.5), (tr - disc) * c(0.5));
    let delta = (l1 * l2.conj()).arg().abs();
    (delta / 2.0).sin()
}

pub fn sandwich_check(master_seed: u64, n: &SuiteSizes) -> CheckResult {
    const NAME: &str = "diamond-norm sandwich";
    let instances = match fixture_instances(master_seed, n.random_audit_instances) {
        Ok(v) => v,
        Err(e) => return failed(7, NAME, e),
    };
    let audits: Vec<Result<f64, String>> = instances
        .par_iter()
        .enumerate()
        .map(|(i, (label, inst))| {
            let opts = AuditOptions {
                seed: seed::derive_seed(master_seed, &[7, 1000 + i as u64]),
                ..AuditOptions::default()
            };
            audit_epsilon(inst, &opts)
                .map(|a| a.lower - a.upper)
                .map_err(|e| format!("{label}: {e}"))
        })
        .collect();
    let mut worst = f64::NEG_INFINITY;
    let mut errors = Vec::new();
    for a in audits {
        match a {
            Ok(gap) => worst = worst.max(gap),
            Err(e) => errors.push(e),
        }
    }
    let layout = Layout::new(vec![Register::quantum("A", 2)]).expect("valid");
    let mut unitary_err = 0.0f64;
    for i in 0..20u64 {
        let mut rng = seed::rng_for(master_seed, &[7, 2000 + i]);
        let (u, v) = (haar_unitary(2, &mut rng), haar_unitary(2, &mut rng));
        let diff = KrausChannel::unitary(layout.clone(), u.clone())
            .and_then(|a| Ok((a, KrausChannel::unitary(layout.clone(), v.clone())?)))
            .and_then(|(a, b)| ChannelDifference::new(a, b))
            .and_then(|d| diamond_norm_bounds(&d, &DiamondOptions::default()));
        match diff {
            Ok(b) => {
                let exact = two_unitary_closed_form(&u, &v);
                unitary_err = unitary_err.max((b.upper - exact).abs()).max((b.lower - exact).abs());
            }
            Err(e) => errors.push(format!("unitary pair {i}: {e}")),
        }
    }
    CheckResult {
        id: 7,
        name: NAME.into(),
        pass: errors.is_empty() && worst <= 1e-6 && unitary_err <= 1e-6,
        metric: worst.max(unitary_err),
        threshold: 1e-6,
        detail: format!(
            "{} instance channels, worst lower - upper {worst:e}; two-unitary error {unitary_err:e}; errors: {errors:?}",
            instances.len()
        ),
        elapsed: Duration::ZERO,
    }
}

/// Model just outside the robust set, certified with the overlap rule.
pub fn overlap_fixture() -> (DeviceModel, RobustSet, CertificationPlan) {
    (
        DeviceModel::iid_detector(0.055, 2).expect("valid"),
        RobustSet::componentwise(&[("dark", 0.0, 0.05)]).expect("valid"),
        CertificationPlan::uniform(&["dark"], Estimator::ClopperPearson { side: Side::Two }, 1000, 0.05)
            .expect("valid"),
    )
}

pub fn overlap_rule_check(master_seed: u64, n: &SuiteSizes) -> CheckResult {
    const NAME: &str = "overlap rule admits a model outside the robust set";
    let (model, s, plan) = overlap_fixture();
    match validate_with_rule(&model, &s, &plan, ApprovalRule::Overlap, n.rate_trials, seed::derive_seed(master_seed, &[8])) {
        Ok(r) => CheckResult {
            id: 8,
            name: NAME.into(),
            pass: r.approval_rate > r.threshold,
            metric: r.approval_rate,
            threshold: r.threshold,
            detail: format!("{} approvals in {} trials", r.approvals, r.trials),
            elapsed: Duration::ZERO,
        },
        Err(e) => failed(8, NAME, e),
    }
}
