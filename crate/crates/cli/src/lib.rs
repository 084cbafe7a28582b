//! Batch runner behind the `devcert` binary: loads scenario configs, runs a verb and
//! writes a JSON report plus CSV tables.

pub mod config;
pub mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};

use devcert::certify::{approval_probability, certify_with_rule, characterize, CertifyError};
use devcert::compose::{verify_adaptive_bound, verify_main_bound, ComposeError};
use devcert::devices::in_robust_set;
use devcert::protocol::{audit_epsilon, AuditOptions};
use devcert::qstate::TOLERANCE;
use devcert::seed::derive_seed;
use devcert::suite::{run_suite, Sizes};

use config::{load_scenario, load_suite, Loaded, ScenarioConfig};
use report::{to_csv, write_outputs, Cell, Report};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("invariant failure: {0}")]
    Invariant(String),
    #[error("dimension cap exceeded: {0}")]
    DimensionCap(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Io(_) => 2,
            Self::Invariant(_) => 3,
            Self::DimensionCap(_) => 4,
        }
    }
}

fn run_err(e: ComposeError) -> CliError {
    match e {
        e if e.is_dimension_cap() => CliError::DimensionCap(e.to_string()),
        ComposeError::InvalidScenario(m) => CliError::Config(m),
        e => CliError::Invariant(e.to_string()),
    }
}

fn certify_err(e: CertifyError) -> CliError {
    match e {
        CertifyError::Precondition(m) => CliError::Invariant(m),
        e => CliError::Config(e.to_string()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verb {
    Certify,
    Verify,
    Suite,
    Audit,
}

impl Verb {
    fn name(self) -> &'static str {
        match self {
            Self::Certify => "certify",
            Self::Verify => "verify",
            Self::Suite => "suite",
            Self::Audit => "audit",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Invocation {
    pub verb: Verb,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub adaptive: bool,
    pub out: PathBuf,
    pub sizes: Sizes,
    /// `audit` only: the instance to audit (all when absent).
    pub instance: Option<usize>,
}

/// What a verb produced. A run whose checks fail still writes its report and
/// carries the failure in `failure`.
#[derive(Debug)]
pub struct RunOutcome {
    pub files: Vec<PathBuf>,
    pub summary: Vec<String>,
    pub failure: Option<CliError>,
}

struct Produced {
    body: Value,
    tables: Vec<(&'static str, String)>,
    timing: Value,
    summary: Vec<String>,
    failure: Option<CliError>,
}

pub fn run(inv: &Invocation) -> Result<RunOutcome, CliError> {
    let start = Instant::now();
    let (hash, seed, produced) = match inv.verb {
        Verb::Suite => {
            let (hash, cfg_seed) = match &inv.config {
                Some(p) => {
                    let Loaded { config, hash } = load_suite(p)?;
                    (Some(hash), Some(config.seed))
                }
                None => (None, None),
            };
            let seed = inv
                .seed
                .or(cfg_seed)
                .ok_or_else(|| CliError::Config("suite needs --seed or a config with a seed".into()))?;
            (hash, seed, suite(seed, inv.sizes))
        }
        verb => {
            let path = inv
                .config
                .as_deref()
                .ok_or_else(|| CliError::Config(format!("{} needs --config", verb.name())))?;
            let loaded = load_scenario(path)?;
            let seed = inv.seed.unwrap_or(loaded.config.seed);
            let produced = match verb {
                Verb::Certify => certify(&loaded.config, seed, inv.adaptive)?,
                Verb::Verify => verify(&loaded.config, seed, inv.adaptive)?,
                Verb::Audit => audit(&loaded.config, seed, inv.instance)?,
                Verb::Suite => unreachable!(),
            };
            (Some(loaded.hash), seed, produced)
        }
    };
    let mut timing = produced.timing;
    timing
        .as_object_mut()
        .expect("timing object")
        .insert("wall_seconds".into(), json!(start.elapsed().as_secs_f64()));
    let report = Report {
        verb: inv.verb.name(),
        config_hash: hash,
        master_seed: seed,
        body: produced.body,
        timing,
    };
    let mut files = vec![("report.json", report.render())];
    files.extend(produced.tables);
    let files = write_outputs(&inv.out, &files)?;
    Ok(RunOutcome {
        files,
        summary: produced.summary,
        failure: produced.failure,
    })
}

fn certify(cfg: &ScenarioConfig, seed: u64, adaptive: bool) -> Result<Produced, CliError> {
    let model = cfg.model()?;
    let robust = cfg.robust_set()?;
    let plan = cfg.plan()?;
    let rule = cfg.certification.rule;
    let mu_in = in_robust_set(&model.params, &robust).map_err(|e| CliError::Config(e.to_string()))?;
    let robust_map = robust.intervals().cloned().unwrap_or_default();
    let interval_row = |p: &str, low: f64, high: f64, level: f64| {
        let r = robust_map.get(p);
        vec![
            Cell::Text(p.to_string()),
            Cell::Float(low),
            Cell::Float(high),
            Cell::Float(level),
            r.map_or(Cell::Empty, |r| Cell::Float(r.low)),
            r.map_or(Cell::Empty, |r| Cell::Float(r.high)),
            r.map_or(Cell::Empty, |r| Cell::Bool(r.low <= low && high <= r.high)),
        ]
    };
    let header = ["parameter", "low", "high", "level", "robust_low", "robust_high", "inside"];
    if adaptive {
        let region = characterize(&model, &plan, seed).map_err(certify_err)?;
        let protocol = match &cfg.adaptive {
            Some(_) => {
                let table = cfg.protocol_table()?;
                let p = table.select(&region).map_err(run_err)?;
                json!({ "index": p, "key_length": table.key_length(p) })
            }
            None => Value::Null,
        };
        let intervals = region.intervals();
        let rows = intervals
            .iter()
            .map(|(p, iv)| interval_row(p, iv.low, iv.high, region.level))
            .collect::<Vec<_>>();
        let contains = region.contains(&model.params);
        Ok(Produced {
            body: json!({
                "name": cfg.name,
                "mode": "characterize",
                "region": region,
                "region_contains_mu": contains,
                "protocol": protocol,
            }),
            tables: vec![("intervals.csv", to_csv(&header, &rows))],
            timing: json!({}),
            summary: vec![format!("region {:?}, contains mu: {contains}", region.descriptor.0)],
            failure: None,
        })
    } else {
        let outcome = certify_with_rule(&model, &robust, &plan, rule, seed).map_err(certify_err)?;
        let pr = approval_probability(&model, &robust, &plan, rule).map_err(certify_err)?;
        let rows = outcome
            .intervals
            .iter()
            .map(|ci| interval_row(&ci.parameter, ci.low, ci.high, ci.level))
            .collect::<Vec<_>>();
        Ok(Produced {
            body: json!({
                "name": cfg.name,
                "mode": "certify",
                "F": outcome.approved as u8,
                "approved": outcome.approved,
                "rule": rule,
                "eps_cert": plan.eps_cert,
                "mu_in_robust_set": mu_in,
                "approval_probability": pr,
                "intervals": outcome.intervals,
                "transcript": outcome.transcript,
            }),
            tables: vec![("intervals.csv", to_csv(&header, &rows))],
            timing: json!({}),
            summary: vec![format!("F = {}", outcome.approved as u8)],
            failure: None,
        })
    }
}

fn verify(cfg: &ScenarioConfig, seed: u64, adaptive: bool) -> Result<Produced, CliError> {
    if adaptive {
        let s = cfg.adaptive_scenario(seed)?;
        let r = verify_adaptive_bound(&s).map_err(run_err)?;
        let rows = r
            .outcomes
            .iter()
            .map(|o| {
                vec![
                    Cell::Int(o.protocol as i64),
                    Cell::Int(o.key_length as i64),
                    Cell::Float(o.probability),
                    Cell::Float(o.miss_probability),
                    Cell::Float(o.conditional_distance),
                ]
            })
            .collect::<Vec<_>>();
        let holds = r.holds_sum && r.holds_max;
        let summary = vec![
            format!("lhs {} vs sum {} / max {}", r.lhs, r.eps_total_sum, r.eps_total_max),
            format!("holds_sum {} holds_max {}", r.holds_sum, r.holds_max),
        ];
        Ok(Produced {
            body: json!({ "name": cfg.name, "mode": "adaptive", "bound": r }),
            tables: vec![(
                "protocols.csv",
                to_csv(
                    &["protocol", "key_length", "probability", "miss_probability", "conditional_distance"],
                    &rows,
                ),
            )],
            timing: json!({}),
            summary,
            failure: (!holds).then(|| CliError::Invariant("adaptive bound violated".into())),
        })
    } else {
        let s = cfg.scenario(seed)?;
        let r = verify_main_bound(&s).map_err(run_err)?;
        let rows = r
            .audits
            .iter()
            .map(|a| {
                vec![
                    Cell::Int(a.index as i64),
                    Cell::Float(a.audit.lower),
                    Cell::Float(a.audit.upper),
                    a.stipulated.map_or(Cell::Empty, Cell::Float),
                    Cell::Float(a.epsilon),
                ]
            })
            .collect::<Vec<_>>();
        let holds = r.holds_sum && r.holds_max;
        let summary = vec![
            format!(
                "lhs {} (conditional distance {}) vs sum {} / max {}",
                r.lhs, r.conditional_distance, r.eps_total_sum, r.eps_total_max
            ),
            format!("holds_sum {} holds_max {}", r.holds_sum, r.holds_max),
        ];
        Ok(Produced {
            body: json!({ "name": cfg.name, "mode": "fixed", "bound": r }),
            tables: vec![(
                "instances.csv",
                to_csv(&["instance", "audit_lower", "audit_upper", "stipulated", "epsilon"], &rows),
            )],
            timing: json!({}),
            summary,
            failure: (!holds).then(|| CliError::Invariant("composed bound violated".into())),
        })
    }
}

fn audit(cfg: &ScenarioConfig, seed: u64, only: Option<usize>) -> Result<Produced, CliError> {
    let s = cfg.scenario(seed)?;
    let selected: Vec<_> = s
        .instances
        .iter()
        .filter(|i| only.is_none_or(|j| i.index == j))
        .collect();
    if selected.is_empty() {
        return Err(CliError::Config(format!("no instance {}", only.unwrap_or(0))));
    }
    let mut rows = Vec::new();
    let mut entries = Vec::new();
    let mut bad = Vec::new();
    for inst in selected {
        let opts = AuditOptions {
            seed: derive_seed(s.audit.seed, &[inst.index as u64]),
            ..s.audit
        };
        let a = audit_epsilon(inst, &opts).map_err(|e| run_err(e.into()))?;
        let consistent = inst.stipulated_epsilon.is_none_or(|e| a.lower <= e + TOLERANCE);
        if !consistent {
            bad.push(inst.index);
        }
        rows.push(vec![
            Cell::Int(inst.index as i64),
            Cell::Float(a.lower),
            Cell::Float(a.upper),
            inst.stipulated_epsilon.map_or(Cell::Empty, Cell::Float),
            Cell::Bool(consistent),
        ]);
        entries.push(json!({
            "instance": inst.index,
            "audit": a,
            "stipulated": inst.stipulated_epsilon,
            "consistent": consistent,
        }));
    }
    Ok(Produced {
        body: json!({ "name": cfg.name, "instances": entries }),
        tables: vec![(
            "audit.csv",
            to_csv(&["instance", "lower", "upper", "stipulated", "consistent"], &rows),
        )],
        timing: json!({}),
        summary: vec![format!("{} instance(s) audited", rows.len())],
        failure: (!bad.is_empty())
            .then(|| CliError::Invariant(format!("stipulated epsilon below audited lower bound at instances {bad:?}"))),
    })
}

fn suite(seed: u64, sizes: Sizes) -> Produced {
    let r = run_suite(seed, sizes);
    let rows = r
        .checks
        .iter()
        .map(|c| {
            vec![
                Cell::Int(c.id as i64),
                Cell::Text(c.name.clone()),
                Cell::Bool(c.pass),
                Cell::Float(c.metric),
                Cell::Float(c.threshold),
            ]
        })
        .collect::<Vec<_>>();
    let summary = r
        .checks
        .iter()
        .map(|c| format!("{} {:>2} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.id, c.name, c.detail))
        .collect();
    let failed: Vec<String> = r.checks.iter().filter(|c| !c.pass).map(|c| format!("{} ({})", c.id, c.name)).collect();
    let timing = json!({
        "checks": r.checks.iter().map(|c| json!({ "id": c.id, "seconds": c.elapsed.as_secs_f64() })).collect::<Vec<_>>(),
    });
    Produced {
        body: json!({ "sizes": sizes, "counts": r.sizes, "passed": r.passed(), "checks": r.checks }),
        tables: vec![("suite.csv", to_csv(&["id", "check", "pass", "metric", "threshold"], &rows))],
        timing,
        summary,
        failure: (!failed.is_empty()).then(|| CliError::Invariant(format!("failed checks: {}", failed.join(", ")))),
    }
}

/// Exit status for a finished run.
pub fn exit_code(result: &Result<RunOutcome, CliError>) -> i32 {
    match result {
        Ok(o) => o.failure.as_ref().map_or(0, CliError::exit_code),
        Err(e) => e.exit_code(),
    }
}

/// Path of a shipped fixture.
pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}
