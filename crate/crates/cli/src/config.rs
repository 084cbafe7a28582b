//! Scenario configuration files (TOML, schema version 1).

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use devcert::certify::{ApprovalRule, CertificationPlan, Estimator, PlanEntry, Side};
use devcert::compose::{
    approval_state, ciphertext_register_name, otp_leakage_channel, AdaptiveScenario, ComposeError, InitialState, ProtocolRule,
    ProtocolTable, Scenario,
};
use devcert::devices::{instance_channel, AttackSpec, DegradingShape, DeviceModel, Family, Interval, Observable, ParameterVector, RobustSet};
use devcert::protocol::{AuditOptions, DEFAULT_MAX_LENGTH};
use devcert::qstate::{DensityOperator, KrausChannel, Layout, DEFAULT_DIMENSION_CAP};
use devcert::seed::derive_seed;

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default)]
    pub name: Option<String>,
    pub device: DeviceConfig,
    #[serde(default)]
    pub attack: AttackConfig,
    pub robust_set: BTreeMap<String, [f64; 2]>,
    pub certification: CertificationConfig,
    #[serde(default)]
    pub composition: Option<CompositionConfig>,
    #[serde(default)]
    pub audit: AuditConfig,
    #[serde(default)]
    pub adaptive: Option<AdaptiveConfig>,
}

/// The only content `suite` reads from a config file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default)]
    pub name: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    pub family: Family,
    pub parameters: BTreeMap<String, f64>,
    #[serde(default)]
    pub key_length: usize,
    #[serde(default = "yes")]
    pub memoryless: bool,
    #[serde(default)]
    pub degrading: Option<DegradingShape>,
    /// Observables of parameters outside the family (e.g. a Trojan-horse bound).
    #[serde(default)]
    pub observables: BTreeMap<String, ObservableConfig>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservableConfig {
    Bernoulli,
    BoundedMean { low: f64, high: f64, spread: f64 },
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackConfig {
    #[default]
    None,
    KeyCopy {
        strength: f64,
    },
    HighLossUsd,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificationConfig {
    pub eps_cert: f64,
    #[serde(default)]
    pub rule: ApprovalRule,
    pub plan: Vec<PlanEntryConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorName {
    ClopperPearson,
    ClopperPearsonUpper,
    ClopperPearsonLower,
    Hoeffding,
    Fixed,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanEntryConfig {
    pub parameter: String,
    pub estimator: EstimatorName,
    #[serde(default)]
    pub trials: u64,
    #[serde(default)]
    pub low: Option<f64>,
    #[serde(default)]
    pub high: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    /// `F` produced by running the certification plan.
    #[default]
    Certified,
    /// `F` set to 1 with the given probability, independent of the device.
    ApprovalProbability(f64),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InterConfig {
    Identity,
    /// One-time pad of `message` (a bit string) with the preceding instance's key.
    Otp { message: String },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositionConfig {
    pub instances: usize,
    /// Defaults to the device key length.
    #[serde(default)]
    pub max_length: Option<usize>,
    #[serde(default)]
    pub initial: InitialConfig,
    /// Absent: every epsilon is audited.
    #[serde(default)]
    pub stipulated_epsilons: Option<Vec<f64>>,
    /// One entry per gap between instances; absent means identities.
    #[serde(default)]
    pub inter: Option<Vec<InterConfig>>,
    #[serde(default = "default_mc_trials")]
    pub monte_carlo_trials: u64,
    #[serde(default = "default_cap")]
    pub dimension_cap: usize,
}

fn default_mc_trials() -> u64 {
    10_000
}

fn default_cap() -> usize {
    DEFAULT_DIMENSION_CAP
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    #[serde(default)]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleConfig {
    pub key_length: usize,
    pub region: BTreeMap<String, [f64; 2]>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptiveConfig {
    pub rules: Vec<RuleConfig>,
    #[serde(default)]
    pub default_key_length: Option<usize>,
    #[serde(default = "default_enumeration")]
    pub enumeration_limit: usize,
    #[serde(default = "default_mc_trials")]
    pub monte_carlo_trials: u64,
}

fn default_enumeration() -> usize {
    1000
}

/// A parsed config with the SHA-256 of its file contents.
pub struct Loaded<T> {
    pub config: T,
    pub hash: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn read(path: &Path) -> Result<(String, String), CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let hash = sha256_hex(&bytes);
    let text = String::from_utf8(bytes).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok((text, hash))
}

fn check_version(v: u32) -> Result<(), CliError> {
    if v != SCHEMA_VERSION {
        return Err(CliError::Config(format!("schema_version {v} unsupported (expected {SCHEMA_VERSION})")));
    }
    Ok(())
}

pub fn load_scenario(path: &Path) -> Result<Loaded<ScenarioConfig>, CliError> {
    let (text, hash) = read(path)?;
    let config: ScenarioConfig =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    check_version(config.schema_version)?;
    config.model()?;
    config.robust_set()?;
    config.plan()?;
    Ok(Loaded { config, hash })
}

pub fn load_suite(path: &Path) -> Result<Loaded<SuiteConfig>, CliError> {
    let (text, hash) = read(path)?;
    let config: SuiteConfig = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    check_version(config.schema_version)?;
    Ok(Loaded { config, hash })
}

fn interval(name: &str, [low, high]: [f64; 2]) -> Result<Interval, CliError> {
    if !(low <= high) {
        return Err(CliError::Config(format!("{name}: empty interval [{low}, {high}]")));
    }
    Ok(Interval::new(low, high))
}

impl ScenarioConfig {
    pub fn model(&self) -> Result<DeviceModel, CliError> {
        let d = &self.device;
        let pairs: Vec<(&str, f64)> = d.parameters.iter().map(|(k, v)| (k.as_str(), *v)).collect();
        let params = ParameterVector::from_pairs(&pairs).map_err(config_err)?;
        let model = DeviceModel {
            family: d.family,
            params,
            memoryless: d.memoryless,
            key_length: d.key_length,
            degrading: d.degrading.unwrap_or_default(),
            extra_observables: d
                .observables
                .iter()
                .map(|(k, o)| {
                    let o = match *o {
                        ObservableConfig::Bernoulli => Observable::Bernoulli,
                        ObservableConfig::BoundedMean { low, high, spread } => Observable::BoundedMean { low, high, spread },
                    };
                    (k.clone(), o)
                })
                .collect(),
        };
        model.validate().map_err(config_err)?;
        Ok(model)
    }

    pub fn attack(&self) -> AttackSpec {
        match self.attack {
            AttackConfig::None => AttackSpec::None,
            AttackConfig::KeyCopy { strength } => AttackSpec::KeyCopy { strength },
            AttackConfig::HighLossUsd => AttackSpec::HighLossUsd,
        }
    }

    pub fn robust_set(&self) -> Result<RobustSet, CliError> {
        for (name, iv) in &self.robust_set {
            if !self.device.parameters.contains_key(name) {
                return Err(CliError::Config(format!("robust_set names unknown parameter {name:?}")));
            }
            interval(name, *iv)?;
        }
        let entries: Vec<(&str, f64, f64)> =
            self.robust_set.iter().map(|(k, [lo, hi])| (k.as_str(), *lo, *hi)).collect();
        RobustSet::componentwise(&entries).map_err(config_err)
    }

    pub fn plan(&self) -> Result<CertificationPlan, CliError> {
        let c = &self.certification;
        let entries = c
            .plan
            .iter()
            .map(|e| {
                if self.device.parameters.get(&e.parameter).is_none() {
                    return Err(CliError::Config(format!("plan names unknown parameter {:?}", e.parameter)));
                }
                let estimator = match e.estimator {
                    EstimatorName::ClopperPearson => Estimator::ClopperPearson { side: Side::Two },
                    EstimatorName::ClopperPearsonUpper => Estimator::ClopperPearson { side: Side::Upper },
                    EstimatorName::ClopperPearsonLower => Estimator::ClopperPearson { side: Side::Lower },
                    EstimatorName::Hoeffding => Estimator::Hoeffding,
                    EstimatorName::Fixed => match (e.low, e.high) {
                        (Some(low), Some(high)) => {
                            interval(&e.parameter, [low, high])?;
                            Estimator::Fixed { low, high }
                        }
                        _ => return Err(CliError::Config(format!("{}: fixed estimator needs low and high", e.parameter))),
                    },
                };
                if e.estimator != EstimatorName::Fixed && (e.low.is_some() || e.high.is_some()) {
                    return Err(CliError::Config(format!("{}: low/high apply to fixed estimators only", e.parameter)));
                }
                Ok(PlanEntry {
                    parameter: e.parameter.clone(),
                    estimator,
                    trials: e.trials,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        CertificationPlan::new(entries, c.eps_cert).map_err(config_err)
    }

    fn audit_options(&self, master: u64) -> AuditOptions {
        let mut a = AuditOptions {
            seed: derive_seed(master, &[2]),
            ..AuditOptions::default()
        };
        if let Some(n) = self.audit.samples {
            a.samples = n;
        }
        a
    }

    fn composition(&self) -> Result<&CompositionConfig, CliError> {
        self.composition
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [composition] section".into()))
    }

    fn max_length(&self) -> Result<usize, CliError> {
        let m = self.composition()?.max_length.unwrap_or(self.device.key_length);
        if m > DEFAULT_MAX_LENGTH {
            return Err(CliError::Config(format!("max_length {m} exceeds {DEFAULT_MAX_LENGTH}")));
        }
        Ok(m)
    }

    /// The fixed-protocol scenario for `verify` and `audit`.
    pub fn scenario(&self, master: u64) -> Result<Scenario, CliError> {
        let comp = self.composition()?;
        if comp.instances == 0 {
            return Err(CliError::Config("composition.instances must be positive".into()));
        }
        let plan = self.plan()?;
        let trivial = DensityOperator::maximally_mixed(Layout::empty());
        let initial = match comp.initial {
            InitialConfig::Certified => InitialState::Certified {
                plan: plan.clone(),
                rule: self.certification.rule,
                rejected: trivial.clone(),
                approved: trivial,
                monte_carlo_trials: comp.monte_carlo_trials,
                seed: derive_seed(master, &[1]),
            },
            InitialConfig::ApprovalProbability(p) => InitialState::Joint(approval_state(p).map_err(build_err)?),
        };
        let model = self.model()?;
        let attack = self.attack();
        let max_length = self.max_length()?;
        let instances = (1..=comp.instances)
            .map(|j| instance_channel(&model, &attack, j, max_length))
            .collect::<Result<Vec<_>, _>>()
            .map_err(config_err)?;
        let mut s = Scenario {
            model,
            attack,
            robust_set: self.robust_set()?,
            eps_cert: plan.eps_cert,
            initial,
            instances,
            inter_instance: vec![KrausChannel::identity(Layout::empty()); comp.instances - 1],
            audit: self.audit_options(master),
            dimension_cap: comp.dimension_cap,
        };
        if let Some(eps) = &comp.stipulated_epsilons {
            if eps.len() != comp.instances {
                return Err(CliError::Config(format!(
                    "{} stipulated epsilons for {} instances",
                    eps.len(),
                    comp.instances
                )));
            }
            for (inst, e) in s.instances.iter_mut().zip(eps) {
                if !(0.0..=1.0).contains(e) {
                    return Err(CliError::Config(format!("stipulated epsilon {e} outside [0, 1]")));
                }
                inst.stipulated_epsilon = Some(*e);
            }
        }
        if let Some(inter) = &comp.inter {
            if inter.len() + 1 != comp.instances {
                return Err(CliError::Config(format!(
                    "{} inter-instance channels for {} instances",
                    inter.len(),
                    comp.instances
                )));
            }
            s.inter_instance = inter
                .iter()
                .zip(&s.instances)
                .map(|(c, inst)| match c {
                    InterConfig::Identity => Ok(KrausChannel::identity(Layout::empty())),
                    InterConfig::Otp { message } => {
                        otp_leakage_channel(&inst.keys, message, &ciphertext_register_name(inst.index)).map_err(build_err)
                    }
                })
                .collect::<Result<_, _>>()?;
        }
        s.check().map_err(build_err)?;
        Ok(s)
    }

    pub fn protocol_table(&self) -> Result<ProtocolTable, CliError> {
        let a = self
            .adaptive
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [adaptive] section".into()))?;
        let rules = a
            .rules
            .iter()
            .map(|r| {
                let region = r
                    .region
                    .iter()
                    .map(|(k, iv)| Ok((k.clone(), interval(k, *iv)?)))
                    .collect::<Result<BTreeMap<_, _>, CliError>>()?;
                Ok(ProtocolRule {
                    region,
                    key_length: r.key_length,
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        Ok(ProtocolTable {
            rules,
            default_key_length: a.default_key_length,
        })
    }

    pub fn adaptive_scenario(&self, master: u64) -> Result<AdaptiveScenario, CliError> {
        let comp = self.composition()?;
        let a = self.adaptive.as_ref().ok_or_else(|| CliError::Config("missing [adaptive] section".into()))?;
        if comp.stipulated_epsilons.is_some() || !matches!(comp.initial, InitialConfig::Certified) {
            return Err(CliError::Config(
                "adaptive scenarios audit every epsilon and certify the device".into(),
            ));
        }
        let max_length = self.max_length()?;
        let table = self.protocol_table()?;
        for r in &table.rules {
            if r.key_length > max_length {
                return Err(CliError::Config(format!("rule key length {} exceeds max_length", r.key_length)));
            }
        }
        let mut s = AdaptiveScenario::new(self.model()?, self.attack(), self.plan()?, table, comp.instances, max_length);
        s.audit = self.audit_options(master);
        s.enumeration_limit = a.enumeration_limit;
        s.monte_carlo_trials = a.monte_carlo_trials;
        s.seed = derive_seed(master, &[1]);
        Ok(s)
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

/// Errors met while assembling a scenario: the cap maps to its own exit code.
pub fn build_err(e: ComposeError) -> CliError {
    if e.is_dimension_cap() {
        CliError::DimensionCap(e.to_string())
    } else {
        CliError::Config(e.to_string())
    }
}
