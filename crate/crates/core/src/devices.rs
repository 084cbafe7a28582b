//! Device models, parameter vectors, robust sets and the built-in model families.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::protocol::{InstanceChannel, KeyLayout, ProtocolError};
use crate::qstate::linalg::{c, CMatrix};
use crate::qstate::{Branch, KrausChannel, Layout, Register};
use crate::seed;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("duplicate parameter {0}")]
    DuplicateParameter(String),
    #[error("missing parameter {0}")]
    MissingParameter(String),
    #[error("parameter {name} = {value} outside {range}")]
    OutOfRange { name: String, value: f64, range: String },
    #[error("empty interval for {name}: [{low}, {high}]")]
    EmptyInterval { name: String, low: f64, high: f64 },
    #[error("device models with memory are outside the supported universe")]
    NotMemoryless,
    #[error("attack {attack} is not defined for family {family}")]
    InvalidAttack { family: Family, attack: String },
    #[error("unknown observable {0}")]
    UnknownObservable(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub value: f64,
    #[serde(default)]
    pub units: String,
}

/// Named device parameters `μ⃗`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<Parameter>", into = "Vec<Parameter>")]
pub struct ParameterVector {
    entries: Vec<Parameter>,
}

impl TryFrom<Vec<Parameter>> for ParameterVector {
    type Error = DeviceError;

    fn try_from(entries: Vec<Parameter>) -> Result<Self, Self::Error> {
        Self::new(entries)
    }
}

impl From<ParameterVector> for Vec<Parameter> {
    fn from(p: ParameterVector) -> Self {
        p.entries
    }
}

impl ParameterVector {
    pub fn new(entries: Vec<Parameter>) -> Result<Self, DeviceError> {
        for (i, p) in entries.iter().enumerate() {
            if entries[..i].iter().any(|o| o.name == p.name) {
                return Err(DeviceError::DuplicateParameter(p.name.clone()));
            }
        }
        Ok(Self { entries })
    }

    /// Unitless parameters from `(name, value)` pairs.
    pub fn from_pairs(pairs: &[(&str, f64)]) -> Result<Self, DeviceError> {
        Self::new(
            pairs
                .iter()
                .map(|(n, v)| Parameter {
                    name: (*n).to_string(),
                    value: *v,
                    units: String::new(),
                })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[Parameter] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|p| p.name == name).map(|p| p.value)
    }

    pub fn require(&self, name: &str) -> Result<f64, DeviceError> {
        self.get(name).ok_or_else(|| DeviceError::MissingParameter(name.to_string()))
    }

    /// Copy with one value replaced (or appended).
    pub fn with(&self, name: &str, value: f64) -> Self {
        let mut out = self.clone();
        match out.entries.iter_mut().find(|p| p.name == name) {
            Some(p) => p.value = value,
            None => out.entries.push(Parameter {
                name: name.to_string(),
                value,
                units: String::new(),
            }),
        }
        out
    }
}

/// Closed interval `[low, high]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

impl Interval {
    pub fn new(low: f64, high: f64) -> Self {
        Self { low, high }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.low <= x && x <= self.high
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.low <= other.low && other.high <= self.high
    }

    pub fn overlaps(&self, other: &Interval) -> bool {
        self.low <= other.high && other.low <= self.high
    }

    pub fn width(&self) -> f64 {
        self.high - self.low
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.low + self.high)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.low, self.high)
    }
}

pub type Predicate = Arc<dyn Fn(&ParameterVector) -> bool + Send + Sync>;

/// The set `S` of parameter vectors covered by the per-instance security claims.
#[derive(Clone)]
pub enum RobustSet {
    /// Product of closed per-parameter intervals.
    Componentwise(BTreeMap<String, Interval>),
    General { description: String, predicate: Predicate },
}

impl fmt::Debug for RobustSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Componentwise(m) => f.debug_tuple("Componentwise").field(m).finish(),
            Self::General { description, .. } => f.debug_struct("General").field("description", description).finish(),
        }
    }
}

impl RobustSet {
    pub fn componentwise(intervals: &[(&str, f64, f64)]) -> Result<Self, DeviceError> {
        let mut map = BTreeMap::new();
        for (name, low, high) in intervals {
            if !(low <= high) {
                return Err(DeviceError::EmptyInterval {
                    name: (*name).to_string(),
                    low: *low,
                    high: *high,
                });
            }
            map.insert((*name).to_string(), Interval::new(*low, *high));
        }
        Ok(Self::Componentwise(map))
    }

    pub fn intervals(&self) -> Option<&BTreeMap<String, Interval>> {
        match self {
            Self::Componentwise(m) => Some(m),
            Self::General { .. } => None,
        }
    }
}

pub fn in_robust_set(mu: &ParameterVector, s: &RobustSet) -> Result<bool, DeviceError> {
    match s {
        RobustSet::Componentwise(map) => {
            let mut inside = true;
            for (name, iv) in map {
                inside &= iv.contains(mu.require(name)?);
            }
            Ok(inside)
        }
        RobustSet::General { predicate, .. } => Ok(predicate(mu)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    IidDetector,
    PhaseCoherentSource,
    DegradingDetector,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::IidDetector => "iid_detector",
            Self::PhaseCoherentSource => "phase_coherent_source",
            Self::DegradingDetector => "degrading_detector",
        })
    }
}

/// Per-trial certification statistic for one parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observable {
    /// A trial succeeds with probability equal to the parameter.
    Bernoulli,
    /// A trial is uniform on `[μ − w, μ + w]`, `w = min(spread, μ − low, high − μ)`.
    BoundedMean { low: f64, high: f64, spread: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observation {
    Count { successes: u64, trials: u64 },
    Mean { mean: f64, trials: u64, low: f64, high: f64 },
}

impl Observation {
    pub fn trials(&self) -> u64 {
        match *self {
            Self::Count { trials, .. } | Self::Mean { trials, .. } => trials,
        }
    }

    pub fn estimate(&self) -> f64 {
        match *self {
            Self::Count { successes, trials } => successes as f64 / trials as f64,
            Self::Mean { mean, .. } => mean,
        }
    }
}

/// Shape of the degrading detector's dark-count envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegradingShape {
    /// `f_upp(j, T) = dark0 + j·T·slope_upper`.
    pub slope_upper: f64,
    /// `f_low(j, T) = dark0 + j·T·slope_lower`.
    pub slope_lower: f64,
    /// Realized rate `f_low + position·(f_upp − f_low)`, `position ∈ [0, 1]`.
    pub position: f64,
    pub temp_low: f64,
    pub temp_high: f64,
    pub temp_spread: f64,
}

impl Default for DegradingShape {
    fn default() -> Self {
        Self {
            slope_upper: 1e-3,
            slope_lower: 0.0,
            position: 1.0,
            temp_low: 0.0,
            temp_high: 10.0,
            temp_spread: 0.5,
        }
    }
}

/// Attacks available to the built-in families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackSpec {
    None,
    /// Eve obtains the key with probability (detectors) or amplitude weight
    /// (sources) `strength`.
    KeyCopy { strength: f64 },
    /// Unambiguous discrimination of the source states at high loss.
    HighLossUsd,
}

impl fmt::Display for AttackSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::None => f.write_str("none"),
            Self::KeyCopy { strength } => write!(f, "key_copy({strength})"),
            Self::HighLossUsd => f.write_str("high_loss_usd"),
        }
    }
}

/// A device model `M` from one of the built-in families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceModel {
    pub family: Family,
    pub params: ParameterVector,
    pub memoryless: bool,
    /// Length of the key each instance produces.
    pub key_length: usize,
    pub degrading: DegradingShape,
    /// Observables for parameters beyond the family's own (e.g. a Trojan-horse bound).
    pub extra_observables: BTreeMap<String, Observable>,
}

impl DeviceModel {
    pub fn new(family: Family, params: ParameterVector, key_length: usize) -> Result<Self, DeviceError> {
        let model = Self {
            family,
            params,
            memoryless: true,
            key_length,
            degrading: DegradingShape::default(),
            extra_observables: BTreeMap::new(),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn iid_detector(dark: f64, key_length: usize) -> Result<Self, DeviceError> {
        Self::new(Family::IidDetector, ParameterVector::from_pairs(&[("dark", dark)])?, key_length)
    }

    pub fn phase_coherent_source(coherence: f64, key_length: usize) -> Result<Self, DeviceError> {
        Self::new(
            Family::PhaseCoherentSource,
            ParameterVector::from_pairs(&[("coherence", coherence)])?,
            key_length,
        )
    }

    pub fn degrading_detector(dark0: f64, temp: f64, key_length: usize) -> Result<Self, DeviceError> {
        Self::new(
            Family::DegradingDetector,
            ParameterVector::from_pairs(&[("dark0", dark0), ("temp", temp)])?,
            key_length,
        )
    }

    /// Parameters every model of the family must carry.
    pub fn family_parameters(family: Family) -> &'static [&'static str] {
        match family {
            Family::IidDetector => &["dark"],
            Family::PhaseCoherentSource => &["coherence"],
            Family::DegradingDetector => &["dark0", "temp"],
        }
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        if !self.memoryless {
            return Err(DeviceError::NotMemoryless);
        }
        for name in Self::family_parameters(self.family) {
            self.params.require(name)?;
        }
        for p in self.params.entries() {
            let (lo, hi) = match self.observable(&p.name)? {
                Observable::Bernoulli => (0.0, 1.0),
                Observable::BoundedMean { low, high, .. } => (low, high),
            };
            if !(lo <= p.value && p.value <= hi) {
                return Err(DeviceError::OutOfRange {
                    name: p.name.clone(),
                    value: p.value,
                    range: format!("[{lo}, {hi}]"),
                });
            }
        }
        let shape = &self.degrading;
        if !(0.0..=1.0).contains(&shape.position) || shape.slope_lower > shape.slope_upper {
            return Err(DeviceError::OutOfRange {
                name: "degrading.position".into(),
                value: shape.position,
                range: "[0, 1] with slope_lower ≤ slope_upper".into(),
            });
        }
        Ok(())
    }

    pub fn observable(&self, name: &str) -> Result<Observable, DeviceError> {
        if let Some(o) = self.extra_observables.get(name) {
            return Ok(*o);
        }
        match (self.family, name) {
            (Family::IidDetector, "dark")
            | (Family::PhaseCoherentSource, "coherence")
            | (Family::DegradingDetector, "dark0") => Ok(Observable::Bernoulli),
            (Family::DegradingDetector, "temp") => Ok(Observable::BoundedMean {
                low: self.degrading.temp_low,
                high: self.degrading.temp_high,
                spread: self.degrading.temp_spread,
            }),
            _ if self.params.get(name).is_some() => Ok(Observable::Bernoulli),
            _ => Err(DeviceError::UnknownObservable(name.to_string())),
        }
    }

    /// `f_upp(j, T)` of the degrading detector.
    pub fn dark_upper(&self, j: usize) -> Result<f64, DeviceError> {
        let dark0 = self.params.require("dark0")?;
        let temp = self.params.require("temp")?;
        Ok(dark0 + j as f64 * temp * self.degrading.slope_upper)
    }

    /// `f_low(j, T)` of the degrading detector.
    pub fn dark_lower(&self, j: usize) -> Result<f64, DeviceError> {
        let dark0 = self.params.require("dark0")?;
        let temp = self.params.require("temp")?;
        Ok(dark0 + j as f64 * temp * self.degrading.slope_lower)
    }

    /// Dark-count rate of instance `j` for the detector families.
    pub fn dark_rate(&self, j: usize) -> Result<f64, DeviceError> {
        let rate = match self.family {
            Family::IidDetector => self.params.require("dark")?,
            Family::DegradingDetector => {
                let (lo, hi) = (self.dark_lower(j)?, self.dark_upper(j)?);
                lo + self.degrading.position * (hi - lo)
            }
            Family::PhaseCoherentSource => 0.0,
        };
        if !(0.0..=1.0).contains(&rate) {
            return Err(DeviceError::OutOfRange {
                name: format!("dark rate at instance {j}"),
                value: rate,
                range: "[0, 1]".into(),
            });
        }
        Ok(rate)
    }
}

/// `n` IID certification trials of the named parameter's observable.
pub fn sample_cert_observable(
    model: &DeviceModel,
    parameter: &str,
    trials: u64,
    rng_seed: u64,
) -> Result<Observation, DeviceError> {
    let mut rng = seed::rng_for(rng_seed, &[]);
    sample_with(model, parameter, trials, &mut rng)
}

pub(crate) fn sample_with<R: Rng + ?Sized>(
    model: &DeviceModel,
    parameter: &str,
    trials: u64,
    rng: &mut R,
) -> Result<Observation, DeviceError> {
    let mu = model.params.require(parameter)?;
    Ok(match model.observable(parameter)? {
        Observable::Bernoulli => {
            let successes = if trials == 0 {
                0
            } else {
                Binomial::new(trials, mu).expect("probability in [0, 1]").sample(rng)
            };
            Observation::Count { successes, trials }
        }
        Observable::BoundedMean { low, high, spread } => {
            let w = spread.min(mu - low).min(high - mu).max(0.0);
            let mut sum = 0.0;
            for _ in 0..trials {
                sum += if w > 0.0 { rng.random_range(mu - w..=mu + w) } else { mu };
            }
            Observation::Mean {
                mean: if trials == 0 { mu } else { sum / trials as f64 },
                trials,
                low,
                high,
            }
        }
    })
}

/// Name of Eve's register for instance `j`.
pub fn eve_register_name(j: usize) -> String {
    format!("E{j}")
}

/// The instance channel `E_j` realizing `model` under `attack`, with keys in the
/// registers `KA{j}`, `KB{j}` and Eve's system in `E{j}`.
///
/// Instances prepare fresh systems and leave all earlier registers alone.
pub fn instance_channel(
    model: &DeviceModel,
    attack: &AttackSpec,
    j: usize,
    max_length: usize,
) -> Result<InstanceChannel, DeviceError> {
    model.validate()?;
    let keys = KeyLayout::for_instance(max_length, j);
    if model.key_length > max_length {
        return Err(ProtocolError::KeyLength {
            length: model.key_length,
            max: max_length,
        }
        .into());
    }
    let channel = match model.family {
        Family::IidDetector | Family::DegradingDetector => {
            let strength = match *attack {
                AttackSpec::None => 0.0,
                AttackSpec::KeyCopy { strength } => strength,
                AttackSpec::HighLossUsd => {
                    return Err(DeviceError::InvalidAttack {
                        family: model.family,
                        attack: attack.to_string(),
                    })
                }
            };
            check_unit("attack strength", strength)?;
            detector_channel(&keys, model.key_length, model.dark_rate(j)?, strength, &eve_register_name(j))
        }
        Family::PhaseCoherentSource => {
            let coherence = model.params.require("coherence")?;
            let weight = match *attack {
                AttackSpec::None => 0.0,
                AttackSpec::KeyCopy { strength } => {
                    check_unit("attack strength", strength)?;
                    coherence * strength
                }
                AttackSpec::HighLossUsd => coherence,
            };
            source_channel(&keys, model.key_length, weight, &eve_register_name(j))
        }
    };
    Ok(InstanceChannel::new(j, channel, keys, None)?)
}

fn check_unit(name: &str, v: f64) -> Result<(), DeviceError> {
    if !(0.0..=1.0).contains(&v) {
        return Err(DeviceError::OutOfRange {
            name: name.to_string(),
            value: v,
            range: "[0, 1]".into(),
        });
    }
    Ok(())
}

/// Detector instance: uniform ℓ-bit key for Alice, each of Bob's bits flipped with
/// probability `dark/2`, and a classical register for Eve holding the key with
/// probability `strength` and the blank symbol `2^ℓ` otherwise.
fn detector_channel(keys: &KeyLayout, length: usize, dark: f64, strength: f64, eve: &str) -> KrausChannel {
    let n = 1usize << length;
    let blank = n;
    let output = keys
        .layout()
        .concat(&Layout::new(vec![Register::classical(eve, n + 1)]).expect("single register"))
        .expect("distinct names");
    let flip = dark / 2.0;
    let mut branches = Vec::new();
    for k in 0..n {
        for kb in 0..n {
            let errors = (k ^ kb).count_ones() as i32;
            let p_bob = flip.powi(errors) * (1.0 - flip).powi(length as i32 - errors);
            for (e, p_eve) in [(k, strength), (blank, 1.0 - strength)] {
                let p = p_bob * p_eve / n as f64;
                if p > 0.0 {
                    branches.push(Branch {
                        output: vec![keys.value(length, k), keys.value(length, kb), e],
                        ops: vec![CMatrix::from_element(1, 1, c(p.sqrt()))],
                    });
                }
            }
        }
    }
    KrausChannel::from_branches(Layout::empty(), output, vec![branches]).expect("probabilities sum to one")
}

/// Source instance: correct uniform ℓ-bit keys and Eve's quantum register in
/// `√w|k⟩ + √(1−w)|⊥⟩`, `w` the conclusive-identification probability.
fn source_channel(keys: &KeyLayout, length: usize, weight: f64, eve: &str) -> KrausChannel {
    let n = 1usize << length;
    let output = keys
        .layout()
        .concat(&Layout::new(vec![Register::quantum(eve, n + 1)]).expect("single register"))
        .expect("distinct names");
    let amp = (1.0 / n as f64).sqrt();
    let branches = (0..n)
        .map(|k| {
            let mut psi = CMatrix::zeros(n + 1, 1);
            psi[(k, 0)] += c(amp * weight.sqrt());
            psi[(n, 0)] += c(amp * (1.0 - weight).sqrt());
            let v = keys.value(length, k);
            Branch {
                output: vec![v, v],
                ops: vec![psi],
            }
        })
        .collect();
    KrausChannel::from_branches(Layout::empty(), output, vec![branches]).expect("normalized amplitudes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn robust_set_membership_is_closed() {
        let s = RobustSet::componentwise(&[("dark", 0.0, 0.02)]).unwrap();
        let mu = |v| ParameterVector::from_pairs(&[("dark", v)]).unwrap();
        assert!(in_robust_set(&mu(0.01), &s).unwrap());
        assert!(!in_robust_set(&mu(0.03), &s).unwrap());
        assert!(in_robust_set(&mu(0.02), &s).unwrap());
        let other = ParameterVector::from_pairs(&[("coherence", 0.0)]).unwrap();
        assert!(matches!(in_robust_set(&other, &s), Err(DeviceError::MissingParameter(_))));
    }

    #[test]
    fn degrading_rate_formula() {
        let m = DeviceModel::degrading_detector(0.01, 1.0, 1).unwrap();
        assert!((m.dark_rate(3).unwrap() - 0.013).abs() < 1e-15);
        assert!((m.dark_lower(3).unwrap() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn memory_models_rejected() {
        let mut m = DeviceModel::iid_detector(0.01, 1).unwrap();
        m.memoryless = false;
        assert_eq!(m.validate(), Err(DeviceError::NotMemoryless));
    }

    #[test]
    fn usd_attack_needs_a_source() {
        let m = DeviceModel::iid_detector(0.01, 1).unwrap();
        assert!(matches!(
            instance_channel(&m, &AttackSpec::HighLossUsd, 1, 2),
            Err(DeviceError::InvalidAttack { .. })
        ));
    }
}
