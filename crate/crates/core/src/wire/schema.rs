//! Module self-description: parameter specs, capabilities, descriptors,
//! descriptor validation and value coercion.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use super::value::{DataValue, Record};

pub const MIN_HEARTBEAT_MS: u64 = 100;
pub const MAX_HEARTBEAT_MS: u64 = 60_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Real,
    Integer,
    Boolean,
    Enum,
    Text,
    /// Ordered list of reals (e.g. a measured trace).
    List,
}

impl ParamKind {
    pub fn is_numeric(self) -> bool {
        matches!(self, ParamKind::Real | ParamKind::Integer)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ParamKind::Real => "real",
            ParamKind::Integer => "integer",
            ParamKind::Boolean => "boolean",
            ParamKind::Enum => "enum",
            ParamKind::Text => "text",
            ParamKind::List => "list",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Device,
    Analyzer,
    Planner,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Device => "device",
            Role::Analyzer => "analyzer",
            Role::Planner => "planner",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpec {
    pub name: String,
    pub kind: ParamKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<DataValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_steps: Option<u64>,
}

impl ParameterSpec {
    pub fn new(name: impl Into<String>, kind: ParamKind) -> Self {
        Self {
            name: name.into(),
            kind,
            min: None,
            max: None,
            choices: None,
            unit: None,
            default: None,
            grid_steps: None,
        }
    }

    pub fn real(name: impl Into<String>, min: f64, max: f64) -> Self {
        Self { min: Some(min), max: Some(max), ..Self::new(name, ParamKind::Real) }
    }

    pub fn integer(name: impl Into<String>, min: i64, max: i64) -> Self {
        Self { min: Some(min as f64), max: Some(max as f64), ..Self::new(name, ParamKind::Integer) }
    }

    pub fn choice<S: Into<String>>(name: impl Into<String>, choices: impl IntoIterator<Item = S>) -> Self {
        Self { choices: Some(choices.into_iter().map(Into::into).collect()), ..Self::new(name, ParamKind::Enum) }
    }

    pub fn with_grid(mut self, steps: u64) -> Self {
        self.grid_steps = Some(steps);
        self
    }

    pub fn with_default(mut self, value: impl Into<DataValue>) -> Self {
        self.default = Some(value.into());
        self
    }

    pub fn with_unit(mut self, unit: impl Into<String>) -> Self {
        self.unit = Some(unit.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapabilitySchema {
    pub name: String,
    pub role: Role,
    #[serde(default)]
    pub inputs: Vec<ParameterSpec>,
    #[serde(default)]
    pub outputs: Vec<ParameterSpec>,
    pub default_timeout_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleDescriptor {
    pub module_name: String,
    pub version: String,
    pub capabilities: Vec<CapabilitySchema>,
    pub heartbeat_interval_ms: u64,
}

impl ModuleDescriptor {
    pub fn capability(&self, name: &str, role: Role) -> Option<&CapabilitySchema> {
        self.capabilities.iter().find(|c| c.name == name && c.role == role)
    }
}

/// Violation kinds shared by descriptor and campaign validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ViolationCode {
    Malformed,
    InvalidName,
    EmptyName,
    BoundsInverted,
    BoundsNotAllowed,
    NonIntegralBound,
    ChoicesNotAllowed,
    MissingChoices,
    EmptyChoices,
    DuplicateChoice,
    GridStepsNotAllowed,
    InvalidGridSteps,
    DefaultOutOfRange,
    DuplicateInput,
    DuplicateOutput,
    DuplicateCapability,
    NoCapabilities,
    IntervalOutOfRange,
    InvalidTimeout,
    DuplicateDimension,
    MissingBounds,
    MissingGridSteps,
    UngriddableDimension,
    GridTooLarge,
    NoSteps,
    DuplicateStepName,
    ForwardStepReference,
    UnknownStep,
    UnknownDimension,
    UnknownInput,
    MissingInput,
    UnknownOutputField,
    UnknownObjectiveField,
    NoStopCriterion,
    InvalidMaxExperiments,
    InvalidRetryCount,
    InvalidEpsilon,
    InvalidSeed,
    InvalidCampaignId,
    DuplicateName,
}

impl ViolationCode {
    const NAMES: &'static [(ViolationCode, &'static str)] = &[
        (ViolationCode::Malformed, "Malformed"),
        (ViolationCode::InvalidName, "InvalidName"),
        (ViolationCode::EmptyName, "EmptyName"),
        (ViolationCode::BoundsInverted, "BoundsInverted"),
        (ViolationCode::BoundsNotAllowed, "BoundsNotAllowed"),
        (ViolationCode::NonIntegralBound, "NonIntegralBound"),
        (ViolationCode::ChoicesNotAllowed, "ChoicesNotAllowed"),
        (ViolationCode::MissingChoices, "MissingChoices"),
        (ViolationCode::EmptyChoices, "EmptyChoices"),
        (ViolationCode::DuplicateChoice, "DuplicateChoice"),
        (ViolationCode::GridStepsNotAllowed, "GridStepsNotAllowed"),
        (ViolationCode::InvalidGridSteps, "InvalidGridSteps"),
        (ViolationCode::DefaultOutOfRange, "DefaultOutOfRange"),
        (ViolationCode::DuplicateInput, "DuplicateInput"),
        (ViolationCode::DuplicateOutput, "DuplicateOutput"),
        (ViolationCode::DuplicateCapability, "DuplicateCapability"),
        (ViolationCode::NoCapabilities, "NoCapabilities"),
        (ViolationCode::IntervalOutOfRange, "IntervalOutOfRange"),
        (ViolationCode::InvalidTimeout, "InvalidTimeout"),
        (ViolationCode::DuplicateDimension, "DuplicateDimension"),
        (ViolationCode::MissingBounds, "MissingBounds"),
        (ViolationCode::MissingGridSteps, "MissingGridSteps"),
        (ViolationCode::UngriddableDimension, "UngriddableDimension"),
        (ViolationCode::GridTooLarge, "GridTooLarge"),
        (ViolationCode::NoSteps, "NoSteps"),
        (ViolationCode::DuplicateStepName, "DuplicateStepName"),
        (ViolationCode::ForwardStepReference, "ForwardStepReference"),
        (ViolationCode::UnknownStep, "UnknownStep"),
        (ViolationCode::UnknownDimension, "UnknownDimension"),
        (ViolationCode::UnknownInput, "UnknownInput"),
        (ViolationCode::MissingInput, "MissingInput"),
        (ViolationCode::UnknownOutputField, "UnknownOutputField"),
        (ViolationCode::UnknownObjectiveField, "UnknownObjectiveField"),
        (ViolationCode::NoStopCriterion, "NoStopCriterion"),
        (ViolationCode::InvalidMaxExperiments, "InvalidMaxExperiments"),
        (ViolationCode::InvalidRetryCount, "InvalidRetryCount"),
        (ViolationCode::InvalidEpsilon, "InvalidEpsilon"),
        (ViolationCode::InvalidSeed, "InvalidSeed"),
        (ViolationCode::InvalidCampaignId, "InvalidCampaignId"),
        (ViolationCode::DuplicateName, "DuplicateName"),
    ];

    pub fn as_str(self) -> &'static str {
        Self::NAMES.iter().find(|(c, _)| *c == self).map(|(_, n)| *n).expect("every code is named")
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::NAMES.iter().find(|(_, n)| *n == name).map(|(c, _)| *c)
    }
}

/// One failed invariant, located by a dotted path into the offending document.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Violation {
    pub code: ViolationCode,
    pub path: String,
}

impl Violation {
    pub fn new(code: ViolationCode, path: impl Into<String>) -> Self {
        Self { code, path: path.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.code.as_str(), self.path)
    }
}

impl std::str::FromStr for Violation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (code, path) = s.split_once('@').ok_or_else(|| format!("not a violation: {s}"))?;
        let code = ViolationCode::parse(code).ok_or_else(|| format!("unknown violation code {code}"))?;
        Ok(Violation::new(code, path))
    }
}

impl Serialize for Violation {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Violation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// `^[a-z][a-z0-9_]{0,63}$`
pub fn is_identifier(name: &str) -> bool {
    let bytes = name.as_bytes();
    !bytes.is_empty()
        && bytes.len() <= 64
        && bytes[0].is_ascii_lowercase()
        && bytes[1..].iter().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || *b == b'_')
}

/// Checks one parameter spec, appending violations under `path`.
pub fn validate_parameter(spec: &ParameterSpec, path: &str, out: &mut Vec<Violation>) {
    use ViolationCode::*;
    if !is_identifier(&spec.name) {
        out.push(Violation::new(InvalidName, format!("{path}.name")));
    }
    let numeric = spec.kind.is_numeric();
    if !numeric && (spec.min.is_some() || spec.max.is_some()) {
        out.push(Violation::new(BoundsNotAllowed, path));
    }
    for (label, bound) in [("min", spec.min), ("max", spec.max)] {
        if let Some(b) = bound {
            if !b.is_finite() || (spec.kind == ParamKind::Integer && b.fract() != 0.0) {
                out.push(Violation::new(NonIntegralBound, format!("{path}.{label}")));
            }
        }
    }
    if let (Some(lo), Some(hi)) = (spec.min, spec.max) {
        if lo > hi {
            out.push(Violation::new(BoundsInverted, path));
        }
    }
    match (&spec.choices, spec.kind) {
        (None, ParamKind::Enum) => out.push(Violation::new(MissingChoices, format!("{path}.choices"))),
        (Some(c), ParamKind::Enum) => {
            if c.is_empty() {
                out.push(Violation::new(EmptyChoices, format!("{path}.choices")));
            }
            let mut seen = HashSet::new();
            for (i, choice) in c.iter().enumerate() {
                if !seen.insert(choice.as_str()) {
                    out.push(Violation::new(DuplicateChoice, format!("{path}.choices[{i}]")));
                }
            }
        }
        (Some(_), _) => out.push(Violation::new(ChoicesNotAllowed, format!("{path}.choices"))),
        (None, _) => {}
    }
    match spec.grid_steps {
        Some(_) if !numeric => out.push(Violation::new(GridStepsNotAllowed, format!("{path}.grid_steps"))),
        Some(0) => out.push(Violation::new(InvalidGridSteps, format!("{path}.grid_steps"))),
        _ => {}
    }
    if let Some(default) = &spec.default {
        let bare = ParameterSpec { default: None, ..spec.clone() };
        if coerce_value(Some(default), &bare).is_err() {
            out.push(Violation::new(DefaultOutOfRange, format!("{path}.default")));
        }
    }
}

pub fn validate_capability(cap: &CapabilitySchema, path: &str, out: &mut Vec<Violation>) {
    if cap.name.is_empty() {
        out.push(Violation::new(ViolationCode::EmptyName, format!("{path}.name")));
    }
    if cap.default_timeout_ms == 0 {
        out.push(Violation::new(ViolationCode::InvalidTimeout, format!("{path}.default_timeout_ms")));
    }
    for (label, specs, dup) in [
        ("inputs", &cap.inputs, ViolationCode::DuplicateInput),
        ("outputs", &cap.outputs, ViolationCode::DuplicateOutput),
    ] {
        let mut seen = HashSet::new();
        for (i, spec) in specs.iter().enumerate() {
            let p = format!("{path}.{label}[{i}]");
            validate_parameter(spec, &p, out);
            if !seen.insert(spec.name.as_str()) {
                out.push(Violation::new(dup, p));
            }
        }
    }
}

/// Returns every invariant the descriptor breaks; empty means valid.
pub fn validate_descriptor(d: &ModuleDescriptor) -> Vec<Violation> {
    let mut out = Vec::new();
    if d.module_name.is_empty() {
        out.push(Violation::new(ViolationCode::EmptyName, "module_name"));
    }
    if !(MIN_HEARTBEAT_MS..=MAX_HEARTBEAT_MS).contains(&d.heartbeat_interval_ms) {
        out.push(Violation::new(ViolationCode::IntervalOutOfRange, "heartbeat_interval_ms"));
    }
    if d.capabilities.is_empty() {
        out.push(Violation::new(ViolationCode::NoCapabilities, "capabilities"));
    }
    let mut seen = HashSet::new();
    let mut duplicated = false;
    for (i, cap) in d.capabilities.iter().enumerate() {
        validate_capability(cap, &format!("capabilities[{i}]"), &mut out);
        if !seen.insert(cap.name.as_str()) && !duplicated {
            duplicated = true;
            out.push(Violation::new(ViolationCode::DuplicateCapability, "capabilities"));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoerceError {
    #[error("{name}: value {value} outside [{min:?}, {max:?}]")]
    OutOfBounds { name: String, value: f64, min: Option<f64>, max: Option<f64> },
    #[error("{name}: expected {expected}, found {found}")]
    KindMismatch { name: String, expected: &'static str, found: &'static str },
    #[error("{name}: {value:?} is not one of the declared choices")]
    UnknownChoice { name: String, value: String },
    #[error("{name}: required value missing")]
    MissingRequired { name: String },
    #[error("{name}: not a declared field")]
    UnknownField { name: String },
}

impl CoerceError {
    pub fn code(&self) -> &'static str {
        match self {
            CoerceError::OutOfBounds { .. } => "OutOfBounds",
            CoerceError::KindMismatch { .. } => "KindMismatch",
            CoerceError::UnknownChoice { .. } => "UnknownChoice",
            CoerceError::MissingRequired { .. } => "MissingRequired",
            CoerceError::UnknownField { .. } => "UnknownField",
        }
    }
}

fn check_bounds(value: f64, spec: &ParameterSpec) -> Result<(), CoerceError> {
    let below = spec.min.is_some_and(|lo| value < lo);
    let above = spec.max.is_some_and(|hi| value > hi);
    if below || above {
        return Err(CoerceError::OutOfBounds { name: spec.name.clone(), value, min: spec.min, max: spec.max });
    }
    Ok(())
}

/// Coerces a raw value against its spec. `None` and `Null` both mean missing.
pub fn coerce_value(raw: Option<&DataValue>, spec: &ParameterSpec) -> Result<DataValue, CoerceError> {
    let raw = match raw {
        Some(v) if !v.is_null() => v,
        _ => {
            return match &spec.default {
                Some(d) if !d.is_null() => coerce_value(Some(d), &ParameterSpec { default: None, ..spec.clone() }),
                _ => Err(CoerceError::MissingRequired { name: spec.name.clone() }),
            }
        }
    };
    let mismatch =
        || CoerceError::KindMismatch { name: spec.name.clone(), expected: spec.kind.as_str(), found: raw.kind_name() };
    match spec.kind {
        ParamKind::Real => {
            let v = match raw {
                DataValue::Int(i) => *i as f64,
                DataValue::Real(r) if r.is_finite() => *r,
                _ => return Err(mismatch()),
            };
            check_bounds(v, spec)?;
            Ok(DataValue::Real(v))
        }
        ParamKind::Integer => {
            let v = match raw {
                DataValue::Int(i) => *i,
                DataValue::Real(r) if r.fract() == 0.0 && r.abs() <= 9.007_199_254_740_992e15 => *r as i64,
                _ => return Err(mismatch()),
            };
            check_bounds(v as f64, spec)?;
            Ok(DataValue::Int(v))
        }
        ParamKind::Boolean => raw.as_bool().map(DataValue::Bool).ok_or_else(mismatch),
        ParamKind::Text => raw.as_text().map(DataValue::from).ok_or_else(mismatch),
        ParamKind::Enum => {
            let s = raw.as_text().ok_or_else(mismatch)?;
            if spec.choices.as_deref().unwrap_or_default().iter().any(|c| c == s) {
                Ok(DataValue::from(s))
            } else {
                Err(CoerceError::UnknownChoice { name: spec.name.clone(), value: s.to_owned() })
            }
        }
        ParamKind::List => {
            let items = raw.as_list().ok_or_else(mismatch)?;
            items
                .iter()
                .map(|item| match item {
                    DataValue::Int(i) => Ok(DataValue::Real(*i as f64)),
                    DataValue::Real(r) if r.is_finite() => Ok(DataValue::Real(*r)),
                    other => Err(CoerceError::KindMismatch {
                        name: spec.name.clone(),
                        expected: "real",
                        found: other.kind_name(),
                    }),
                })
                .collect::<Result<Vec<_>, _>>()
                .map(DataValue::List)
        }
    }
}

/// Coerces every declared field of `record`.
///
/// With `allow_extra` undeclared fields pass through untouched, otherwise
/// they are rejected.
pub fn coerce_record(record: &Record, specs: &[ParameterSpec], allow_extra: bool) -> Result<Record, CoerceError> {
    let mut out = Record::new();
    for spec in specs {
        out.insert(spec.name.clone(), coerce_value(record.get(&spec.name), spec)?);
    }
    for (k, v) in record {
        if !specs.iter().any(|s| &s.name == k) {
            if !allow_extra {
                return Err(CoerceError::UnknownField { name: k.clone() });
            }
            out.insert(k.clone(), v.clone());
        }
    }
    Ok(out)
}
