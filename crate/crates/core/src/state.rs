//! Observable state.
//!
//! A [`StateSnapshot`] is the gate's only view of the world at one tick: a
//! map from variable to observed value plus uncertainty. A variable that is
//! absent from the map is unobservable at that tick. Snapshots are immutable;
//! mutations produce a new snapshot with a strictly larger timestamp.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rust_decimal::Decimal;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Abstract clock tick. The simulator (or the caller) owns the clock.
pub type Tick = u64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StateError {
    #[error("invalid variable id {0:?}")]
    InvalidVariableId(String),
    #[error("uncertainty {0} outside [0, 1]")]
    UncertaintyOutOfRange(f64),
    #[error("threshold {0} outside [0, 1]")]
    ThresholdOutOfRange(f64),
    #[error("max_recovery_attempts must be positive")]
    ZeroRecoveryBound,
    #[error("non-monotone timestamp: {next} does not follow {prev}")]
    NonMonotoneTimestamp { prev: Tick, next: Tick },
    #[error("invalid number literal {0:?}")]
    InvalidNumber(String),
    #[error("state file: {0}")]
    StateFile(String),
}

/// Name of a state variable, e.g. `account.status`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VariableId(String);

impl VariableId {
    pub fn new(name: impl Into<String>) -> Result<Self, StateError> {
        let name = name.into();
        if is_identifier_path(&name) {
            Ok(Self(name))
        } else {
            Err(StateError::InvalidVariableId(name))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// Dot-separated segments, each `[a-zA-Z_][a-zA-Z0-9_]*`.
pub(crate) fn is_identifier_path(s: &str) -> bool {
    !s.is_empty()
        && s.split('.').all(|seg| {
            let mut chars = seg.chars();
            match chars.next() {
                Some(c) if c.is_ascii_alphabetic() || c == '_' => {
                    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
                }
                _ => false,
            }
        })
}

impl fmt::Debug for VariableId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for VariableId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for VariableId {
    type Err = StateError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

impl Serialize for VariableId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for VariableId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        VariableId::new(raw).map_err(D::Error::custom)
    }
}

/// Observed value of a variable.
///
/// Numbers are exact decimals: `1.0 == 1` and `0.1` means exactly one tenth.
/// JSON encoding: booleans, numbers and strings map directly; enum tags are
/// written `{"enum": "tag"}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VariableValue {
    Bool(bool),
    Number(Decimal),
    Str(String),
    Enum(String),
}

impl VariableValue {
    pub fn number(text: &str) -> Result<Self, StateError> {
        parse_decimal(text).map(VariableValue::Number)
    }

    pub fn enum_tag(tag: impl Into<String>) -> Self {
        VariableValue::Enum(tag.into())
    }

    pub fn str(s: impl Into<String>) -> Self {
        VariableValue::Str(s.into())
    }

    pub fn as_number(&self) -> Option<Decimal> {
        match self {
            VariableValue::Number(d) => Some(*d),
            _ => None,
        }
    }

    /// Parses the literal syntax used for guard branch keys:
    /// `true`/`false`, a JSON number, `#tag` for an enum tag, a JSON-quoted
    /// string, or any other bare text as a string.
    pub fn parse_literal(text: &str) -> Result<Self, StateError> {
        match text {
            "true" => return Ok(VariableValue::Bool(true)),
            "false" => return Ok(VariableValue::Bool(false)),
            _ => {}
        }
        if is_json_number(text) {
            return parse_decimal(text).map(VariableValue::Number);
        }
        if let Some(tag) = text.strip_prefix('#') {
            if tag.is_empty() {
                return Err(StateError::StateFile("empty enum tag literal".into()));
            }
            return Ok(VariableValue::Enum(tag.to_string()));
        }
        if text.starts_with('"') {
            return serde_json::from_str::<String>(text)
                .map(VariableValue::Str)
                .map_err(|e| StateError::StateFile(format!("bad quoted literal {text:?}: {e}")));
        }
        Ok(VariableValue::Str(text.to_string()))
    }

    /// Inverse of [`VariableValue::parse_literal`].
    pub fn to_literal(&self) -> String {
        match self {
            VariableValue::Bool(b) => b.to_string(),
            VariableValue::Number(d) => d.to_string(),
            VariableValue::Enum(tag) => format!("#{tag}"),
            VariableValue::Str(s) => {
                let bare_is_ambiguous = s.is_empty()
                    || s == "true"
                    || s == "false"
                    || s.starts_with('#')
                    || s.starts_with('"')
                    || is_json_number(s);
                if bare_is_ambiguous {
                    serde_json::to_string(s).expect("string serializes")
                } else {
                    s.clone()
                }
            }
        }
    }

    pub(crate) fn to_json(&self) -> serde_json::Value {
        match self {
            VariableValue::Bool(b) => serde_json::Value::Bool(*b),
            VariableValue::Number(d) => serde_json::Value::Number(
                d.to_string().parse().expect("decimal renders as a JSON number"),
            ),
            VariableValue::Str(s) => serde_json::Value::String(s.clone()),
            VariableValue::Enum(tag) => {
                let mut m = serde_json::Map::new();
                m.insert("enum".into(), serde_json::Value::String(tag.clone()));
                serde_json::Value::Object(m)
            }
        }
    }

    pub(crate) fn from_json(v: &serde_json::Value) -> Result<Self, StateError> {
        match v {
            serde_json::Value::Bool(b) => Ok(VariableValue::Bool(*b)),
            serde_json::Value::Number(n) => parse_decimal(&n.to_string()).map(VariableValue::Number),
            serde_json::Value::String(s) => Ok(VariableValue::Str(s.clone())),
            serde_json::Value::Object(m) if m.len() == 1 => match m.get("enum") {
                Some(serde_json::Value::String(tag)) if !tag.is_empty() => {
                    Ok(VariableValue::Enum(tag.clone()))
                }
                _ => Err(StateError::StateFile(format!("unsupported value {v}"))),
            },
            other => Err(StateError::StateFile(format!("unsupported value {other}"))),
        }
    }
}

impl fmt::Display for VariableValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_literal())
    }
}

impl Serialize for VariableValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for VariableValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = serde_json::Value::deserialize(d)?;
        VariableValue::from_json(&raw).map_err(D::Error::custom)
    }
}

/// JSON number grammar: `-?(0|[1-9][0-9]*)(\.[0-9]+)?([eE][+-]?[0-9]+)?`.
fn is_json_number(s: &str) -> bool {
    let b = s.as_bytes();
    let mut i = 0;
    if b.get(i) == Some(&b'-') {
        i += 1;
    }
    match b.get(i) {
        Some(b'0') => i += 1,
        Some(c) if c.is_ascii_digit() => {
            while b.get(i).is_some_and(u8::is_ascii_digit) {
                i += 1;
            }
        }
        _ => return false,
    }
    if b.get(i) == Some(&b'.') {
        i += 1;
        let start = i;
        while b.get(i).is_some_and(u8::is_ascii_digit) {
            i += 1;
        }
        if i == start {
            return false;
        }
    }
    if matches!(b.get(i), Some(b'e' | b'E')) {
        i += 1;
        if matches!(b.get(i), Some(b'+' | b'-')) {
            i += 1;
        }
        let start = i;
        while b.get(i).is_some_and(u8::is_ascii_digit) {
            i += 1;
        }
        if i == start {
            return false;
        }
    }
    i == b.len()
}

fn parse_decimal(text: &str) -> Result<Decimal, StateError> {
    if !is_json_number(text) {
        return Err(StateError::InvalidNumber(text.to_string()));
    }
    let parsed = if text.contains(['e', 'E']) {
        Decimal::from_scientific(text)
    } else {
        Decimal::from_str_exact(text)
    };
    parsed.map_err(|_| StateError::InvalidNumber(text.to_string()))
}

/// A single observation: value plus uncertainty `u` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Observation {
    pub value: VariableValue,
    pub u: f64,
}

impl Observation {
    pub fn new(value: VariableValue, u: f64) -> Result<Self, StateError> {
        if !(0.0..=1.0).contains(&u) {
            return Err(StateError::UncertaintyOutOfRange(u));
        }
        Ok(Self { value, u })
    }

    /// Observation with zero uncertainty.
    pub fn certain(value: VariableValue) -> Self {
        Self { value, u: 0.0 }
    }
}

impl<'de> Deserialize<'de> for Observation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            value: VariableValue,
            u: f64,
        }
        let raw = Raw::deserialize(d)?;
        Observation::new(raw.value, raw.u).map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ObservationStatus {
    Observed(Observation),
    Unobserved,
}

impl ObservationStatus {
    pub fn observation(&self) -> Option<&Observation> {
        match self {
            ObservationStatus::Observed(o) => Some(o),
            ObservationStatus::Unobserved => None,
        }
    }
}

/// Resolved iff observed with `u <= theta`. The boundary counts as resolved.
pub fn is_resolved(status: &ObservationStatus, theta: f64) -> bool {
    match status {
        ObservationStatus::Observed(o) => o.u <= theta,
        ObservationStatus::Unobserved => false,
    }
}

/// Immutable view of observable state at one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSnapshot {
    timestamp: Tick,
    observations: Arc<BTreeMap<VariableId, Observation>>,
}

impl StateSnapshot {
    pub fn new(timestamp: Tick, observations: BTreeMap<VariableId, Observation>) -> Self {
        Self {
            timestamp,
            observations: Arc::new(observations),
        }
    }

    pub fn empty(timestamp: Tick) -> Self {
        Self::new(timestamp, BTreeMap::new())
    }

    pub fn timestamp(&self) -> Tick {
        self.timestamp
    }

    pub fn observations(&self) -> &BTreeMap<VariableId, Observation> {
        &self.observations
    }

    pub fn get(&self, var: &VariableId) -> Option<&Observation> {
        self.observations.get(var)
    }

    /// Parses a state file: `{"t": <tick>, "<var>": {"value": .., "u": ..}, ..}`.
    pub fn from_json_str(text: &str) -> Result<Self, StateError> {
        let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| {
            StateError::StateFile(format!("line {} column {}: {e}", e.line(), e.column()))
        })?;
        let map = raw
            .as_object()
            .ok_or_else(|| StateError::StateFile("top level must be an object".into()))?;
        let t = map
            .get("t")
            .ok_or_else(|| StateError::StateFile("missing required field \"t\"".into()))?
            .as_u64()
            .ok_or_else(|| StateError::StateFile("\"t\" must be a non-negative integer".into()))?;
        let mut observations = BTreeMap::new();
        for (key, entry) in map {
            if key == "t" {
                continue;
            }
            let var = VariableId::new(key.clone())?;
            let obs: Observation = serde_json::from_value(entry.clone())
                .map_err(|e| StateError::StateFile(format!("variable {key}: {e}")))?;
            observations.insert(var, obs);
        }
        Ok(Self::new(t, observations))
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut m = serde_json::Map::new();
        m.insert("t".into(), serde_json::Value::from(self.timestamp));
        for (var, obs) in self.observations.iter() {
            let mut o = serde_json::Map::new();
            o.insert("value".into(), obs.value.to_json());
            o.insert("u".into(), serde_json::Value::from(obs.u));
            m.insert(var.to_string(), serde_json::Value::Object(o));
        }
        serde_json::Value::Object(m)
    }

    /// Hex SHA-256 of the canonical JSON rendering.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(&self.to_json()).expect("snapshot serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

pub fn lookup(snapshot: &StateSnapshot, var: &VariableId) -> ObservationStatus {
    match snapshot.get(var) {
        Some(o) => ObservationStatus::Observed(o.clone()),
        None => ObservationStatus::Unobserved,
    }
}

/// Returns a new snapshot at `timestamp` with `delta` applied. Setting a
/// variable to [`ObservationStatus::Unobserved`] removes it.
pub fn apply_mutation(
    snapshot: &StateSnapshot,
    timestamp: Tick,
    delta: impl IntoIterator<Item = (VariableId, ObservationStatus)>,
) -> Result<StateSnapshot, StateError> {
    if timestamp <= snapshot.timestamp {
        return Err(StateError::NonMonotoneTimestamp {
            prev: snapshot.timestamp,
            next: timestamp,
        });
    }
    let mut next = (*snapshot.observations).clone();
    for (var, status) in delta {
        match status {
            ObservationStatus::Observed(o) => {
                next.insert(var, o);
            }
            ObservationStatus::Unobserved => {
                next.remove(&var);
            }
        }
    }
    Ok(StateSnapshot::new(timestamp, next))
}

/// Gate-wide settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub theta_auth: f64,
    pub max_recovery_attempts: u32,
    #[serde(default)]
    pub audit_sampling: crate::audit::SamplingPolicy,
}

impl GateConfig {
    pub fn new(theta_auth: f64, max_recovery_attempts: u32) -> Result<Self, StateError> {
        let cfg = Self {
            theta_auth,
            max_recovery_attempts,
            audit_sampling: Default::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), StateError> {
        if !(0.0..=1.0).contains(&self.theta_auth) {
            return Err(StateError::ThresholdOutOfRange(self.theta_auth));
        }
        if self.max_recovery_attempts == 0 {
            return Err(StateError::ZeroRecoveryBound);
        }
        Ok(())
    }
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            theta_auth: 0.2,
            max_recovery_attempts: 5,
            audit_sampling: Default::default(),
        }
    }
}
