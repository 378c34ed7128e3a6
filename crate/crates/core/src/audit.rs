//! Audit artifacts, sampling, append-only JSONL sinks and log verification.
//!
//! Every line is a JSON object with `"v": 1` and a `"record"` kind, either
//! `"decision"` (an [`AuditArtifact`]) or `"event"`. HALT records and records
//! that leave a HALT bypass sampling.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::authority::Reason;
use crate::gate::{DecisionCode, ExecState};
use crate::resolver::{DiscoveryStep, Promotion};
use crate::state::{Tick, VariableId};

pub const LOG_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPolicy {
    /// Fraction of eligible records kept, in `(0, 1]`.
    pub rate: f64,
    /// Drop discovery paths from records. Codes and uncertainty status are kept.
    #[serde(default)]
    pub compress_discovery: bool,
}

impl SamplingPolicy {
    pub fn new(rate: f64, compress_discovery: bool) -> Result<Self, AuditError> {
        if !(rate > 0.0 && rate <= 1.0) {
            return Err(AuditError::BadRate(rate));
        }
        Ok(Self { rate, compress_discovery })
    }

    /// Keep every `every()`-th eligible record.
    pub fn every(&self) -> u64 {
        (1.0 / self.rate - 1e-9).ceil().max(1.0) as u64
    }
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        Self {
            rate: 1.0,
            compress_discovery: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("sampling rate {0} outside (0, 1]")]
    BadRate(f64),
    #[error("audit sink: {0}")]
    Io(#[from] std::io::Error),
    #[error("record {line}: {msg}")]
    Corrupt { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyEntry {
    pub u: Option<f64>,
    pub observed: bool,
    pub resolved: bool,
}

/// One execution attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditArtifact {
    pub tick: Tick,
    pub action_id: String,
    pub action_class: String,
    pub scope: Option<String>,
    pub prior_candidates: Vec<VariableId>,
    pub required_set: Vec<VariableId>,
    pub discovery_path: Option<Vec<DiscoveryStep>>,
    #[serde(default)]
    pub discovery_compressed: bool,
    pub promotions: Vec<Promotion>,
    pub uncertainty_status: BTreeMap<VariableId, UncertaintyEntry>,
    pub exec_state: ExecState,
    pub code: Option<DecisionCode>,
    pub rationale: Vec<Reason>,
    pub drift: Vec<VariableId>,
    pub recovery_attempt: Option<u32>,
    pub narrowed_to: Option<String>,
}

impl AuditArtifact {
    pub fn compressed(mut self) -> Self {
        self.discovery_path = None;
        self.discovery_compressed = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AuditEvent {
    LogOpened { sample_rate: f64, compress_discovery: bool },
    Escalated { tick: Tick, action_id: String, attempts: u32, last_code: Option<DecisionCode> },
    RevertHook { tick: Tick, action_id: String },
    AugmentationRefused { tick: Tick, action_id: String, reason: String },
    UnknownActionClass { tick: Tick, action_id: String, action_class: String },
    UnknownScope { tick: Tick, action_id: String, scope: String },
}

pub trait AuditSink: Send {
    fn append(&mut self, line: &str) -> std::io::Result<()>;
}

/// In-memory sink; clones share the same buffer.
#[derive(Debug, Clone, Default)]
pub struct MemorySink {
    lines: Arc<Mutex<Vec<String>>>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn lines(&self) -> Vec<String> {
        self.lines.lock().expect("sink poisoned").clone()
    }

    pub fn text(&self) -> String {
        let mut out = String::new();
        for l in self.lines() {
            out.push_str(&l);
            out.push('\n');
        }
        out
    }
}

impl AuditSink for MemorySink {
    fn append(&mut self, line: &str) -> std::io::Result<()> {
        self.lines.lock().expect("sink poisoned").push(line.to_string());
        Ok(())
    }
}

/// Appends to a file; never truncates.
pub struct JsonlFileSink {
    file: File,
}

impl JsonlFileSink {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { file })
    }
}

impl AuditSink for JsonlFileSink {
    fn append(&mut self, line: &str) -> std::io::Result<()> {
        self.file.write_all(line.as_bytes())?;
        self.file.write_all(b"\n")?;
        self.file.flush()
    }
}

/// Discards everything.
pub struct NullSink;

impl AuditSink for NullSink {
    fn append(&mut self, _line: &str) -> std::io::Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordOutcome {
    Recorded,
    SampledOut,
    /// The sink failed. The decision stands.
    Degraded(String),
}

/// Serialized writer with deterministic counter-based sampling.
pub struct Auditor {
    policy: SamplingPolicy,
    sink: Box<dyn AuditSink>,
    eligible_seen: u64,
    last_state: HashMap<String, ExecState>,
    degraded: bool,
}

impl Auditor {
    /// Writes a `log_opened` header recording the sampling policy.
    pub fn new(policy: SamplingPolicy, sink: Box<dyn AuditSink>) -> Self {
        let mut a = Self {
            policy,
            sink,
            eligible_seen: 0,
            last_state: HashMap::new(),
            degraded: false,
        };
        let header = AuditEvent::LogOpened {
            sample_rate: a.policy.rate,
            compress_discovery: a.policy.compress_discovery,
        };
        a.event(&header);
        a
    }

    pub fn null() -> Self {
        Self::new(SamplingPolicy::default(), Box::new(NullSink))
    }

    pub fn policy(&self) -> &SamplingPolicy {
        &self.policy
    }

    pub fn is_degraded(&self) -> bool {
        self.degraded
    }

    pub fn record(&mut self, artifact: &AuditArtifact) -> RecordOutcome {
        let prev = self.last_state.insert(artifact.action_id.clone(), artifact.exec_state);
        let forced = artifact.exec_state == ExecState::Halt || prev == Some(ExecState::Halt);
        if !forced {
            let keep = self.eligible_seen.is_multiple_of(self.policy.every());
            self.eligible_seen += 1;
            if !keep {
                return RecordOutcome::SampledOut;
            }
        }
        let artifact = if self.policy.compress_discovery {
            artifact.clone().compressed()
        } else {
            artifact.clone()
        };
        let line = envelope("decision", serde_json::to_value(&artifact).expect("artifact serializes"));
        self.write(&line)
    }

    pub fn event(&mut self, event: &AuditEvent) -> RecordOutcome {
        let line = envelope("event", serde_json::to_value(event).expect("event serializes"));
        self.write(&line)
    }

    fn write(&mut self, line: &str) -> RecordOutcome {
        match self.sink.append(line) {
            Ok(()) => RecordOutcome::Recorded,
            Err(e) => {
                self.degraded = true;
                RecordOutcome::Degraded(e.to_string())
            }
        }
    }
}

fn envelope(kind: &str, body: serde_json::Value) -> String {
    let mut m = serde_json::Map::new();
    m.insert("v".into(), LOG_VERSION.into());
    m.insert("record".into(), kind.into());
    if let serde_json::Value::Object(fields) = body {
        m.extend(fields);
    }
    serde_json::to_string(&serde_json::Value::Object(m)).expect("record serializes")
}

#[derive(Debug, Clone, PartialEq)]
pub enum LogRecord {
    Decision(Box<AuditArtifact>),
    Event(AuditEvent),
}

/// Parses one log line.
pub fn parse_record(line: &str) -> Result<LogRecord, String> {
    #[derive(Deserialize)]
    struct Header {
        v: u64,
        record: String,
    }
    let header: Header = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if header.v != LOG_VERSION {
        return Err(format!("unsupported version {}", header.v));
    }
    match header.record.as_str() {
        "decision" => serde_json::from_str::<AuditArtifact>(line)
            .map(|a| LogRecord::Decision(Box::new(a)))
            .map_err(|e| e.to_string()),
        "event" => {
            let mut value: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
            if let Some(m) = value.as_object_mut() {
                m.remove("v");
                m.remove("record");
            }
            serde_json::from_value::<AuditEvent>(value).map_err(|e| e.to_string())
                .map(LogRecord::Event)
        }
        other => Err(format!("unknown record kind {other:?}")),
    }
}

/// Parses a whole log. Blank lines are skipped; line numbers are 1-based.
pub fn parse_log(text: &str) -> Result<Vec<(usize, LogRecord)>, AuditError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = parse_record(line).map_err(|msg| AuditError::Corrupt { line: i + 1, msg })?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Safety,
    Lineage,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub line: usize,
    pub kind: ViolationKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub safety_ok: bool,
    pub lineage_ok: bool,
    pub violations: Vec<Violation>,
    pub records: usize,
    pub decisions: usize,
    pub executes: usize,
    pub denies: usize,
    pub halts: usize,
    pub escalations: usize,
    pub sample_rate: Option<f64>,
    pub sampled: bool,
}

/// Checks that every EXECUTE record is backed by fully resolved authority and
/// that per-action lineage is well formed.
pub fn verify_log(text: &str) -> Result<VerificationReport, AuditError> {
    let records = parse_log(text)?;
    let mut report = VerificationReport {
        safety_ok: true,
        lineage_ok: true,
        violations: Vec::new(),
        records: records.len(),
        decisions: 0,
        executes: 0,
        denies: 0,
        halts: 0,
        escalations: 0,
        sample_rate: None,
        sampled: false,
    };
    #[derive(PartialEq)]
    enum Lineage {
        Open(ExecState),
        Terminal(&'static str),
    }
    let mut actions: HashMap<String, Lineage> = HashMap::new();
    let mut last_tick: Option<Tick> = None;
    let mut check_tick = |tick: Tick, line: usize, violations: &mut Vec<Violation>| {
        if let Some(prev) = last_tick {
            if tick < prev {
                violations.push(Violation {
                    line,
                    kind: ViolationKind::Lineage,
                    detail: format!("tick {tick} precedes earlier tick {prev}"),
                });
            }
        }
        last_tick = Some(tick);
    };

    for (line, rec) in &records {
        let line = *line;
        match rec {
            LogRecord::Event(AuditEvent::LogOpened { sample_rate, .. }) => {
                report.sample_rate = Some(*sample_rate);
                report.sampled = *sample_rate < 1.0;
            }
            LogRecord::Event(AuditEvent::Escalated { tick, action_id, .. }) => {
                report.escalations += 1;
                check_tick(*tick, line, &mut report.violations);
                match actions.get(action_id) {
                    Some(Lineage::Open(ExecState::Halt)) => {}
                    _ => report.violations.push(Violation {
                        line,
                        kind: ViolationKind::Lineage,
                        detail: format!("escalation of {action_id} without a preceding HALT"),
                    }),
                }
                actions.insert(action_id.clone(), Lineage::Terminal("escalated"));
            }
            LogRecord::Event(
                AuditEvent::RevertHook { tick, .. }
                | AuditEvent::AugmentationRefused { tick, .. }
                | AuditEvent::UnknownActionClass { tick, .. }
                | AuditEvent::UnknownScope { tick, .. },
            ) => check_tick(*tick, line, &mut report.violations),
            LogRecord::Decision(a) => {
                report.decisions += 1;
                check_tick(a.tick, line, &mut report.violations);
                match a.exec_state {
                    ExecState::Execute => {
                        report.executes += 1;
                        for detail in execute_safety_problems(a) {
                            report.violations.push(Violation {
                                line,
                                kind: ViolationKind::Safety,
                                detail,
                            });
                        }
                    }
                    ExecState::Deny => report.denies += 1,
                    ExecState::Halt => report.halts += 1,
                }
                if let Some(Lineage::Terminal(how)) = actions.get(&a.action_id) {
                    report.violations.push(Violation {
                        line,
                        kind: ViolationKind::Lineage,
                        detail: format!("decision for {} after it was already {how}", a.action_id),
                    });
                }
                let next = match a.exec_state {
                    ExecState::Execute => Lineage::Terminal("executed"),
                    ExecState::Deny => Lineage::Terminal("denied"),
                    ExecState::Halt => Lineage::Open(ExecState::Halt),
                };
                actions.insert(a.action_id.clone(), next);
            }
        }
    }
    report.safety_ok = !report.violations.iter().any(|v| v.kind == ViolationKind::Safety);
    report.lineage_ok = !report.violations.iter().any(|v| v.kind == ViolationKind::Lineage);
    Ok(report)
}

fn execute_safety_problems(a: &AuditArtifact) -> Vec<String> {
    let mut out = Vec::new();
    if !a.rationale.is_empty() {
        out.push(format!("EXECUTE of {} carries {} rationale entries", a.action_id, a.rationale.len()));
    }
    for (var, entry) in &a.uncertainty_status {
        if !entry.resolved {
            out.push(format!("EXECUTE of {} with unresolved authority-defining {var}", a.action_id));
        }
    }
    for var in &a.required_set {
        if !a.uncertainty_status.contains_key(var) {
            out.push(format!("EXECUTE of {} without uncertainty status for {var}", a.action_id));
        }
    }
    match a.code {
        Some(DecisionCode::AdmitAuthorityConstructible | DecisionCode::ContinueBoundedNonAuthorityDrift) => {}
        other => out.push(format!("EXECUTE of {} with code {other:?}", a.action_id)),
    }
    out
}

/// Human-readable account of one decision.
pub fn render_narrative(a: &AuditArtifact) -> String {
    let mut s = String::new();
    let code = a.code.map(|c| c.as_str()).unwrap_or("-");
    let _ = writeln!(s, "tick {}: action {} (class {})", a.tick, a.action_id, a.action_class);
    if let Some(scope) = &a.scope {
        let _ = writeln!(s, "  scope: {scope}");
    }
    let _ = writeln!(s, "  decision: {} {}", a.exec_state.as_str(), code);
    if let Some(n) = a.recovery_attempt {
        let _ = writeln!(s, "  recovery attempt: {n}");
    }
    if !a.prior_candidates.is_empty() {
        let names: Vec<_> = a.prior_candidates.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "  prior candidates (proposals only): {}", names.join(", "));
    }
    let _ = writeln!(s, "  authority-defining variables:");
    for p in &a.promotions {
        let status = match a.uncertainty_status.get(&p.var) {
            Some(UncertaintyEntry { observed: false, .. }) => "unobserved".to_string(),
            Some(UncertaintyEntry { u: Some(u), resolved, .. }) => {
                format!("u={u} {}", if *resolved { "resolved" } else { "unresolved" })
            }
            _ => "no status".to_string(),
        };
        let _ = writeln!(s, "    {}: {} [{}]", p.var, p.reason, status);
    }
    if a.discovery_compressed {
        let _ = writeln!(s, "  discovery path: compressed");
    } else if let Some(path) = &a.discovery_path {
        let _ = writeln!(s, "  discovery path: {} steps", path.len());
    }
    if !a.drift.is_empty() {
        let names: Vec<_> = a.drift.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "  drift since last attestation: {}", names.join(", "));
    }
    if a.rationale.is_empty() {
        let _ = writeln!(s, "  rationale: none");
    } else {
        let _ = writeln!(s, "  rationale:");
        for r in &a.rationale {
            let line = match r {
                Reason::UnobservedDependency { var } => format!("{var} is not observable"),
                Reason::UncertainDependency { var, u } => format!("{var} uncertainty {u} exceeds the threshold"),
                Reason::OpenGuard { var } => format!("guard {var} unresolved; dependencies behind it unknown"),
                Reason::InconsistentDependency { var, detail } => format!("{var} inconsistent ({detail})"),
                Reason::ConstraintFailed { node_path, detail } => format!("constraint {detail} failed at node {node_path:?}"),
            };
            let _ = writeln!(s, "    - {line}");
        }
    }
    if let Some(n) = &a.narrowed_to {
        let _ = writeln!(s, "  proposed narrower scope: {n}");
    }
    s
}
