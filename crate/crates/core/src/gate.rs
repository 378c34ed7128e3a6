//! The execution gate: maps authority plus drift context to a ternary state
//! and decision code, audits it, and binds EXECUTE decisions to their effect.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{AuditArtifact, AuditEvent, Auditor, RecordOutcome, UncertaintyEntry};
use crate::authority::{reconstruct_authority, AuthorityOutcome, AuthorityState, Reason};
use crate::drift::{diff_observations, DriftSignal};
use crate::policy::PolicySet;
use crate::state::{is_resolved, lookup, GateConfig, StateSnapshot, Tick, VariableId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionRequest {
    pub action_id: String,
    pub action_class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope_label: Option<String>,
}

impl ActionRequest {
    pub fn new(action_id: impl Into<String>, action_class: impl Into<String>) -> Self {
        Self {
            action_id: action_id.into(),
            action_class: action_class.into(),
            scope_label: None,
        }
    }

    pub fn with_scope(mut self, scope: Option<String>) -> Self {
        self.scope_label = scope;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ExecState {
    Execute,
    Deny,
    Halt,
}

impl ExecState {
    pub fn as_str(self) -> &'static str {
        match self {
            ExecState::Execute => "EXECUTE",
            ExecState::Deny => "DENY",
            ExecState::Halt => "HALT",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DecisionCode {
    AdmitAuthorityConstructible,
    HaltAuthorityUndefinedRequiredDependency,
    HaltAuthorityUndefinedUncertainty,
    HaltMissingRequiredSignal,
    HaltReattestationRequired,
    ContinueBoundedNonAuthorityDrift,
    NarrowPrivilegeReevaluate,
}

impl DecisionCode {
    pub const ALL: [DecisionCode; 7] = [
        DecisionCode::AdmitAuthorityConstructible,
        DecisionCode::HaltAuthorityUndefinedRequiredDependency,
        DecisionCode::HaltAuthorityUndefinedUncertainty,
        DecisionCode::HaltMissingRequiredSignal,
        DecisionCode::HaltReattestationRequired,
        DecisionCode::ContinueBoundedNonAuthorityDrift,
        DecisionCode::NarrowPrivilegeReevaluate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DecisionCode::AdmitAuthorityConstructible => "ADMIT_AUTHORITY_CONSTRUCTIBLE",
            DecisionCode::HaltAuthorityUndefinedRequiredDependency => "HALT_AUTHORITY_UNDEFINED_REQUIRED_DEPENDENCY",
            DecisionCode::HaltAuthorityUndefinedUncertainty => "HALT_AUTHORITY_UNDEFINED_UNCERTAINTY",
            DecisionCode::HaltMissingRequiredSignal => "HALT_MISSING_REQUIRED_SIGNAL",
            DecisionCode::HaltReattestationRequired => "HALT_REATTESTATION_REQUIRED",
            DecisionCode::ContinueBoundedNonAuthorityDrift => "CONTINUE_BOUNDED_NON_AUTHORITY_DRIFT",
            DecisionCode::NarrowPrivilegeReevaluate => "NARROW_PRIVILEGE_REEVALUATE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GateError {
    #[error("unknown action_class {0:?}")]
    UnknownActionClass(String),
    #[error("action_class {class:?} has no scope {scope:?}")]
    UnknownScope { class: String, scope: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decision {
    pub request: ActionRequest,
    pub exec_state: ExecState,
    pub code: Option<DecisionCode>,
    pub outcome: AuthorityOutcome,
    pub artifact: AuditArtifact,
    pub narrowed_to: Option<String>,
    #[serde(skip)]
    pub snapshot: StateSnapshot,
}

impl Decision {
    pub fn tick(&self) -> Tick {
        self.snapshot.timestamp()
    }
}

/// Variables whose drift invalidates a True outcome: those the drift signal
/// marks as authority-defining plus any change inside this outcome's A_d.
pub fn authority_relevant_drift(outcome: &AuthorityOutcome, drift: &DriftSignal) -> Vec<VariableId> {
    let mut out = drift.authority_defining_changed.clone();
    for var in drift.changed.keys() {
        if outcome.resolution.authority_defining.contains(var) && !out.contains(var) {
            out.push(var.clone());
        }
    }
    out.sort();
    out
}

/// First matching rule wins; DENY has no code.
pub fn map_code(
    outcome: &AuthorityOutcome,
    drift: &DriftSignal,
    narrowing_available: bool,
) -> (ExecState, Option<DecisionCode>) {
    let narrow_or = |fallback| {
        if narrowing_available {
            DecisionCode::NarrowPrivilegeReevaluate
        } else {
            fallback
        }
    };
    match outcome.state {
        AuthorityState::True => {
            if !authority_relevant_drift(outcome, drift).is_empty() {
                (ExecState::Halt, Some(DecisionCode::HaltReattestationRequired))
            } else if !drift.is_empty() {
                (ExecState::Execute, Some(DecisionCode::ContinueBoundedNonAuthorityDrift))
            } else {
                (ExecState::Execute, Some(DecisionCode::AdmitAuthorityConstructible))
            }
        }
        AuthorityState::False => (ExecState::Deny, None),
        AuthorityState::Undefined => {
            let has = |f: fn(&Reason) -> bool| outcome.reasons.iter().any(f);
            let code = if has(|r| matches!(r, Reason::OpenGuard { .. })) {
                DecisionCode::HaltMissingRequiredSignal
            } else if has(|r| matches!(r, Reason::UncertainDependency { .. })) {
                narrow_or(DecisionCode::HaltAuthorityUndefinedUncertainty)
            } else {
                narrow_or(DecisionCode::HaltAuthorityUndefinedRequiredDependency)
            };
            (ExecState::Halt, Some(code))
        }
    }
}

/// One full reconstruction on exactly `snapshot`. Pure; does not audit.
pub fn decide(
    req: &ActionRequest,
    snapshot: &StateSnapshot,
    policies: &PolicySet,
    drift: &DriftSignal,
    cfg: &GateConfig,
    recovery_attempt: Option<u32>,
) -> Result<Decision, GateError> {
    let spec = policies
        .spec(&req.action_class)
        .ok_or_else(|| GateError::UnknownActionClass(req.action_class.clone()))?;
    let scope = req.scope_label.as_deref();
    let tree = spec.tree_for(scope).ok_or_else(|| GateError::UnknownScope {
        class: req.action_class.clone(),
        scope: scope.unwrap_or_default().to_string(),
    })?;
    let prior = policies.prior(&req.action_class);
    let outcome = reconstruct_authority(tree, snapshot, &prior, &policies.consistency_rules, cfg.theta_auth);
    let next = spec.next_narrower(scope);
    let (exec_state, code) = map_code(&outcome, drift, next.is_some());
    let narrowed_to = match code {
        Some(DecisionCode::NarrowPrivilegeReevaluate) => next.map(str::to_string),
        _ => None,
    };

    let uncertainty_status = outcome
        .resolution
        .authority_defining
        .iter()
        .map(|v| {
            let status = lookup(snapshot, v);
            let entry = UncertaintyEntry {
                u: status.observation().map(|o| o.u),
                observed: status.observation().is_some(),
                resolved: is_resolved(&status, cfg.theta_auth),
            };
            (v.clone(), entry)
        })
        .collect();
    let artifact = AuditArtifact {
        tick: snapshot.timestamp(),
        action_id: req.action_id.clone(),
        action_class: req.action_class.clone(),
        scope: req.scope_label.clone(),
        prior_candidates: prior.candidates.clone(),
        required_set: outcome.resolution.required.clone(),
        discovery_path: Some(outcome.resolution.discovery.clone()),
        discovery_compressed: false,
        promotions: outcome.resolution.promotions.clone(),
        uncertainty_status,
        exec_state,
        code,
        rationale: outcome.reasons.clone(),
        drift: drift.changed.keys().cloned().collect(),
        recovery_attempt,
        narrowed_to: narrowed_to.clone(),
    };
    Ok(Decision {
        request: req.clone(),
        exec_state,
        code,
        outcome,
        artifact,
        narrowed_to,
        snapshot: snapshot.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decided {
    pub decision: Decision,
    pub audit: RecordOutcome,
}

/// Gate instance: configuration plus the serialized audit writer.
pub struct Gate {
    cfg: GateConfig,
    auditor: Mutex<Auditor>,
}

impl Gate {
    pub fn new(cfg: GateConfig, auditor: Auditor) -> Self {
        Self {
            cfg,
            auditor: Mutex::new(auditor),
        }
    }

    pub fn without_audit(cfg: GateConfig) -> Self {
        Self::new(cfg, Auditor::null())
    }

    pub fn config(&self) -> &GateConfig {
        &self.cfg
    }

    pub fn audit_degraded(&self) -> bool {
        self.auditor.lock().expect("auditor poisoned").is_degraded()
    }

    /// Decides and writes the audit record before returning.
    pub fn decide(
        &self,
        req: &ActionRequest,
        snapshot: &StateSnapshot,
        policies: &PolicySet,
        drift: &DriftSignal,
        recovery_attempt: Option<u32>,
    ) -> Result<Decided, GateError> {
        match decide(req, snapshot, policies, drift, &self.cfg, recovery_attempt) {
            Ok(decision) => {
                let audit = self.auditor.lock().expect("auditor poisoned").record(&decision.artifact);
                Ok(Decided { decision, audit })
            }
            Err(err) => {
                let event = match &err {
                    GateError::UnknownActionClass(class) => AuditEvent::UnknownActionClass {
                        tick: snapshot.timestamp(),
                        action_id: req.action_id.clone(),
                        action_class: class.clone(),
                    },
                    GateError::UnknownScope { scope, .. } => AuditEvent::UnknownScope {
                        tick: snapshot.timestamp(),
                        action_id: req.action_id.clone(),
                        scope: scope.clone(),
                    },
                };
                self.event(&event);
                Err(err)
            }
        }
    }

    pub fn event(&self, event: &AuditEvent) -> RecordOutcome {
        self.auditor.lock().expect("auditor poisoned").event(event)
    }
}

/// Proof that an EXECUTE decision was bound to the snapshot current at
/// effect time. Only this module can construct one.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionPermit {
    action_id: String,
    tick: Tick,
    code: DecisionCode,
}

impl ExecutionPermit {
    pub fn action_id(&self) -> &str {
        &self.action_id
    }

    pub fn tick(&self) -> Tick {
        self.tick
    }

    pub fn code(&self) -> DecisionCode {
        self.code
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BindRefusal {
    #[error("decision is {0:?}, not EXECUTE")]
    NotExecutable(ExecState),
    #[error("decision made at tick {decided}, effect attempted at tick {current}")]
    Stale { decided: Tick, current: Tick },
    #[error("authority-defining variables changed before the effect: {0:?}")]
    AuthorityDrift(Vec<VariableId>),
}

/// Binds an EXECUTE decision to its effect. The current snapshot must be the
/// decision's tick, and any change to an authority-defining variable since
/// the decision forces re-entry instead of execution.
pub fn bind_effect(decision: &Decision, current: &StateSnapshot) -> Result<ExecutionPermit, BindRefusal> {
    if decision.exec_state != ExecState::Execute {
        return Err(BindRefusal::NotExecutable(decision.exec_state));
    }
    if decision.snapshot.timestamp() != current.timestamp() {
        return Err(BindRefusal::Stale {
            decided: decision.snapshot.timestamp(),
            current: current.timestamp(),
        });
    }
    let changed = diff_observations(&decision.snapshot, current);
    let signal = DriftSignal::classify(changed, Some(&decision.outcome.resolution.authority_defining));
    if let (ExecState::Halt, _) = map_code(&decision.outcome, &signal, false) {
        return Err(BindRefusal::AuthorityDrift(signal.authority_defining_changed));
    }
    Ok(ExecutionPermit {
        action_id: decision.request.action_id.clone(),
        tick: current.timestamp(),
        code: decision.code.expect("EXECUTE always carries a code"),
    })
}
