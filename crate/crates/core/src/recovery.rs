//! Recovery from HALT: extract what is unresolved, ask the environment for
//! more observations, and rebuild authority from a fresh snapshot.

use serde::Serialize;
use thiserror::Error;

use crate::audit::AuditEvent;
use crate::authority::{AuthorityOutcome, AuthorityState, Reason};
use crate::drift::RecoveryTrigger;
use crate::enforce::{EnforceError, Environment};
use crate::gate::{ActionRequest, Decided, DecisionCode, ExecState, Gate};
use crate::drift::DriftSignal;
use crate::policy::PolicySet;
use crate::state::{Tick, VariableId};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UnresolvedKind {
    Unobserved,
    Uncertain { u: f64 },
    OpenGuard,
    Inconsistent { detail: String },
    /// Changed since the last attestation; needs re-attestation.
    Drift,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HaltContext {
    pub action: ActionRequest,
    pub unresolved: Vec<(VariableId, UnresolvedKind)>,
    pub halt_code: DecisionCode,
    pub halt_tick: Tick,
    pub attempts: u32,
}

impl HaltContext {
    pub fn unresolved_vars(&self) -> Vec<VariableId> {
        self.unresolved.iter().map(|(v, _)| v.clone()).collect()
    }

    /// Context for a fresh HALT decision. Narrowing moves the action to the
    /// proposed scope for the next cycle.
    pub fn from_halt(decided: &Decided, attempts: u32) -> Self {
        let d = &decided.decision;
        let unresolved = match d.outcome.state {
            AuthorityState::Undefined => extract_unresolved(&d.outcome).unwrap_or_default(),
            _ => d
                .artifact
                .drift
                .iter()
                .filter(|v| d.outcome.resolution.authority_defining.contains(v))
                .map(|v| (v.clone(), UnresolvedKind::Drift))
                .collect(),
        };
        let action = match &d.narrowed_to {
            Some(scope) => d.request.clone().with_scope(Some(scope.clone())),
            None => d.request.clone(),
        };
        Self {
            action,
            unresolved,
            halt_code: d.code.expect("HALT always carries a code"),
            halt_tick: d.tick(),
            attempts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AugmentationRequest {
    pub action_id: String,
    pub focus: Vec<VariableId>,
    pub tick: Tick,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RecoveryOutcome {
    /// Authority is defined again; the decision is EXECUTE or DENY.
    Resumed(Box<Decided>),
    /// `decided` is absent when augmentation was refused and no decision ran.
    StillHalted {
        context: HaltContext,
        decided: Option<Box<Decided>>,
    },
    Escalated(HaltContext),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unresolved variables requested from a {0:?} outcome")]
pub struct ContractViolation(pub AuthorityState);

/// The variables responsible for an undefined outcome, one entry each.
pub fn extract_unresolved(outcome: &AuthorityOutcome) -> Result<Vec<(VariableId, UnresolvedKind)>, ContractViolation> {
    if outcome.state != AuthorityState::Undefined {
        return Err(ContractViolation(outcome.state));
    }
    let mut out: Vec<(VariableId, UnresolvedKind)> = Vec::new();
    for r in &outcome.reasons {
        let entry = match r {
            Reason::UnobservedDependency { var } => (var.clone(), UnresolvedKind::Unobserved),
            Reason::UncertainDependency { var, u } => (var.clone(), UnresolvedKind::Uncertain { u: *u }),
            Reason::OpenGuard { var } => (var.clone(), UnresolvedKind::OpenGuard),
            Reason::InconsistentDependency { var, detail } => {
                (var.clone(), UnresolvedKind::Inconsistent { detail: detail.clone() })
            }
            Reason::ConstraintFailed { .. } => continue,
        };
        if !out.iter().any(|(v, _)| *v == entry.0) {
            out.push(entry);
        }
    }
    Ok(out)
}

/// One recovery attempt. Must run on a tick after `ctx.halt_tick`.
pub fn recovery_step(
    ctx: HaltContext,
    env: &mut dyn Environment,
    gate: &Gate,
    policies: &PolicySet,
    trigger: Option<&RecoveryTrigger>,
) -> Result<RecoveryOutcome, EnforceError> {
    let now = env.now();
    if ctx.attempts >= gate.config().max_recovery_attempts {
        gate.event(&AuditEvent::Escalated {
            tick: now,
            action_id: ctx.action.action_id.clone(),
            attempts: ctx.attempts,
            last_code: Some(ctx.halt_code),
        });
        return Ok(RecoveryOutcome::Escalated(ctx));
    }
    if now <= ctx.halt_tick {
        return Err(EnforceError::NotFresh { halt_tick: ctx.halt_tick, now });
    }

    if ctx.halt_code != DecisionCode::HaltReattestationRequired && !ctx.unresolved.is_empty() {
        let own = ctx.unresolved_vars();
        let mut focus: Vec<VariableId> = match trigger {
            Some(t) => own.iter().filter(|v| t.focus.contains(v)).cloned().collect(),
            None => Vec::new(),
        };
        if focus.is_empty() {
            focus = own;
        }
        let request = AugmentationRequest {
            action_id: ctx.action.action_id.clone(),
            focus,
            tick: now,
        };
        if let Err(reason) = env.augment(&request) {
            env.revert_to_last_atomic_state();
            gate.event(&AuditEvent::AugmentationRefused {
                tick: now,
                action_id: ctx.action.action_id.clone(),
                reason,
            });
            gate.event(&AuditEvent::RevertHook {
                tick: now,
                action_id: ctx.action.action_id.clone(),
            });
            return Ok(RecoveryOutcome::StillHalted {
                context: HaltContext {
                    halt_tick: now,
                    attempts: ctx.attempts + 1,
                    ..ctx
                },
                decided: None,
            });
        }
    }

    let snapshot = env.observe();
    if snapshot.timestamp() <= ctx.halt_tick {
        return Err(EnforceError::NotFresh { halt_tick: ctx.halt_tick, now: snapshot.timestamp() });
    }
    // The fresh reconstruction is itself the re-attestation, so no drift
    // anchor carries over from the halted cycle.
    let attempt = ctx.attempts + 1;
    let decided = gate.decide(&ctx.action, &snapshot, policies, &DriftSignal::none(), Some(attempt))?;
    match decided.decision.exec_state {
        ExecState::Execute | ExecState::Deny => Ok(RecoveryOutcome::Resumed(Box::new(decided))),
        ExecState::Halt => Ok(RecoveryOutcome::StillHalted {
            context: HaltContext::from_halt(&decided, attempt),
            decided: Some(Box::new(decided)),
        }),
    }
}
