//! The per-action enforcement loop: admission, one gate cycle per tick,
//! effect binding, and recovery while halted.

use serde::Serialize;
use thiserror::Error;

use crate::authority::{reconstruct_authority, AuthorityState};
use crate::drift::{diff_observations, DriftSignal, GatePhase, RecoveryTrigger};
use crate::gate::{bind_effect, ActionRequest, BindRefusal, Decided, DecisionCode, ExecState, ExecutionPermit, Gate, GateError};
use crate::policy::PolicySet;
use crate::recovery::{recovery_step, AugmentationRequest, HaltContext, RecoveryOutcome, UnresolvedKind};
use crate::state::{GateConfig, StateSnapshot, Tick, VariableId};

/// What the gate needs from the world. Within one tick the environment must
/// not change except through `augment` requests it chooses to honour.
pub trait Environment {
    fn now(&self) -> Tick;
    /// Observable state at the current tick.
    fn observe(&mut self) -> StateSnapshot;
    /// Requests additional observations. `Err` means refused.
    fn augment(&mut self, request: &AugmentationRequest) -> Result<(), String>;
    fn apply_effect(&mut self, permit: ExecutionPermit) -> Result<(), String>;
    /// Moves to the next tick. `false` when no more ticks are available.
    fn advance(&mut self) -> bool;
    /// Hook for restoring the last consistent state. No-op by default.
    fn revert_to_last_atomic_state(&mut self) {}
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnforceError {
    #[error(transparent)]
    Gate(#[from] GateError),
    #[error("recovery needs a snapshot after tick {halt_tick}, got {now}")]
    NotFresh { halt_tick: Tick, now: Tick },
    #[error("effect rejected by environment: {0}")]
    Effect(String),
    #[error("environment ran out of ticks while {0} was still halted")]
    HorizonExhausted(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "terminal", rename_all = "snake_case")]
pub enum TerminalOutcome {
    Executed { tick: Tick, code: DecisionCode },
    Denied { tick: Tick },
    Escalated { tick: Tick, context: HaltContext },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub snapshot: StateSnapshot,
    pub authority_defining: Vec<VariableId>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunPhase {
    Pending,
    Halted(HaltContext),
    Done(TerminalOutcome),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Decision,
    Recovery,
    Escalation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub tick: Tick,
    pub action_id: String,
    pub kind: StepKind,
    pub decided: Option<Decided>,
    pub effect_applied: bool,
    pub bind_refusal: Option<BindRefusal>,
}

/// One action's lifecycle.
#[derive(Debug, Clone)]
pub struct ActionRun {
    request: ActionRequest,
    execute_at: Tick,
    phase: RunPhase,
    anchor: Option<Anchor>,
    last_authority_set: Option<Vec<VariableId>>,
    pending_trigger: Option<RecoveryTrigger>,
    cycles: u32,
}

impl ActionRun {
    pub fn new(request: ActionRequest, execute_at: Tick) -> Self {
        Self {
            request,
            execute_at,
            phase: RunPhase::Pending,
            anchor: None,
            last_authority_set: None,
            pending_trigger: None,
            cycles: 0,
        }
    }

    pub fn request(&self) -> &ActionRequest {
        &self.request
    }

    pub fn execute_at(&self) -> Tick {
        self.execute_at
    }

    pub fn phase(&self) -> &RunPhase {
        &self.phase
    }

    pub fn anchor(&self) -> Option<&Anchor> {
        self.anchor.as_ref()
    }

    /// Number of gate cycles run so far.
    pub fn cycles(&self) -> u32 {
        self.cycles
    }

    pub fn terminal(&self) -> Option<&TerminalOutcome> {
        match &self.phase {
            RunPhase::Done(t) => Some(t),
            _ => None,
        }
    }

    pub fn is_pending(&self) -> bool {
        matches!(self.phase, RunPhase::Pending)
    }

    /// Variables whose change counts as authority drift for this action, or
    /// `None` before any resolution.
    pub fn authority_set(&self) -> Option<&[VariableId]> {
        self.anchor
            .as_ref()
            .map(|a| a.authority_defining.as_slice())
            .or(self.last_authority_set.as_deref())
    }

    pub fn gate_phase(&self) -> GatePhase {
        match &self.phase {
            RunPhase::Halted(ctx) => GatePhase::Halted {
                unresolved: ctx.unresolved_vars(),
            },
            _ => GatePhase::Running,
        }
    }

    /// Attests authority for a pending action without a gate decision. A
    /// True outcome becomes the drift anchor; anything else clears it.
    pub fn attest(&mut self, snapshot: &StateSnapshot, policies: &PolicySet, cfg: &GateConfig) -> Option<AuthorityState> {
        if !self.is_pending() {
            return None;
        }
        let spec = policies.spec(&self.request.action_class)?;
        let tree = spec.tree_for(self.request.scope_label.as_deref())?;
        let prior = policies.prior(&self.request.action_class);
        let outcome = reconstruct_authority(tree, snapshot, &prior, &policies.consistency_rules, cfg.theta_auth);
        let ad = outcome.resolution.authority_defining.clone();
        self.last_authority_set = Some(ad.clone());
        self.anchor = (outcome.state == AuthorityState::True).then(|| Anchor {
            snapshot: snapshot.clone(),
            authority_defining: ad,
        });
        Some(outcome.state)
    }

    /// Pending actions re-attest on a trigger; halted ones keep it to focus
    /// their next augmentation request.
    pub fn on_trigger(&mut self, trigger: RecoveryTrigger, snapshot: &StateSnapshot, policies: &PolicySet, cfg: &GateConfig) {
        match self.phase {
            RunPhase::Pending if snapshot.timestamp() < self.execute_at => {
                self.attest(snapshot, policies, cfg);
            }
            RunPhase::Halted(_) => self.pending_trigger = Some(trigger),
            _ => {}
        }
    }

    /// Runs this tick's gate cycle. Does nothing before `execute_at` or once done.
    pub fn step(&mut self, env: &mut dyn Environment, gate: &Gate, policies: &PolicySet) -> Result<Option<StepReport>, EnforceError> {
        let tick = env.now();
        if tick < self.execute_at {
            return Ok(None);
        }
        let phase = std::mem::replace(&mut self.phase, RunPhase::Pending);
        match phase {
            RunPhase::Done(t) => {
                self.phase = RunPhase::Done(t);
                Ok(None)
            }
            RunPhase::Pending => {
                self.cycles += 1;
                let snapshot = env.observe();
                let drift = match &self.anchor {
                    Some(a) => DriftSignal::classify(diff_observations(&a.snapshot, &snapshot), Some(&a.authority_defining)),
                    None => DriftSignal::none(),
                };
                let decided = match gate.decide(&self.request, &snapshot, policies, &drift, None) {
                    Ok(d) => d,
                    Err(e) => {
                        self.phase = RunPhase::Pending;
                        return Err(e.into());
                    }
                };
                self.anchor = None;
                self.conclude(decided, 0, StepKind::Decision, env)
            }
            RunPhase::Halted(ctx) => {
                let attempts = ctx.attempts;
                let trigger = self.pending_trigger.take();
                let outcome = match recovery_step(ctx.clone(), env, gate, policies, trigger.as_ref()) {
                    Ok(o) => o,
                    Err(e) => {
                        self.phase = RunPhase::Halted(ctx);
                        return Err(e);
                    }
                };
                match outcome {
                    RecoveryOutcome::Escalated(ctx) => {
                        self.phase = RunPhase::Done(TerminalOutcome::Escalated { tick, context: ctx });
                        Ok(Some(StepReport {
                            tick,
                            action_id: self.request.action_id.clone(),
                            kind: StepKind::Escalation,
                            decided: None,
                            effect_applied: false,
                            bind_refusal: None,
                        }))
                    }
                    RecoveryOutcome::StillHalted { context, decided } => {
                        self.cycles += 1;
                        if let Some(d) = &decided {
                            self.last_authority_set = Some(d.decision.outcome.resolution.authority_defining.clone());
                        }
                        self.phase = RunPhase::Halted(context);
                        Ok(Some(StepReport {
                            tick,
                            action_id: self.request.action_id.clone(),
                            kind: StepKind::Recovery,
                            decided: decided.map(|d| *d),
                            effect_applied: false,
                            bind_refusal: None,
                        }))
                    }
                    RecoveryOutcome::Resumed(decided) => {
                        self.cycles += 1;
                        self.conclude(*decided, attempts + 1, StepKind::Recovery, env)
                    }
                }
            }
        }
    }

    /// Turns a decision into the next phase, applying the effect for EXECUTE
    /// within the same tick.
    fn conclude(&mut self, decided: Decided, attempts: u32, kind: StepKind, env: &mut dyn Environment) -> Result<Option<StepReport>, EnforceError> {
        let tick = decided.decision.tick();
        let mut report = StepReport {
            tick,
            action_id: self.request.action_id.clone(),
            kind,
            decided: None,
            effect_applied: false,
            bind_refusal: None,
        };
        self.last_authority_set = Some(decided.decision.outcome.resolution.authority_defining.clone());
        match decided.decision.exec_state {
            ExecState::Execute => {
                let current = env.observe();
                match bind_effect(&decided.decision, &current) {
                    Ok(permit) => {
                        let code = permit.code();
                        env.apply_effect(permit).map_err(EnforceError::Effect)?;
                        report.effect_applied = true;
                        self.phase = RunPhase::Done(TerminalOutcome::Executed { tick, code });
                    }
                    Err(refusal) => {
                        let unresolved = match &refusal {
                            BindRefusal::AuthorityDrift(vars) => vars.iter().map(|v| (v.clone(), UnresolvedKind::Drift)).collect(),
                            _ => Vec::new(),
                        };
                        self.phase = RunPhase::Halted(HaltContext {
                            action: decided.decision.request.clone(),
                            unresolved,
                            halt_code: DecisionCode::HaltReattestationRequired,
                            halt_tick: tick,
                            attempts,
                        });
                        report.bind_refusal = Some(refusal);
                    }
                }
            }
            ExecState::Deny => self.phase = RunPhase::Done(TerminalOutcome::Denied { tick }),
            ExecState::Halt => self.phase = RunPhase::Halted(HaltContext::from_halt(&decided, attempts)),
        }
        report.decided = Some(decided);
        Ok(Some(report))
    }
}

/// Drives one action from the environment's current tick to a terminal outcome.
pub fn enforce(req: ActionRequest, env: &mut dyn Environment, gate: &Gate, policies: &PolicySet) -> Result<TerminalOutcome, EnforceError> {
    let mut run = ActionRun::new(req, env.now());
    loop {
        run.step(env, gate, policies)?;
        if let Some(t) = run.terminal() {
            return Ok(t.clone());
        }
        if !env.advance() {
            return Err(EnforceError::HorizonExhausted(run.request.action_id.clone()));
        }
    }
}
