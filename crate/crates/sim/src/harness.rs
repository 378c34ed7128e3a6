//! Discrete-tick scenario runner.
//!
//! Each tick: advance, apply scripted events, observe, compute drift against
//! the previous tick, emit triggers, then run one gate cycle per live action
//! in submission order. The snapshot-baseline mode replaces the gate with a
//! cache of the first True outcome per action.

use std::collections::BTreeMap;

use rgate_core::audit::{AuditSink, Auditor, NullSink, SamplingPolicy};
use rgate_core::authority::{reconstruct_authority, AuthorityState};
use rgate_core::drift::{diff_observations, emit_trigger, DriftSignal, TriggerCause};
use rgate_core::enforce::{ActionRun, EnforceError, Environment, RunPhase, StepKind, TerminalOutcome};
use rgate_core::gate::{ActionRequest, DecisionCode, ExecState, Gate};
use rgate_core::resolver::ResolutionResult;
use rgate_core::state::{GateConfig, StateSnapshot, Tick, VariableId};
use serde::Serialize;
use thiserror::Error;

use crate::env::{AppliedEffect, SimEnvironment};
use crate::oracle::{oracle_decide, BudgetExceeded, Verdict};
use crate::scenario::{Event, Scenario, Submit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateMode {
    Reconstructive,
    SnapshotBaseline,
}

impl std::str::FromStr for GateMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reconstructive" => Ok(Self::Reconstructive),
            "snapshot-baseline" => Ok(Self::SnapshotBaseline),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub mode: GateMode,
    /// Drift-monitor trigger emission. Safety must not depend on it.
    pub triggers: bool,
    pub sampling: SamplingPolicy,
    pub max_recovery_attempts: Option<u32>,
    pub theta_auth: Option<f64>,
    /// Keep every resolution the gate produced, for property checks.
    pub keep_resolutions: bool,
}

impl RunOptions {
    pub fn new(mode: GateMode) -> Self {
        Self {
            mode,
            triggers: true,
            sampling: SamplingPolicy::default(),
            max_recovery_attempts: None,
            theta_auth: None,
            keep_resolutions: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Enforce(#[from] EnforceError),
    #[error("oracle budget exceeded: {0} variables")]
    Oracle(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl From<BudgetExceeded> for HarnessError {
    fn from(e: BudgetExceeded) -> Self {
        HarnessError::Oracle(e.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TriggerRecord {
    pub action_id: String,
    pub cause: TriggerCause,
    pub focus: Vec<VariableId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Decision,
    Recovery,
    Escalation,
    /// Snapshot-baseline execution from a cached outcome.
    CachedExecute,
    /// Snapshot-baseline denial on a fresh False with nothing cached.
    BaselineDeny,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    pub action_id: String,
    pub kind: EntryKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exec_state: Option<ExecState>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub code: Option<DecisionCode>,
    pub effect_applied: bool,
    /// Oracle verdict on the state at effect time; only for applied effects.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fresh_verdict: Option<Verdict>,
    pub stale_execution: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TickRecord {
    pub tick: Tick,
    pub digest: String,
    pub drift: Vec<VariableId>,
    pub triggers: Vec<TriggerRecord>,
    pub entries: Vec<TraceEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum ActionResult {
    Executed {
        tick: Tick,
        #[serde(skip_serializing_if = "Option::is_none")]
        code: Option<DecisionCode>,
    },
    Denied { tick: Tick },
    Escalated { tick: Tick, attempts: u32 },
    /// Still pending or halted when the horizon ran out.
    Unfinished,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActionSummary {
    pub action_id: String,
    pub submitted: Tick,
    pub execute_at: Tick,
    pub cycles: u32,
    #[serde(flatten)]
    pub result: ActionResult,
}

#[derive(Debug, Clone)]
pub struct SimRun {
    pub mode: GateMode,
    pub trace: Vec<TickRecord>,
    pub actions: Vec<ActionSummary>,
    pub effects: Vec<AppliedEffect>,
    pub resolutions: Vec<ResolutionResult>,
}

impl SimRun {
    /// Trace as JSON Lines, one record per tick.
    pub fn trace_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.trace {
            out.push_str(&serde_json::to_string(r).expect("trace serializes"));
            out.push('\n');
        }
        out
    }

    pub fn stale_executions(&self) -> impl Iterator<Item = (Tick, &TraceEntry)> {
        self.trace
            .iter()
            .flat_map(|r| r.entries.iter().map(move |e| (r.tick, e)))
            .filter(|(_, e)| e.stale_execution)
    }

    pub fn codes(&self) -> impl Iterator<Item = (Tick, &str, DecisionCode)> {
        self.trace
            .iter()
            .flat_map(|r| r.entries.iter().filter_map(move |e| e.code.map(|c| (r.tick, e.action_id.as_str(), c))))
    }

    pub fn action(&self, id: &str) -> Option<&ActionSummary> {
        self.actions.iter().find(|a| a.action_id == id)
    }

    pub fn any_escalated(&self) -> bool {
        self.actions.iter().any(|a| matches!(a.result, ActionResult::Escalated { .. }))
    }
}

struct Baseline {
    request: ActionRequest,
    execute_at: Tick,
    cached: bool,
    cycles: u32,
    result: Option<ActionResult>,
}

enum Slot {
    Gate(Box<ActionRun>),
    Baseline(Baseline),
}

struct Tracked {
    submitted: Tick,
    slot: Slot,
}

impl Tracked {
    fn done(&self) -> bool {
        match &self.slot {
            Slot::Gate(r) => r.terminal().is_some(),
            Slot::Baseline(b) => b.result.is_some(),
        }
    }
}

/// Runs `sc` with no audit output.
pub fn run_scenario(sc: &Scenario, mode: GateMode) -> Result<SimRun, HarnessError> {
    run_with(sc, &RunOptions::new(mode), Box::new(NullSink))
}

pub fn run_with(sc: &Scenario, opts: &RunOptions, sink: Box<dyn AuditSink>) -> Result<SimRun, HarnessError> {
    let mut cfg: GateConfig = sc.gate_config();
    if let Some(m) = opts.max_recovery_attempts {
        cfg.max_recovery_attempts = m;
    }
    if let Some(t) = opts.theta_auth {
        cfg.theta_auth = t;
    }
    cfg.audit_sampling = opts.sampling.clone();
    cfg.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
    let gate = Gate::new(cfg.clone(), Auditor::new(opts.sampling.clone(), sink));
    Runner {
        sc,
        opts,
        cfg,
        gate,
        env: SimEnvironment::new(&sc.initial_state, sc.horizon),
        tracked: Vec::new(),
        resolutions: Vec::new(),
    }
    .run()
}

struct Runner<'a> {
    sc: &'a Scenario,
    opts: &'a RunOptions,
    cfg: GateConfig,
    gate: Gate,
    env: SimEnvironment,
    tracked: Vec<Tracked>,
    resolutions: Vec<ResolutionResult>,
}

impl Runner<'_> {
    fn run(mut self) -> Result<SimRun, HarnessError> {
        let sc = self.sc;
        let total_submits = sc.submissions().count();
        let mut next_event = 0;
        let mut prev: Option<StateSnapshot> = None;
        let mut trace = Vec::new();
        loop {
            let tick = self.env.now();
            let mut submits: Vec<&Submit> = Vec::new();
            while let Some(e) = sc.events.get(next_event).filter(|e| e.tick == tick) {
                match &e.event {
                    Event::Submit(s) => submits.push(s),
                    other => self.env.apply_event(other),
                }
                next_event += 1;
            }
            let snapshot = self.env.observe();
            let changed = prev.as_ref().map(|p| diff_observations(p, &snapshot)).unwrap_or_default();
            let mut record = TickRecord {
                tick,
                digest: snapshot.digest(),
                drift: changed.keys().cloned().collect(),
                triggers: Vec::new(),
                entries: Vec::new(),
            };

            if self.opts.triggers && !changed.is_empty() {
                for t in &mut self.tracked {
                    let Slot::Gate(run) = &mut t.slot else { continue };
                    if run.terminal().is_some() {
                        continue;
                    }
                    let signal = DriftSignal::classify(changed.clone(), run.authority_set());
                    if let Some(trigger) = emit_trigger(&signal, &run.gate_phase(), tick) {
                        record.triggers.push(TriggerRecord {
                            action_id: run.request().action_id.clone(),
                            cause: trigger.cause,
                            focus: trigger.focus.clone(),
                        });
                        run.on_trigger(trigger, &snapshot, &sc.policies, &self.cfg);
                    }
                }
            }

            for i in 0..self.tracked.len() {
                self.step(i, &snapshot, &mut record)?;
            }
            for s in submits {
                let execute_at = s.execute_at.unwrap_or(tick);
                let slot = match self.opts.mode {
                    GateMode::Reconstructive => {
                        let mut run = ActionRun::new(s.request(), execute_at);
                        if execute_at > tick {
                            run.attest(&snapshot, &sc.policies, &self.cfg);
                        }
                        Slot::Gate(Box::new(run))
                    }
                    GateMode::SnapshotBaseline => Slot::Baseline(Baseline {
                        request: s.request(),
                        execute_at,
                        cached: false,
                        cycles: 0,
                        result: None,
                    }),
                };
                self.tracked.push(Tracked { submitted: tick, slot });
                self.step(self.tracked.len() - 1, &snapshot, &mut record)?;
            }

            trace.push(record);
            prev = Some(self.env.observe());
            if self.tracked.len() == total_submits && self.tracked.iter().all(Tracked::done) {
                break;
            }
            if !self.env.advance() {
                break;
            }
        }

        let actions = self
            .tracked
            .iter()
            .map(|t| match &t.slot {
                Slot::Gate(run) => ActionSummary {
                    action_id: run.request().action_id.clone(),
                    submitted: t.submitted,
                    execute_at: run.execute_at(),
                    cycles: run.cycles(),
                    result: match run.phase() {
                        RunPhase::Done(TerminalOutcome::Executed { tick, code }) => ActionResult::Executed {
                            tick: *tick,
                            code: Some(*code),
                        },
                        RunPhase::Done(TerminalOutcome::Denied { tick }) => ActionResult::Denied { tick: *tick },
                        RunPhase::Done(TerminalOutcome::Escalated { tick, context }) => ActionResult::Escalated {
                            tick: *tick,
                            attempts: context.attempts,
                        },
                        _ => ActionResult::Unfinished,
                    },
                },
                Slot::Baseline(b) => ActionSummary {
                    action_id: b.request.action_id.clone(),
                    submitted: t.submitted,
                    execute_at: b.execute_at,
                    cycles: b.cycles,
                    result: b.result.clone().unwrap_or(ActionResult::Unfinished),
                },
            })
            .collect();
        Ok(SimRun {
            mode: self.opts.mode,
            trace,
            actions,
            effects: self.env.effects().to_vec(),
            resolutions: self.resolutions,
        })
    }

    fn step(&mut self, i: usize, snapshot: &StateSnapshot, record: &mut TickRecord) -> Result<(), HarnessError> {
        let Runner { sc, opts, cfg, gate, env, tracked, resolutions } = self;
        let tick = env.now();
        let policies = &sc.policies;
        match &mut tracked[i].slot {
            Slot::Gate(run) => {
                let Some(report) = run.step(env, gate, policies)? else {
                    return Ok(());
                };
                let kind = match report.kind {
                    StepKind::Decision => EntryKind::Decision,
                    StepKind::Recovery => EntryKind::Recovery,
                    StepKind::Escalation => EntryKind::Escalation,
                };
                let mut entry = TraceEntry {
                    action_id: report.action_id.clone(),
                    kind,
                    exec_state: None,
                    code: None,
                    effect_applied: report.effect_applied,
                    fresh_verdict: None,
                    stale_execution: false,
                };
                if let Some(d) = &report.decided {
                    entry.exec_state = Some(d.decision.exec_state);
                    entry.code = d.decision.code;
                    if opts.keep_resolutions {
                        resolutions.push(d.decision.outcome.resolution.clone());
                    }
                }
                if report.effect_applied {
                    let request = report.decided.as_ref().map(|d| d.decision.request.clone()).expect("effect implies decision");
                    let now = env.observe();
                    let verdict = fresh_verdict(sc, cfg.theta_auth, &request, &now)?;
                    entry.fresh_verdict = Some(verdict);
                    entry.stale_execution = verdict != Verdict::Exec;
                }
                record.entries.push(entry);
            }
            Slot::Baseline(b) => {
                if b.result.is_some() {
                    return Ok(());
                }
                let prior = policies.prior(&b.request.action_class);
                let tree = policies
                    .spec(&b.request.action_class)
                    .and_then(|s| s.tree_for(b.request.scope_label.as_deref()))
                    .expect("validated scenario");
                let fresh = (!b.cached || tick >= b.execute_at)
                    .then(|| reconstruct_authority(tree, snapshot, &prior, &policies.consistency_rules, cfg.theta_auth).state);
                if !b.cached && fresh == Some(AuthorityState::True) {
                    b.cached = true;
                }
                if tick < b.execute_at {
                    return Ok(());
                }
                b.cycles += 1;
                let action_id = b.request.action_id.clone();
                if b.cached {
                    let request = b.request.clone();
                    b.result = Some(ActionResult::Executed { tick, code: None });
                    let applied = env.force_effect(&action_id);
                    let verdict = fresh_verdict(sc, cfg.theta_auth, &request, snapshot)?;
                    record.entries.push(TraceEntry {
                        action_id,
                        kind: EntryKind::CachedExecute,
                        exec_state: Some(ExecState::Execute),
                        code: None,
                        effect_applied: applied,
                        fresh_verdict: Some(verdict),
                        stale_execution: verdict != Verdict::Exec,
                    });
                } else if fresh == Some(AuthorityState::False) {
                    b.result = Some(ActionResult::Denied { tick });
                    record.entries.push(TraceEntry {
                        action_id,
                        kind: EntryKind::BaselineDeny,
                        exec_state: Some(ExecState::Deny),
                        code: None,
                        effect_applied: false,
                        fresh_verdict: None,
                        stale_execution: false,
                    });
                }
            }
        }
        Ok(())
    }
}

fn fresh_verdict(sc: &Scenario, theta: f64, request: &ActionRequest, snapshot: &StateSnapshot) -> Result<Verdict, HarnessError> {
    let tree = sc
        .policies
        .spec(&request.action_class)
        .and_then(|s| s.tree_for(request.scope_label.as_deref()))
        .expect("validated scenario");
    Ok(oracle_decide(tree, snapshot, &sc.policies.consistency_rules, theta)?)
}

/// Trace entries flattened with their tick, for quick inspection.
pub fn entries_by_action(run: &SimRun) -> BTreeMap<String, Vec<(Tick, TraceEntry)>> {
    let mut out: BTreeMap<String, Vec<(Tick, TraceEntry)>> = BTreeMap::new();
    for r in &run.trace {
        for e in &r.entries {
            out.entry(e.action_id.clone()).or_default().push((r.tick, e.clone()));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const SINGLE: &str = r#"{
      "seed": 0, "horizon": 5,
      "initial_state": {"x": {"value": 1, "u": 0.0}},
      "events": [{"tick": 0, "submit": {"action_id": "a", "action_class": "c"}}],
      "policy": {"policies": [{"action_class": "c", "root": {"leaf": {"var": "x", "op": "eq", "rhs": 1}}}]}
    }"#;

    #[test]
    fn fully_observable_single_tick_execute() {
        let sc = Scenario::from_json_str(SINGLE).unwrap();
        let run = run_scenario(&sc, GateMode::Reconstructive).unwrap();
        assert_eq!(run.trace.len(), 1);
        assert_eq!(
            run.actions[0].result,
            ActionResult::Executed { tick: 0, code: Some(DecisionCode::AdmitAuthorityConstructible) }
        );
        assert_eq!(run.effects.len(), 1);
        assert_eq!(run.stale_executions().count(), 0);
    }

    #[test]
    fn traces_are_deterministic() {
        let sc = Scenario::from_json_str(SINGLE).unwrap();
        for mode in [GateMode::Reconstructive, GateMode::SnapshotBaseline] {
            let a = run_scenario(&sc, mode).unwrap().trace_jsonl();
            let b = run_scenario(&sc, mode).unwrap().trace_jsonl();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn horizon_leaves_unfinished() {
        let text = SINGLE.replace(r#""u": 0.0"#, r#""u": 0.0, "observable": false"#);
        let sc = Scenario::from_json_str(&text).unwrap();
        let mut opts = RunOptions::new(GateMode::Reconstructive);
        opts.max_recovery_attempts = Some(50);
        let run = run_with(&sc, &opts, Box::new(NullSink)).unwrap();
        assert_eq!(run.actions[0].result, ActionResult::Unfinished);
        assert_eq!(run.trace.len(), 6);
    }
}
