//! Deterministic drift detection between snapshots and recovery triggers.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::state::{StateError, StateSnapshot, Tick, VariableId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKind {
    ValueChanged,
    UncertaintyChanged,
    BecameUnobserved,
    BecameObserved,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct DriftSignal {
    pub changed: BTreeMap<VariableId, DriftKind>,
    pub authority_defining_changed: Vec<VariableId>,
}

impl DriftSignal {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.changed.is_empty()
    }

    /// Classifies changes against `authority_set`; `None` treats every
    /// change as authority-defining.
    pub fn classify(changed: BTreeMap<VariableId, DriftKind>, authority_set: Option<&[VariableId]>) -> Self {
        let authority_defining_changed = changed
            .keys()
            .filter(|v| authority_set.is_none_or(|set| set.contains(v)))
            .cloned()
            .collect();
        Self {
            changed,
            authority_defining_changed,
        }
    }
}

/// Per-variable differences between two observation maps. Value changes
/// take precedence over uncertainty changes.
pub fn diff_observations(prev: &StateSnapshot, cur: &StateSnapshot) -> BTreeMap<VariableId, DriftKind> {
    let mut out = BTreeMap::new();
    for (var, p) in prev.observations() {
        match cur.get(var) {
            None => {
                out.insert(var.clone(), DriftKind::BecameUnobserved);
            }
            Some(c) if c.value != p.value => {
                out.insert(var.clone(), DriftKind::ValueChanged);
            }
            Some(c) if c.u != p.u => {
                out.insert(var.clone(), DriftKind::UncertaintyChanged);
            }
            Some(_) => {}
        }
    }
    for var in cur.observations().keys() {
        if prev.get(var).is_none() {
            out.insert(var.clone(), DriftKind::BecameObserved);
        }
    }
    out
}

pub fn detect_drift(
    prev: &StateSnapshot,
    cur: &StateSnapshot,
    authority_set: Option<&[VariableId]>,
) -> Result<DriftSignal, StateError> {
    if prev.timestamp() >= cur.timestamp() {
        return Err(StateError::NonMonotoneTimestamp {
            prev: prev.timestamp(),
            next: cur.timestamp(),
        });
    }
    Ok(DriftSignal::classify(diff_observations(prev, cur), authority_set))
}

#[derive(Debug, Clone, PartialEq)]
pub enum GatePhase {
    Running,
    Halted { unresolved: Vec<VariableId> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerCause {
    Drift,
    ObservabilityGap,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryTrigger {
    pub cause: TriggerCause,
    pub focus: Vec<VariableId>,
    pub tick: Tick,
}

/// Emits a trigger on authority drift, or when a halted action sees a change
/// to one of its unresolved variables.
pub fn emit_trigger(signal: &DriftSignal, phase: &GatePhase, tick: Tick) -> Option<RecoveryTrigger> {
    let mut focus: Vec<VariableId> = signal.authority_defining_changed.clone();
    if let GatePhase::Halted { unresolved } = phase {
        for var in signal.changed.keys() {
            if unresolved.contains(var) && !focus.contains(var) {
                focus.push(var.clone());
            }
        }
    }
    if focus.is_empty() {
        return None;
    }
    focus.sort();
    let cause = if signal.authority_defining_changed.is_empty() {
        TriggerCause::ObservabilityGap
    } else {
        TriggerCause::Drift
    };
    Some(RecoveryTrigger { cause, focus, tick })
}
