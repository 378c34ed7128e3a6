//! Ground-truth environment. The gate only ever sees the observable part.

use std::collections::{BTreeMap, BTreeSet};

use rgate_core::enforce::Environment;
use rgate_core::gate::ExecutionPermit;
use rgate_core::recovery::AugmentationRequest;
use rgate_core::state::{Observation, StateSnapshot, Tick, VariableId, VariableValue};

use crate::scenario::{Acquire, Event, TruthEntry};

#[derive(Debug, Clone, PartialEq)]
struct Truth {
    value: VariableValue,
    u: f64,
    observable: bool,
    acquire: Option<Acquire>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppliedEffect {
    pub action_id: String,
    pub tick: Tick,
    /// Applied by the baseline gate without a permit.
    pub forced: bool,
}

#[derive(Debug, Clone)]
pub struct SimEnvironment {
    tick: Tick,
    horizon: Tick,
    truth: BTreeMap<VariableId, Truth>,
    acquisitions: Vec<(Tick, VariableId, f64)>,
    effects: Vec<AppliedEffect>,
    augment_requests: Vec<AugmentationRequest>,
    refuse_augmentation: bool,
    fault: Option<(VariableId, VariableValue)>,
    reverts: u32,
}

impl SimEnvironment {
    pub fn new(initial: &BTreeMap<VariableId, TruthEntry>, horizon: Tick) -> Self {
        let truth = initial
            .iter()
            .map(|(k, e)| {
                (
                    k.clone(),
                    Truth {
                        value: e.value.clone(),
                        u: e.u,
                        observable: e.observable,
                        acquire: e.acquire.clone(),
                    },
                )
            })
            .collect();
        Self {
            tick: 0,
            horizon,
            truth,
            acquisitions: Vec::new(),
            effects: Vec::new(),
            augment_requests: Vec::new(),
            refuse_augmentation: false,
            fault: None,
            reverts: 0,
        }
    }

    /// Applies a scripted mutation at the current tick.
    pub fn apply_event(&mut self, event: &Event) {
        match event {
            Event::SetValue { var, value } => {
                if let Some(t) = self.truth.get_mut(var) {
                    t.value = value.clone();
                }
            }
            Event::SetUncertainty { var, u } => {
                if let Some(t) = self.truth.get_mut(var) {
                    t.u = *u;
                }
            }
            Event::SetObservable { var, u } => {
                if let Some(t) = self.truth.get_mut(var) {
                    t.observable = true;
                    if let Some(u) = u {
                        t.u = *u;
                    }
                }
            }
            Event::SetUnobservable { var } => {
                if let Some(t) = self.truth.get_mut(var) {
                    t.observable = false;
                }
                self.acquisitions.retain(|(_, v, _)| v != var);
            }
            Event::Submit(_) => {}
        }
    }

    pub fn horizon(&self) -> Tick {
        self.horizon
    }

    pub fn effects(&self) -> &[AppliedEffect] {
        &self.effects
    }

    pub fn augment_requests(&self) -> &[AugmentationRequest] {
        &self.augment_requests
    }

    pub fn reverts(&self) -> u32 {
        self.reverts
    }

    pub fn set_refuse_augmentation(&mut self, refuse: bool) {
        self.refuse_augmentation = refuse;
    }

    /// Test hook: changes `var` right after the next observation, inside the
    /// same tick. This deliberately breaks the tick contract.
    pub fn inject_intra_tick(&mut self, var: VariableId, value: VariableValue) {
        self.fault = Some((var, value));
    }

    /// Baseline gate effect application; no permit, no freshness check.
    pub fn force_effect(&mut self, action_id: &str) -> bool {
        if self.effects.iter().any(|e| e.action_id == action_id) {
            return false;
        }
        self.effects.push(AppliedEffect {
            action_id: action_id.to_string(),
            tick: self.tick,
            forced: true,
        });
        true
    }

    fn snapshot(&self) -> StateSnapshot {
        let obs = self
            .truth
            .iter()
            .filter(|(_, t)| t.observable)
            .map(|(k, t)| (k.clone(), Observation { value: t.value.clone(), u: t.u }))
            .collect();
        StateSnapshot::new(self.tick, obs)
    }

    fn land_acquisitions(&mut self) {
        let now = self.tick;
        let (due, later): (Vec<_>, Vec<_>) = self.acquisitions.drain(..).partition(|(at, _, _)| *at <= now);
        self.acquisitions = later;
        for (_, var, u) in due {
            if let Some(t) = self.truth.get_mut(&var) {
                t.observable = true;
                t.u = u;
            }
        }
    }
}

impl Environment for SimEnvironment {
    fn now(&self) -> Tick {
        self.tick
    }

    fn observe(&mut self) -> StateSnapshot {
        let snap = self.snapshot();
        if let Some((var, value)) = self.fault.take() {
            if let Some(t) = self.truth.get_mut(&var) {
                t.value = value;
            }
        }
        snap
    }

    /// Schedules acquisitions for focus variables that have an acquisition
    /// profile. Variables without one stay as they are.
    fn augment(&mut self, request: &AugmentationRequest) -> Result<(), String> {
        self.augment_requests.push(request.clone());
        if self.refuse_augmentation {
            return Err("augmentation disabled".into());
        }
        let scheduled: BTreeSet<VariableId> = self.acquisitions.iter().map(|(_, v, _)| v.clone()).collect();
        for var in &request.focus {
            if scheduled.contains(var) {
                continue;
            }
            if let Some(a) = self.truth.get(var).and_then(|t| t.acquire.clone()) {
                self.acquisitions.push((self.tick + a.delay, var.clone(), a.u));
            }
        }
        self.land_acquisitions();
        Ok(())
    }

    fn apply_effect(&mut self, permit: ExecutionPermit) -> Result<(), String> {
        if permit.tick() != self.tick {
            return Err(format!("permit for tick {} presented at tick {}", permit.tick(), self.tick));
        }
        if self.effects.iter().any(|e| e.action_id == permit.action_id()) {
            return Err(format!("effect for {} already applied", permit.action_id()));
        }
        self.effects.push(AppliedEffect {
            action_id: permit.action_id().to_string(),
            tick: self.tick,
            forced: false,
        });
        Ok(())
    }

    fn advance(&mut self) -> bool {
        if self.tick >= self.horizon {
            return false;
        }
        self.tick += 1;
        self.land_acquisitions();
        true
    }

    fn revert_to_last_atomic_state(&mut self) {
        self.reverts += 1;
    }
}
