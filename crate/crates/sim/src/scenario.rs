//! Scenario files: ground truth, a timed event list, and the policy under test.

use std::collections::{BTreeMap, BTreeSet};

use rgate_core::policy::{parse_policy, PolicySet};
use rgate_core::state::{GateConfig, Tick, VariableId, VariableValue};
use rgate_core::ActionRequest;
use rgate_core::ConsistencyRule;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("line {line} column {column}: {msg}")]
    Syntax { line: usize, column: usize, msg: String },
    #[error("{path}: {msg}")]
    Invalid { path: String, msg: String },
}

fn invalid(path: impl Into<String>, msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        path: path.into(),
        msg: msg.into(),
    }
}

/// How the environment answers an augmentation request for a variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Acquire {
    /// Uncertainty of the acquired observation.
    pub u: f64,
    /// Ticks until the observation is available; 0 means immediately.
    #[serde(default)]
    pub delay: Tick,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthEntry {
    pub value: VariableValue,
    pub u: f64,
    #[serde(default = "default_true")]
    pub observable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acquire: Option<Acquire>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Submit {
    pub action_id: String,
    pub action_class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub execute_at: Option<Tick>,
}

impl Submit {
    pub fn request(&self) -> ActionRequest {
        ActionRequest::new(self.action_id.clone(), self.action_class.clone()).with_scope(self.scope_label.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Event {
    SetValue { var: VariableId, value: VariableValue },
    SetUncertainty { var: VariableId, u: f64 },
    /// Makes a variable observable, optionally with a new uncertainty.
    SetObservable {
        var: VariableId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        u: Option<f64>,
    },
    SetUnobservable { var: VariableId },
    Submit(Submit),
}

impl Event {
    fn var(&self) -> Option<&VariableId> {
        match self {
            Event::SetValue { var, .. }
            | Event::SetUncertainty { var, .. }
            | Event::SetObservable { var, .. }
            | Event::SetUnobservable { var } => Some(var),
            Event::Submit(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimedEvent {
    pub tick: Tick,
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_auth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_recovery_attempts: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    pub horizon: Tick,
    pub config: ScenarioConfig,
    pub initial_state: BTreeMap<VariableId, TruthEntry>,
    pub events: Vec<TimedEvent>,
    pub policies: PolicySet,
}

impl Scenario {
    pub fn gate_config(&self) -> GateConfig {
        let mut cfg = GateConfig::default();
        if let Some(t) = self.config.theta_auth {
            cfg.theta_auth = t;
        }
        if let Some(m) = self.config.max_recovery_attempts {
            cfg.max_recovery_attempts = m;
        }
        cfg
    }

    pub fn submissions(&self) -> impl Iterator<Item = (Tick, &Submit)> {
        self.events.iter().filter_map(|e| match &e.event {
            Event::Submit(s) => Some((e.tick, s)),
            _ => None,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self, ScenarioError> {
        let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| ScenarioError::Syntax {
            line: e.line(),
            column: e.column(),
            msg: e.to_string().rsplit_once(" at line ").map_or_else(|| e.to_string(), |(m, _)| m.to_string()),
        })?;
        let obj = raw.as_object().ok_or_else(|| invalid("$", "scenario must be an object"))?;
        const KNOWN: [&str; 7] = ["seed", "horizon", "config", "initial_state", "events", "policy", "consistency_rules"];
        if let Some(k) = obj.keys().find(|k| !KNOWN.contains(&k.as_str())) {
            return Err(invalid(format!("$.{k}"), "unknown field"));
        }
        let field = |name: &str| obj.get(name).ok_or_else(|| invalid(format!("$.{name}"), "missing required field"));
        let seed = field("seed")?.as_u64().ok_or_else(|| invalid("$.seed", "must be a non-negative integer"))?;
        let horizon = field("horizon")?.as_u64().ok_or_else(|| invalid("$.horizon", "must be a non-negative integer"))?;
        let config: ScenarioConfig = match obj.get("config") {
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| invalid("$.config", e.to_string()))?,
            None => ScenarioConfig::default(),
        };

        let mut initial_state = BTreeMap::new();
        let init = field("initial_state")?.as_object().ok_or_else(|| invalid("$.initial_state", "must be an object"))?;
        for (name, entry) in init {
            let path = format!("$.initial_state.{name}");
            let var = VariableId::new(name.clone()).map_err(|e| invalid(&path, e.to_string()))?;
            let entry: TruthEntry = serde_json::from_value(entry.clone()).map_err(|e| invalid(&path, e.to_string()))?;
            initial_state.insert(var, entry);
        }

        let mut events = Vec::new();
        let list = match obj.get("events") {
            Some(v) => v.as_array().ok_or_else(|| invalid("$.events", "must be an array"))?.clone(),
            None => Vec::new(),
        };
        for (i, item) in list.iter().enumerate() {
            let path = format!("$.events[{i}]");
            let mut m = item.as_object().ok_or_else(|| invalid(&path, "event must be an object"))?.clone();
            let tick = m
                .remove("tick")
                .and_then(|t| t.as_u64())
                .ok_or_else(|| invalid(&path, "missing or invalid \"tick\""))?;
            if m.len() != 1 {
                return Err(invalid(&path, "event needs exactly one kind besides \"tick\""));
            }
            let event: Event =
                serde_json::from_value(serde_json::Value::Object(m)).map_err(|e| invalid(&path, e.to_string()))?;
            events.push(TimedEvent { tick, event });
        }

        let mut doc = field("policy")?.clone();
        if let Some(rules) = obj.get("consistency_rules") {
            let extra: Vec<ConsistencyRule> =
                serde_json::from_value(rules.clone()).map_err(|e| invalid("$.consistency_rules", e.to_string()))?;
            let doc_obj = doc.as_object_mut().ok_or_else(|| invalid("$.policy", "must be an object"))?;
            let mut all: Vec<serde_json::Value> = doc_obj
                .get("consistency_rules")
                .and_then(|v| v.as_array().cloned())
                .unwrap_or_default();
            all.extend(extra.iter().map(|r| serde_json::to_value(r).expect("rule serializes")));
            doc_obj.insert("consistency_rules".into(), serde_json::Value::Array(all));
        }
        let policies = parse_policy(&doc.to_string()).map_err(|e| invalid("$.policy", e.to_string()))?;

        let sc = Scenario {
            seed,
            horizon,
            config,
            initial_state,
            events,
            policies,
        };
        sc.validate()?;
        Ok(sc)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.gate_config().validate().map_err(|e| invalid("$.config", e.to_string()))?;
        for (var, entry) in &self.initial_state {
            let path = format!("$.initial_state.{var}");
            if !(0.0..=1.0).contains(&entry.u) {
                return Err(invalid(&path, "u outside [0, 1]"));
            }
            if let Some(a) = &entry.acquire {
                if !(0.0..=1.0).contains(&a.u) {
                    return Err(invalid(&path, "acquire.u outside [0, 1]"));
                }
            }
        }
        let mut ids = BTreeSet::new();
        let mut last = 0;
        for (i, e) in self.events.iter().enumerate() {
            let path = format!("$.events[{i}]");
            if e.tick < last {
                return Err(invalid(&path, "events must be sorted by tick"));
            }
            last = e.tick;
            if e.tick > self.horizon {
                return Err(invalid(&path, "tick beyond horizon"));
            }
            if let Some(var) = e.event.var() {
                if !self.initial_state.contains_key(var) {
                    return Err(invalid(&path, format!("unknown variable {var}")));
                }
            }
            match &e.event {
                Event::SetUncertainty { u, .. } | Event::SetObservable { u: Some(u), .. } if !(0.0..=1.0).contains(u) => {
                    return Err(invalid(&path, "u outside [0, 1]"));
                }
                Event::Submit(s) => {
                    if !ids.insert(s.action_id.clone()) {
                        return Err(invalid(&path, format!("duplicate action_id {:?}", s.action_id)));
                    }
                    let Some(spec) = self.policies.spec(&s.action_class) else {
                        return Err(invalid(&path, format!("unknown action_class {:?}", s.action_class)));
                    };
                    if spec.tree_for(s.scope_label.as_deref()).is_none() {
                        return Err(invalid(&path, "unknown scope_label"));
                    }
                    if let Some(at) = s.execute_at {
                        if at < e.tick || at > self.horizon {
                            return Err(invalid(&path, "execute_at must lie between the submit tick and the horizon"));
                        }
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut m = serde_json::Map::new();
        m.insert("seed".into(), self.seed.into());
        m.insert("horizon".into(), self.horizon.into());
        if self.config != ScenarioConfig::default() {
            m.insert("config".into(), serde_json::to_value(&self.config).expect("config serializes"));
        }
        let init: serde_json::Map<_, _> = self
            .initial_state
            .iter()
            .map(|(k, v)| (k.to_string(), serde_json::to_value(v).expect("entry serializes")))
            .collect();
        m.insert("initial_state".into(), serde_json::Value::Object(init));
        let events: Vec<serde_json::Value> = self
            .events
            .iter()
            .map(|e| {
                let mut o = serde_json::Map::new();
                o.insert("tick".into(), e.tick.into());
                if let serde_json::Value::Object(body) = serde_json::to_value(&e.event).expect("event serializes") {
                    o.extend(body);
                }
                serde_json::Value::Object(o)
            })
            .collect();
        m.insert("events".into(), serde_json::Value::Array(events));
        m.insert("policy".into(), self.policies.to_json());
        serde_json::Value::Object(m)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_json()).expect("scenario serializes")
    }
}
