//! Bundled fixtures: the three-state transfer example and the drift scenario.

use rgate_core::policy::{parse_policy, PolicySet};
use rgate_core::state::StateSnapshot;

use crate::scenario::Scenario;

pub const WORKED_POLICY: &str = include_str!("../fixtures/worked_policy.json");
pub const STATE_A: &str = include_str!("../fixtures/state_a.json");
pub const STATE_B: &str = include_str!("../fixtures/state_b.json");
pub const STATE_C: &str = include_str!("../fixtures/state_c.json");
pub const DRIFT_SCENARIO: &str = include_str!("../fixtures/drift_scenario.json");
pub const EVENTUAL_OBSERVABILITY: &str = include_str!("../fixtures/eventual_observability.json");
pub const PERMANENT_UNOBSERVABLE: &str = include_str!("../fixtures/permanent_unobservable.json");
pub const PLANTED_VIOLATION: &str = include_str!("../fixtures/planted_violation.jsonl");

pub const WORKED_CLASS: &str = "transfer";

pub fn worked_policies() -> PolicySet {
    parse_policy(WORKED_POLICY).expect("bundled policy parses")
}

/// States A, B and C in that order.
pub fn worked_states() -> [StateSnapshot; 3] {
    [STATE_A, STATE_B, STATE_C].map(|s| StateSnapshot::from_json_str(s).expect("bundled state parses"))
}

pub fn drift_scenario() -> Scenario {
    Scenario::from_json_str(DRIFT_SCENARIO).expect("bundled scenario parses")
}

pub fn eventual_observability() -> Scenario {
    Scenario::from_json_str(EVENTUAL_OBSERVABILITY).expect("bundled scenario parses")
}

pub fn permanent_unobservable() -> Scenario {
    Scenario::from_json_str(PERMANENT_UNOBSERVABLE).expect("bundled scenario parses")
}
