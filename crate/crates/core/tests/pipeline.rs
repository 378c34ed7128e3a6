use std::collections::BTreeMap;

use rgate_core::audit::{verify_log, JsonlFileSink};
use rgate_core::gate::BindRefusal;
use rgate_core::{
    bind_effect, parse_policy, ActionRequest, Auditor, DecisionCode, DriftSignal, ExecState, Gate, GateConfig, Observation,
    SamplingPolicy, StateSnapshot, VariableId, VariableValue,
};

const POLICY: &str = r##"{
  "policies": [{
    "action_class": "deploy",
    "root": {"guard": {"var": "env", "branches": {
      "#prod": {"all": [
        {"leaf": {"var": "approved", "op": "eq", "rhs": true}},
        {"leaf": {"var": "error_rate", "op": "le", "rhs": 0.05}}]},
      "#staging": {"leaf": {"var": "tests_green", "op": "eq", "rhs": true}}}}}
  }]
}"##;

fn var(s: &str) -> VariableId {
    VariableId::new(s).unwrap()
}

fn snapshot(t: u64, entries: &[(&str, VariableValue, f64)]) -> StateSnapshot {
    let m: BTreeMap<_, _> = entries
        .iter()
        .map(|(k, v, u)| (var(k), Observation::new(v.clone(), *u).unwrap()))
        .collect();
    StateSnapshot::new(t, m)
}

#[test]
fn decisions_audited_to_file_verify_cleanly() {
    let policies = parse_policy(POLICY).unwrap();
    let path = std::env::temp_dir().join(format!("rgate-core-pipeline-{}.jsonl", std::process::id()));
    let _ = std::fs::remove_file(&path);
    let auditor = Auditor::new(SamplingPolicy::default(), Box::new(JsonlFileSink::open(&path).unwrap()));
    let gate = Gate::new(GateConfig::new(0.2, 3).unwrap(), auditor);
    let req = ActionRequest::new("d1", "deploy");

    let open_guard = snapshot(0, &[("approved", VariableValue::Bool(true), 0.0)]);
    let d = gate.decide(&req, &open_guard, &policies, &DriftSignal::none(), None).unwrap().decision;
    assert_eq!((d.exec_state, d.code), (ExecState::Halt, Some(DecisionCode::HaltMissingRequiredSignal)));
    assert_eq!(d.outcome.resolution.authority_defining, vec![var("env")]);

    let staging = snapshot(1, &[("env", VariableValue::enum_tag("staging"), 0.0), ("tests_green", VariableValue::Bool(true), 0.1)]);
    let d = gate.decide(&req, &staging, &policies, &DriftSignal::none(), Some(1)).unwrap().decision;
    assert_eq!(d.exec_state, ExecState::Execute);
    assert_eq!(d.outcome.resolution.authority_defining, vec![var("env"), var("tests_green")]);
    assert!(bind_effect(&d, &staging).is_ok());

    let flipped = snapshot(1, &[("env", VariableValue::enum_tag("prod"), 0.0), ("tests_green", VariableValue::Bool(true), 0.1)]);
    assert_eq!(bind_effect(&d, &flipped).unwrap_err(), BindRefusal::AuthorityDrift(vec![var("env")]));
    let later = snapshot(2, &[]);
    assert!(matches!(bind_effect(&d, &later), Err(BindRefusal::Stale { .. })));

    let text = std::fs::read_to_string(&path).unwrap();
    let report = verify_log(&text).unwrap();
    assert!(report.safety_ok && report.lineage_ok);
    assert_eq!((report.decisions, report.executes, report.halts), (2, 1, 1));
    std::fs::remove_file(&path).unwrap();
}
