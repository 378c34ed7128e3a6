use proptest::prelude::*;
use rgate_core::gate::{decide, ActionRequest, ExecState};
use rgate_core::state::GateConfig;
use rgate_core::DriftSignal;
use rgate_sim::gen::{self, SpecShape, CLASS};
use rgate_sim::harness::{run_scenario, ActionResult, GateMode};
use rgate_sim::oracle::{oracle_decide, Verdict};

const THETA: f64 = 0.2;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reconstructive_runs_never_execute_stale(seed in any::<u64>()) {
        let sc = gen::drift_scenario(seed);
        let run = run_scenario(&sc, GateMode::Reconstructive).unwrap();
        prop_assert_eq!(run.stale_executions().count(), 0, "seed {}", seed);
        let again = run_scenario(&sc, GateMode::Reconstructive).unwrap();
        prop_assert_eq!(run.trace_jsonl(), again.trace_jsonl());
    }

    #[test]
    fn gate_matches_oracle_on_six_variable_specs(seed in any::<u64>(), snap_seed in any::<u64>()) {
        let case = gen::gen_case(seed, SpecShape::default());
        let snap = gen::gen_snapshot(snap_seed, &case.vars, THETA);
        let cfg = GateConfig::new(THETA, 5).unwrap();
        let d = decide(&ActionRequest::new("p", CLASS), &snap, &case.policies, &DriftSignal::none(), &cfg, None).unwrap();
        let o = oracle_decide(&case.spec().root, &snap, &case.policies.consistency_rules, THETA).unwrap();
        let expected = match o {
            Verdict::Exec => ExecState::Execute,
            Verdict::Deny => ExecState::Deny,
            Verdict::Halt => ExecState::Halt,
        };
        prop_assert_eq!(d.exec_state, expected, "spec seed {} snapshot seed {}", seed, snap_seed);
    }

    #[test]
    fn eventual_observability_terminates(seed in any::<u64>()) {
        let case = gen::liveness_scenario(seed);
        let run = run_scenario(&case.scenario, GateMode::Reconstructive).unwrap();
        let a = &run.actions[0];
        prop_assert!(matches!(a.result, ActionResult::Executed { .. } | ActionResult::Denied { .. }), "seed {}: {:?}", seed, a.result);
        prop_assert!(u64::from(a.cycles) <= case.settle_tick + 1);
    }
}
