//! Seeded generators for specs, snapshots, priors and scenarios.
//!
//! Grammar: up to six variables named `v0..v5`, each drawn from one of three
//! domains (bool, {0,1,2}, {#a,#b,#c}); trees of depth at most 3 built from
//! leaves, `all`/`any` with 2 or 3 children, and guards with 1 or 2 keyed
//! branches plus an optional default. Snapshots mark each variable
//! unobserved, uncertain (u = 0.5) or observed at u in {0, 0.1, theta}.
//! Every generator is a pure function of its seed.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rgate_core::authority::ConsistencyRule;
use rgate_core::policy::{AuthoritySpec, CmpOp, PolicyPrior, PolicySet, Predicate, Rhs, RuleNode};
use rgate_core::state::{Observation, StateSnapshot, Tick, VariableId, VariableValue};

use crate::scenario::{Acquire, Event, Scenario, ScenarioConfig, Submit, TimedEvent, TruthEntry};

pub const CLASS: &str = "act";
pub const NARROW_SCOPE: &str = "narrow";
pub const MAX_DEPTH: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Bool,
    Small,
    Tag,
}

impl Domain {
    pub fn literals(self) -> Vec<VariableValue> {
        match self {
            Domain::Bool => vec![VariableValue::Bool(false), VariableValue::Bool(true)],
            Domain::Small => (0..3).map(|i: i64| VariableValue::Number(i.into())).collect(),
            Domain::Tag => ["a", "b", "c"].into_iter().map(VariableValue::enum_tag).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenVar {
    pub id: VariableId,
    pub domain: Domain,
}

#[derive(Debug, Clone)]
pub struct GeneratedCase {
    pub seed: u64,
    pub vars: Vec<GenVar>,
    pub policies: PolicySet,
}

impl GeneratedCase {
    pub fn spec(&self) -> &AuthoritySpec {
        self.policies.spec(CLASS).expect("generated class")
    }

    /// Same specs and rules with `prior` attached.
    pub fn with_prior(&self, prior: PolicyPrior) -> PolicySet {
        PolicySet::from_parts(
            self.policies.specs.values().cloned().collect(),
            vec![prior],
            self.policies.consistency_rules.clone(),
        )
        .expect("generated policy stays valid")
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SpecShape {
    pub max_vars: usize,
    pub narrowing: bool,
    pub rules: bool,
}

impl Default for SpecShape {
    fn default() -> Self {
        Self {
            max_vars: 6,
            narrowing: true,
            rules: true,
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn var_id(i: usize) -> VariableId {
    VariableId::new(format!("v{i}")).expect("generated id")
}

fn gen_vars(rng: &mut ChaCha8Rng, max_vars: usize) -> Vec<GenVar> {
    let n = rng.gen_range(1..=max_vars);
    (0..n)
        .map(|i| GenVar {
            id: var_id(i),
            domain: *[Domain::Bool, Domain::Small, Domain::Tag].choose(rng).expect("non-empty"),
        })
        .collect()
}

fn gen_predicate(rng: &mut ChaCha8Rng, v: &GenVar) -> Predicate {
    let lits = v.domain.literals();
    let lit = lits.choose(rng).expect("non-empty").clone();
    let ops: &[CmpOp] = match v.domain {
        Domain::Bool => &[CmpOp::Eq, CmpOp::Neq],
        Domain::Small => &[CmpOp::Eq, CmpOp::Neq, CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge, CmpOp::In],
        Domain::Tag => &[CmpOp::Eq, CmpOp::Neq, CmpOp::In],
    };
    let op = *ops.choose(rng).expect("non-empty");
    let rhs = if op == CmpOp::In {
        let k = rng.gen_range(1..=2);
        Rhs::Set(lits.choose_multiple(rng, k).cloned().collect())
    } else {
        Rhs::Value(lit)
    };
    Predicate::new(v.id.clone(), op, rhs).expect("generated predicate")
}

fn gen_node(rng: &mut ChaCha8Rng, vars: &[GenVar], depth: u32) -> RuleNode {
    let leaf_p = if depth >= MAX_DEPTH { 1.0 } else { 0.3 + 0.15 * depth as f64 };
    if rng.gen_bool(leaf_p) {
        let v = vars.choose(rng).expect("non-empty");
        return RuleNode::Leaf(gen_predicate(rng, v));
    }
    match rng.gen_range(0..3) {
        0 | 1 => {
            let n = rng.gen_range(2..=3);
            let children = (0..n).map(|_| gen_node(rng, vars, depth + 1)).collect();
            if rng.gen_bool(0.5) {
                RuleNode::All(children)
            } else {
                RuleNode::Any(children)
            }
        }
        _ => {
            let g = vars.choose(rng).expect("non-empty");
            let k = rng.gen_range(1..=2);
            let branches = g
                .domain
                .literals()
                .choose_multiple(rng, k)
                .cloned()
                .map(|key| (key, gen_node(rng, vars, depth + 1)))
                .collect();
            let default = rng.gen_bool(0.5).then(|| Box::new(gen_node(rng, vars, depth + 1)));
            RuleNode::Guard {
                var: g.id.clone(),
                branches,
                default,
            }
        }
    }
}

fn narrowed_candidate(root: &RuleNode) -> Option<RuleNode> {
    let full = rgate_core::policy::reachable_vars(root);
    let children = match root {
        RuleNode::All(c) | RuleNode::Any(c) => c,
        _ => return None,
    };
    children
        .iter()
        .find(|c| rgate_core::policy::reachable_vars(c).len() < full.len())
        .cloned()
}

fn gen_rule(rng: &mut ChaCha8Rng, vars: &[GenVar], id: usize) -> Option<ConsistencyRule> {
    if vars.len() < 2 {
        return None;
    }
    let pair: Vec<&GenVar> = vars.choose_multiple(rng, 2).collect();
    let preds = pair.iter().map(|v| {
        let lit = v.domain.literals().choose(rng).expect("non-empty").clone();
        Predicate::new(v.id.clone(), CmpOp::Eq, Rhs::Value(lit)).expect("generated predicate")
    });
    let preds: Vec<Predicate> = preds.collect();
    let [a, b]: [Predicate; 2] = preds.try_into().ok()?;
    ConsistencyRule::new(format!("r{id}"), vec![pair[0].id.clone(), pair[1].id.clone()], [a, b]).ok()
}

fn gen_case_with(rng: &mut ChaCha8Rng, seed: u64, shape: SpecShape) -> GeneratedCase {
    let vars = gen_vars(rng, shape.max_vars);
    let root = gen_node(rng, &vars, 0);
    let mut spec = AuthoritySpec::new(CLASS, root);
    if shape.narrowing && rng.gen_bool(0.3) {
        if let Some(n) = narrowed_candidate(&spec.root) {
            spec.narrowed.push((NARROW_SCOPE.to_string(), n));
        }
    }
    let rules = if shape.rules && rng.gen_bool(0.25) {
        gen_rule(rng, &vars, 0).into_iter().collect()
    } else {
        Vec::new()
    };
    let policies = PolicySet::from_parts(vec![spec], Vec::new(), rules).expect("generated policy is valid");
    GeneratedCase { seed, vars, policies }
}

pub fn gen_case(seed: u64, shape: SpecShape) -> GeneratedCase {
    gen_case_with(&mut rng(seed), seed, shape)
}

fn gen_observation(rng: &mut ChaCha8Rng, v: &GenVar, theta: f64) -> Option<Observation> {
    let r: f64 = rng.gen();
    let lit = v.domain.literals().choose(rng).expect("non-empty").clone();
    if r < 0.2 {
        None
    } else if r < 0.35 {
        Some(Observation { value: lit, u: 0.5 })
    } else {
        let u = *[0.0, 0.1, theta].choose(rng).expect("non-empty");
        Some(Observation { value: lit, u })
    }
}

/// A random snapshot over `vars` at tick 0.
pub fn gen_snapshot(seed: u64, vars: &[GenVar], theta: f64) -> StateSnapshot {
    let mut rng = rng(seed);
    let obs = vars
        .iter()
        .filter_map(|v| gen_observation(&mut rng, v, theta).map(|o| (v.id.clone(), o)))
        .collect();
    StateSnapshot::new(0, obs)
}

/// Every combination of unobserved, uncertain (u = 0.5) and each literal at
/// u = 0, over all of `vars`.
pub fn enumerate_states(vars: &[GenVar]) -> Vec<StateSnapshot> {
    let mut out = vec![BTreeMap::new()];
    for v in vars {
        let lits = v.domain.literals();
        let mut options: Vec<Option<Observation>> = vec![None, Some(Observation { value: lits[0].clone(), u: 0.5 })];
        options.extend(lits.into_iter().map(|l| Some(Observation::certain(l))));
        out = out
            .into_iter()
            .flat_map(|m: BTreeMap<VariableId, Observation>| {
                options.iter().map(move |o| {
                    let mut m = m.clone();
                    if let Some(o) = o {
                        m.insert(v.id.clone(), o.clone());
                    }
                    m
                })
            })
            .collect();
    }
    out.into_iter().map(|m| StateSnapshot::new(0, m)).collect()
}

/// Random candidates drawn from the spec's variables and two it never uses.
pub fn gen_prior(seed: u64, vars: &[GenVar]) -> PolicyPrior {
    let mut rng = rng(seed);
    let mut pool: Vec<VariableId> = vars.iter().map(|v| v.id.clone()).collect();
    pool.push(VariableId::new("p0").expect("id"));
    pool.push(VariableId::new("p1").expect("id"));
    let k = rng.gen_range(1..=pool.len());
    let mut candidates: Vec<VariableId> = pool.choose_multiple(&mut rng, k).cloned().collect();
    candidates.shuffle(&mut rng);
    PolicyPrior {
        action_class: CLASS.to_string(),
        candidates,
    }
}

fn truth(value: VariableValue, u: f64, observable: bool) -> TruthEntry {
    TruthEntry {
        value,
        u,
        observable,
        acquire: None,
    }
}

fn scenario(seed: u64, horizon: Tick, max: u32, initial: BTreeMap<VariableId, TruthEntry>, mut events: Vec<TimedEvent>, policies: PolicySet) -> Scenario {
    events.sort_by_key(|e| e.tick);
    let sc = Scenario {
        seed,
        horizon,
        config: ScenarioConfig {
            theta_auth: None,
            max_recovery_attempts: Some(max),
        },
        initial_state: initial,
        events,
        policies,
    };
    sc.validate().expect("generated scenario is valid");
    sc
}

fn submit(tick: Tick, id: String, execute_at: Option<Tick>, scope: Option<String>) -> TimedEvent {
    TimedEvent {
        tick,
        event: Event::Submit(Submit {
            action_id: id,
            action_class: CLASS.to_string(),
            scope_label: scope,
            execute_at,
        }),
    }
}

#[derive(Debug, Clone)]
pub struct LivenessCase {
    pub scenario: Scenario,
    /// Tick from which every variable is resolved and stable.
    pub settle_tick: Tick,
}

/// One action submitted at tick 0 under a schedule that resolves every
/// variable by `settle_tick` (at most 20) and leaves it alone afterwards.
pub fn liveness_scenario(seed: u64) -> LivenessCase {
    let mut rng = rng(seed);
    let case = gen_case_with(&mut rng, seed, SpecShape { rules: false, ..SpecShape::default() });
    let settle: Tick = rng.gen_range(0..=20);
    let mut initial = BTreeMap::new();
    let mut events = Vec::new();
    for v in &case.vars {
        let lits = v.domain.literals();
        let fin = lits.choose(&mut rng).expect("non-empty").clone();
        let fin_u = *[0.0, 0.1, 0.2].choose(&mut rng).expect("non-empty");
        if settle == 0 || rng.gen_bool(0.3) {
            initial.insert(v.id.clone(), truth(fin, fin_u, true));
            continue;
        }
        let other = lits.choose(&mut rng).expect("non-empty").clone();
        let entry = match rng.gen_range(0..3) {
            0 => truth(other, 0.0, false),
            1 => truth(other, 0.5, true),
            _ => truth(other, 0.0, true),
        };
        initial.insert(v.id.clone(), entry);
        let at = rng.gen_range(1..=settle);
        for _ in 0..rng.gen_range(0..3) {
            let t = rng.gen_range(0..at);
            let noise = lits.choose(&mut rng).expect("non-empty").clone();
            events.push(TimedEvent { tick: t, event: Event::SetValue { var: v.id.clone(), value: noise } });
        }
        events.push(TimedEvent { tick: at, event: Event::SetValue { var: v.id.clone(), value: fin } });
        events.push(TimedEvent { tick: at, event: Event::SetObservable { var: v.id.clone(), u: Some(fin_u) } });
    }
    events.insert(0, submit(0, "act-0".into(), None, None));
    LivenessCase {
        scenario: scenario(seed, settle + 30, 25, initial, events, case.policies),
        settle_tick: settle,
    }
}

/// One action whose tree is `all` with a first leaf on `v0`, which is never
/// observable. Returns the scenario and its recovery bound.
pub fn permanent_unobservable_scenario(seed: u64) -> (Scenario, u32) {
    let mut rng = rng(seed);
    let vars = gen_vars(&mut rng, 6);
    let blocker = &vars[0];
    let root = RuleNode::All(vec![RuleNode::Leaf(gen_predicate(&mut rng, blocker)), gen_node(&mut rng, &vars, 1)]);
    let policies = PolicySet::from_parts(vec![AuthoritySpec::new(CLASS, root)], Vec::new(), Vec::new()).expect("valid");
    let max = rng.gen_range(1..=10);
    let horizon = Tick::from(max) + 5;
    let mut initial = BTreeMap::new();
    let mut events = vec![submit(0, "act-0".into(), None, None)];
    for (i, v) in vars.iter().enumerate() {
        let lit = v.domain.literals().choose(&mut rng).expect("non-empty").clone();
        initial.insert(v.id.clone(), truth(lit, 0.0, i != 0));
        for _ in 0..rng.gen_range(0..3) {
            let value = v.domain.literals().choose(&mut rng).expect("non-empty").clone();
            events.push(TimedEvent { tick: rng.gen_range(1..=horizon), event: Event::SetValue { var: v.id.clone(), value } });
        }
    }
    (scenario(seed, horizon, max, initial, events, policies), max)
}

fn random_mutation(rng: &mut ChaCha8Rng, v: &GenVar) -> Event {
    let var = v.id.clone();
    match rng.gen_range(0..6) {
        0..=2 => Event::SetValue {
            var,
            value: v.domain.literals().choose(rng).expect("non-empty").clone(),
        },
        3 => Event::SetUncertainty {
            var,
            u: *[0.0, 0.1, 0.2, 0.35, 0.5].choose(rng).expect("non-empty"),
        },
        4 => Event::SetUnobservable { var },
        _ => Event::SetObservable {
            var,
            u: rng.gen_bool(0.5).then(|| *[0.0, 0.1].choose(rng).expect("non-empty")),
        },
    }
}

/// Several actions with deferred execution over a randomly mutating state.
pub fn drift_scenario(seed: u64) -> Scenario {
    let mut rng = rng(seed);
    let case = gen_case_with(&mut rng, seed, SpecShape::default());
    let horizon: Tick = 15;
    let mut initial = BTreeMap::new();
    for v in &case.vars {
        let lit = v.domain.literals().choose(&mut rng).expect("non-empty").clone();
        let u = *[0.0, 0.1, 0.2, 0.5].choose(&mut rng).expect("non-empty");
        let mut entry = truth(lit, u, rng.gen_bool(0.85));
        if rng.gen_bool(0.3) {
            entry.acquire = Some(Acquire {
                u: *[0.0, 0.1].choose(&mut rng).expect("non-empty"),
                delay: rng.gen_range(0..=2),
            });
        }
        initial.insert(v.id.clone(), entry);
    }
    let mut events = Vec::new();
    for t in 1..=horizon {
        if rng.gen_bool(0.5) {
            for _ in 0..rng.gen_range(1..=2) {
                let v = case.vars.choose(&mut rng).expect("non-empty");
                events.push(TimedEvent { tick: t, event: random_mutation(&mut rng, v) });
            }
        }
    }
    let has_narrow = case.spec().tree_for(Some(NARROW_SCOPE)).is_some();
    for k in 0..4 {
        let at = rng.gen_range(0..10);
        let exec = at + rng.gen_range(0..=4);
        let scope = (has_narrow && rng.gen_bool(0.2)).then(|| NARROW_SCOPE.to_string());
        events.push(submit(at, format!("act-{k}"), Some(exec), scope));
    }
    scenario(seed, horizon, 3, initial, events, case.policies)
}

/// Five attempts per tick for 200 ticks against a three-variable transfer
/// policy whose risk signal flickers in and out of resolution.
pub fn sampling_scenario(seed: u64, policies: PolicySet, class: &str) -> Scenario {
    let mut rng = rng(seed);
    let x1 = VariableId::new("x1").expect("id");
    let x2 = VariableId::new("x2").expect("id");
    let x3 = VariableId::new("x3").expect("id");
    let initial: BTreeMap<_, _> = [
        (x1, truth(VariableValue::enum_tag("active"), 0.0, true)),
        (x2.clone(), truth(VariableValue::Number(1000.into()), 0.0, true)),
        (x3.clone(), truth(VariableValue::enum_tag("low"), 0.1, true)),
    ]
    .into_iter()
    .collect();
    let mut events = Vec::new();
    let mut risky = false;
    for t in 0..200u64 {
        for k in 0..5 {
            events.push(TimedEvent {
                tick: t,
                event: Event::Submit(Submit {
                    action_id: format!("a{t}-{k}"),
                    action_class: class.to_string(),
                    scope_label: None,
                    execute_at: None,
                }),
            });
        }
        let flip = if risky { rng.gen_bool(0.4) } else { rng.gen_bool(0.15) };
        if flip {
            risky = !risky;
            let u = if risky { 0.35 } else { 0.1 };
            events.push(TimedEvent { tick: t + 1, event: Event::SetUncertainty { var: x3.clone(), u } });
        }
        if rng.gen_bool(0.05) {
            let amount: i64 = if rng.gen_bool(0.5) { 200 } else { 1000 };
            events.push(TimedEvent {
                tick: t + 1,
                event: Event::SetValue { var: x2.clone(), value: VariableValue::Number(amount.into()) },
            });
        }
    }
    scenario(seed, 220, 5, initial, events, policies)
}
