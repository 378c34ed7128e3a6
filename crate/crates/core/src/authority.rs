//! Constructibility and three-valued authority.
//!
//! Authority is evaluated only when the resolved dependency set is
//! observable, closed and consistent. Otherwise it is undefined.

use serde::{Deserialize, Deserializer, Serialize};

use crate::policy::{PolicyPrior, Predicate, RuleNode};
use crate::resolver::{resolve_with_value, ResolutionResult, Tri, UnresolvedCause};
use crate::state::{lookup, ObservationStatus, StateSnapshot, Tick, VariableId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthorityState {
    True,
    False,
    Undefined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    UnobservedDependency { var: VariableId },
    UncertainDependency { var: VariableId, u: f64 },
    OpenGuard { var: VariableId },
    InconsistentDependency { var: VariableId, detail: String },
    ConstraintFailed { node_path: Vec<usize>, detail: String },
}

impl Reason {
    pub fn is_undefined_cause(&self) -> bool {
        !matches!(self, Reason::ConstraintFailed { .. })
    }

    pub fn var(&self) -> Option<&VariableId> {
        match self {
            Reason::UnobservedDependency { var }
            | Reason::UncertainDependency { var, .. }
            | Reason::OpenGuard { var }
            | Reason::InconsistentDependency { var, .. } => Some(var),
            Reason::ConstraintFailed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuthorityOutcome {
    pub state: AuthorityState,
    pub reasons: Vec<Reason>,
    pub resolution: ResolutionResult,
    pub snapshot_timestamp: Tick,
}

/// Two predicates over `scope` that must not hold together.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyRule {
    pub id: String,
    pub scope: Vec<VariableId>,
    pub contradiction: [Predicate; 2],
}

impl ConsistencyRule {
    pub fn new(id: impl Into<String>, scope: Vec<VariableId>, contradiction: [Predicate; 2]) -> Result<Self, String> {
        let id = id.into();
        if scope.is_empty() {
            return Err(format!("consistency rule {id:?}: scope must be non-empty"));
        }
        for p in &contradiction {
            if !scope.contains(&p.var) {
                return Err(format!("consistency rule {id:?}: {} is outside the scope", p.var));
            }
        }
        Ok(Self { id, scope, contradiction })
    }

    /// Fires when the whole scope was required, every scope variable is
    /// resolved, and both predicates hold.
    pub fn fires(&self, res: &ResolutionResult, snapshot: &StateSnapshot, theta: f64) -> bool {
        let in_scope = self.scope.iter().all(|v| res.required.contains(v));
        let resolved = self
            .scope
            .iter()
            .all(|v| crate::state::is_resolved(&lookup(snapshot, v), theta));
        in_scope
            && resolved
            && self.contradiction.iter().all(|p| match lookup(snapshot, &p.var) {
                ObservationStatus::Observed(o) => p.holds(&o.value),
                ObservationStatus::Unobserved => false,
            })
    }
}

impl<'de> Deserialize<'de> for ConsistencyRule {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            id: String,
            scope: Vec<VariableId>,
            contradiction: [Predicate; 2],
        }
        let raw = Raw::deserialize(d)?;
        ConsistencyRule::new(raw.id, raw.scope, raw.contradiction).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Constructibility {
    Constructible,
    NotConstructible(Vec<Reason>),
}

pub fn check_constructible(
    res: &ResolutionResult,
    snapshot: &StateSnapshot,
    rules: &[ConsistencyRule],
    theta: f64,
) -> Constructibility {
    let mut reasons = Vec::new();
    for (var, cause) in &res.unresolved {
        let reason = if res.open_guards.contains(var) {
            Reason::OpenGuard { var: var.clone() }
        } else {
            match cause {
                UnresolvedCause::Unobserved => Reason::UnobservedDependency { var: var.clone() },
                UnresolvedCause::Uncertain { u } => Reason::UncertainDependency { var: var.clone(), u: *u },
            }
        };
        reasons.push(reason);
    }
    for rule in rules {
        if rule.fires(res, snapshot, theta) {
            for var in &rule.scope {
                reasons.push(Reason::InconsistentDependency {
                    var: var.clone(),
                    detail: format!("rule {}", rule.id),
                });
            }
        }
    }
    if reasons.is_empty() {
        Constructibility::Constructible
    } else {
        Constructibility::NotConstructible(reasons)
    }
}

/// Resolves, checks constructibility, and evaluates `root` when constructible.
pub fn reconstruct_authority(
    root: &RuleNode,
    snapshot: &StateSnapshot,
    prior: &PolicyPrior,
    rules: &[ConsistencyRule],
    theta: f64,
) -> AuthorityOutcome {
    let (resolution, walk_value) = resolve_with_value(root, snapshot, prior, theta);
    let (state, reasons) = match check_constructible(&resolution, snapshot, rules, theta) {
        Constructibility::NotConstructible(reasons) => (AuthorityState::Undefined, reasons),
        Constructibility::Constructible => {
            let mut failed = Vec::new();
            let holds = evaluate(root, snapshot, &mut Vec::new(), &mut failed);
            debug_assert_eq!(walk_value == Tri::True, holds);
            if holds {
                (AuthorityState::True, Vec::new())
            } else {
                (AuthorityState::False, failed)
            }
        }
    };
    AuthorityOutcome {
        state,
        reasons,
        resolution,
        snapshot_timestamp: snapshot.timestamp(),
    }
}

/// Two-valued evaluation on a constructible snapshot. Collects every failing
/// leaf and unmatched guard inside false subtrees.
fn evaluate(node: &RuleNode, snapshot: &StateSnapshot, path: &mut Vec<usize>, failed: &mut Vec<Reason>) -> bool {
    match node {
        RuleNode::Leaf(p) => {
            let ok = matches!(lookup(snapshot, &p.var), ObservationStatus::Observed(o) if p.holds(&o.value));
            if !ok {
                failed.push(Reason::ConstraintFailed {
                    node_path: path.clone(),
                    detail: p.to_string(),
                });
            }
            ok
        }
        RuleNode::All(children) => {
            let mut ok = true;
            for (i, child) in children.iter().enumerate() {
                path.push(i);
                ok &= evaluate(child, snapshot, path, failed);
                path.pop();
            }
            ok
        }
        RuleNode::Any(children) => {
            let mark = failed.len();
            for (i, child) in children.iter().enumerate() {
                path.push(i);
                let ok = evaluate(child, snapshot, path, failed);
                path.pop();
                if ok {
                    failed.truncate(mark);
                    return true;
                }
            }
            false
        }
        RuleNode::Guard { var, branches, default } => {
            let value = match lookup(snapshot, var) {
                ObservationStatus::Observed(o) => o.value,
                ObservationStatus::Unobserved => unreachable!("guard resolved on constructible snapshot"),
            };
            let chosen = match branches.iter().position(|(k, _)| *k == value) {
                Some(i) => Some((i, &branches[i].1)),
                None => default.as_deref().map(|d| (branches.len(), d)),
            };
            match chosen {
                Some((i, child)) => {
                    path.push(i);
                    let ok = evaluate(child, snapshot, path, failed);
                    path.pop();
                    ok
                }
                None => {
                    failed.push(Reason::ConstraintFailed {
                        node_path: path.clone(),
                        detail: format!("{var} = {value} matches no branch"),
                    });
                    false
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{parse_policy, CmpOp, Rhs};
    use crate::state::{Observation, VariableValue};
    use proptest::prelude::*;

    fn var(s: &str) -> VariableId {
        VariableId::new(s).unwrap()
    }

    fn worked_root() -> RuleNode {
        parse_policy(
            r#"{"policies":[{"action_class":"transfer","root":{"all":[
              {"leaf":{"var":"x1","op":"eq","rhs":{"enum":"active"}}},
              {"leaf":{"var":"x2","op":"le","rhs":500}},
              {"leaf":{"var":"x3","op":"in","rhs":[{"enum":"low"},{"enum":"medium"}]}}]}}]}"#,
        )
        .unwrap()
        .spec("transfer")
        .unwrap()
        .root
        .clone()
    }

    fn worked_snapshot(amount: i64, u3: f64) -> StateSnapshot {
        StateSnapshot::new(
            1,
            [
                (var("x1"), Observation::certain(VariableValue::enum_tag("active"))),
                (var("x2"), Observation::certain(VariableValue::Number(amount.into()))),
                (var("x3"), Observation::new(VariableValue::enum_tag("low"), u3).unwrap()),
            ]
            .into_iter()
            .collect(),
        )
    }

    fn run(s: &StateSnapshot) -> AuthorityOutcome {
        reconstruct_authority(&worked_root(), s, &PolicyPrior::default(), &[], 0.2)
    }

    #[test]
    fn worked_scenarios() {
        let a = run(&worked_snapshot(100, 0.1));
        assert_eq!(a.state, AuthorityState::True);
        assert!(a.reasons.is_empty());

        let b = run(&worked_snapshot(900, 0.1));
        assert_eq!(b.state, AuthorityState::False);
        assert!(matches!(&b.reasons[..], [Reason::ConstraintFailed { node_path, .. }] if node_path == &vec![1]));

        let c = run(&worked_snapshot(100, 0.35));
        assert_eq!(c.state, AuthorityState::Undefined);
        assert_eq!(c.reasons, vec![Reason::UncertainDependency { var: var("x3"), u: 0.35 }]);
    }

    #[test]
    fn constructibility() {
        let s = worked_snapshot(100, 0.1);
        let (res, _) = resolve_with_value(&worked_root(), &s, &PolicyPrior::default(), 0.2);
        assert_eq!(check_constructible(&res, &s, &[], 0.2), Constructibility::Constructible);

        let s = worked_snapshot(100, 0.35);
        let (res, _) = resolve_with_value(&worked_root(), &s, &PolicyPrior::default(), 0.2);
        assert_eq!(
            check_constructible(&res, &s, &[], 0.2),
            Constructibility::NotConstructible(vec![Reason::UncertainDependency { var: var("x3"), u: 0.35 }])
        );

        let empty = ResolutionResult {
            required: vec![],
            authority_defining: vec![],
            discovery: vec![],
            promotions: vec![],
            open_guards: vec![],
            unresolved: vec![],
        };
        assert_eq!(check_constructible(&empty, &s, &[], 0.2), Constructibility::Constructible);
    }

    #[test]
    fn inconsistency_is_undefined_not_false() {
        let p = |v: &str, op, n: i64| Predicate::new(var(v), op, Rhs::Value(VariableValue::Number(n.into()))).unwrap();
        let rule = ConsistencyRule::new("big-and-small", vec![var("x2")], [p("x2", CmpOp::Ge, 100), p("x2", CmpOp::Le, 100)]).unwrap();
        let out = reconstruct_authority(&worked_root(), &worked_snapshot(100, 0.1), &PolicyPrior::default(), std::slice::from_ref(&rule), 0.2);
        assert_eq!(out.state, AuthorityState::Undefined);
        assert!(matches!(&out.reasons[..], [Reason::InconsistentDependency { var: v, .. }] if *v == var("x2")));

        let outside = ConsistencyRule::new("other", vec![var("x9")], [p("x9", CmpOp::Ge, 0), p("x9", CmpOp::Le, 0)]).unwrap();
        let out = reconstruct_authority(&worked_root(), &worked_snapshot(100, 0.1), &PolicyPrior::default(), &[outside], 0.2);
        assert_eq!(out.state, AuthorityState::True, "rule outside the required set never fires");

        assert!(ConsistencyRule::new("empty", vec![], [p("x", CmpOp::Eq, 1), p("x", CmpOp::Eq, 2)]).is_err());
    }

    #[test]
    fn unmatched_guard_without_default_fails() {
        let root = parse_policy(
            r##"{"policies":[{"action_class":"a","root":{"guard":{"var":"g","branches":{
              "#a":{"leaf":{"var":"x","op":"eq","rhs":1}}}}}}]}"##,
        )
        .unwrap()
        .spec("a")
        .unwrap()
        .root
        .clone();
        let s = StateSnapshot::new(1, [(var("g"), Observation::certain(VariableValue::enum_tag("b")))].into_iter().collect());
        let out = reconstruct_authority(&root, &s, &PolicyPrior::default(), &[], 0.2);
        assert_eq!(out.state, AuthorityState::False);
        assert_eq!(out.resolution.required, vec![var("g")]);
    }

    proptest! {
        // Resolving exactly the reported variables removes those reasons.
        #[test]
        fn monotone_recovery(amount in 0i64..1000, u1 in 0.0f64..=1.0, u2 in 0.0f64..=1.0, u3 in 0.0f64..=1.0, drop in proptest::bool::ANY) {
            let mut map: std::collections::BTreeMap<_, _> = [
                (var("x1"), Observation::new(VariableValue::enum_tag("active"), u1).unwrap()),
                (var("x2"), Observation::new(VariableValue::Number(amount.into()), u2).unwrap()),
                (var("x3"), Observation::new(VariableValue::enum_tag("low"), u3).unwrap()),
            ].into_iter().collect();
            let full = map.clone();
            if drop { map.remove(&var("x2")); }
            let s = StateSnapshot::new(1, map);
            let out = run(&s);
            prop_assume!(out.state == AuthorityState::Undefined);
            let fixes: Vec<_> = out.reasons.iter().filter_map(Reason::var).map(|v| {
                let o = full[v].clone();
                (v.clone(), ObservationStatus::Observed(Observation { u: 0.0, ..o }))
            }).collect();
            let s2 = crate::state::apply_mutation(&s, 2, fixes).unwrap();
            let again = run(&s2);
            for r in &out.reasons {
                prop_assert!(!again.reasons.contains(r));
            }
        }
    }
}
