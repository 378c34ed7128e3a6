//! Brute-force reference evaluator.
//!
//! Shares no evaluation code with the gate. Every guard branch and every
//! disjunct is evaluated eagerly; the dependency set is then derived from the
//! resulting values. Predicates and the uncertainty threshold are
//! re-implemented here.

use std::collections::BTreeSet;

use rgate_core::authority::ConsistencyRule;
use rgate_core::policy::{CmpOp, Predicate, Rhs, RuleNode};
use rgate_core::state::{StateSnapshot, VariableId, VariableValue};
use serde::Serialize;

/// Largest number of distinct variables the oracle will evaluate.
pub const VARIABLE_BUDGET: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Exec,
    Deny,
    Halt,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BudgetExceeded(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum K {
    T,
    F,
    U,
}

struct Meaning {
    value: K,
    deps: BTreeSet<VariableId>,
    open: BTreeSet<VariableId>,
}

struct Ctx<'a> {
    snapshot: &'a StateSnapshot,
    theta: f64,
}

impl Ctx<'_> {
    /// Observed value when the observation is reliable enough.
    fn reliable(&self, var: &VariableId) -> Option<&VariableValue> {
        let obs = self.snapshot.observations().get(var)?;
        if obs.u > self.theta {
            None
        } else {
            Some(&obs.value)
        }
    }

    fn meaning(&self, node: &RuleNode) -> Meaning {
        match node {
            RuleNode::Leaf(p) => Meaning {
                value: match self.reliable(&p.var) {
                    None => K::U,
                    Some(v) if satisfies(p, v) => K::T,
                    Some(_) => K::F,
                },
                deps: BTreeSet::from([p.var.clone()]),
                open: BTreeSet::new(),
            },
            RuleNode::All(children) => {
                let parts: Vec<Meaning> = children.iter().map(|c| self.meaning(c)).collect();
                let value = if parts.iter().any(|m| m.value == K::F) {
                    K::F
                } else if parts.iter().any(|m| m.value == K::U) {
                    K::U
                } else {
                    K::T
                };
                merge(value, &parts)
            }
            RuleNode::Any(children) => {
                let parts: Vec<Meaning> = children.iter().map(|c| self.meaning(c)).collect();
                match parts.iter().position(|m| m.value == K::T) {
                    Some(k) => merge(K::T, &parts[..=k]),
                    None => {
                        let value = if parts.iter().any(|m| m.value == K::U) { K::U } else { K::F };
                        merge(value, &parts)
                    }
                }
            }
            RuleNode::Guard { var, branches, default } => {
                let arms: Vec<(Option<&VariableValue>, Meaning)> = branches
                    .iter()
                    .map(|(k, n)| (Some(k), self.meaning(n)))
                    .chain(default.iter().map(|d| (None, self.meaning(d))))
                    .collect();
                let mut m = Meaning {
                    value: K::U,
                    deps: BTreeSet::from([var.clone()]),
                    open: BTreeSet::new(),
                };
                let Some(g) = self.reliable(var) else {
                    m.open.insert(var.clone());
                    return m;
                };
                let selected = arms
                    .iter()
                    .find(|(k, _)| k.is_some_and(|k| same_value(k, g)))
                    .or_else(|| arms.iter().find(|(k, _)| k.is_none()));
                match selected {
                    Some((_, arm)) => {
                        m.value = arm.value;
                        m.deps.extend(arm.deps.iter().cloned());
                        m.open.extend(arm.open.iter().cloned());
                    }
                    None => m.value = K::F,
                }
                m
            }
        }
    }
}

fn merge(value: K, parts: &[Meaning]) -> Meaning {
    let mut m = Meaning {
        value,
        deps: BTreeSet::new(),
        open: BTreeSet::new(),
    };
    for p in parts {
        m.deps.extend(p.deps.iter().cloned());
        m.open.extend(p.open.iter().cloned());
    }
    m
}

fn same_value(a: &VariableValue, b: &VariableValue) -> bool {
    match (a, b) {
        (VariableValue::Bool(x), VariableValue::Bool(y)) => x == y,
        (VariableValue::Number(x), VariableValue::Number(y)) => x.cmp(y).is_eq(),
        (VariableValue::Str(x), VariableValue::Str(y)) => x == y,
        (VariableValue::Enum(x), VariableValue::Enum(y)) => x == y,
        _ => false,
    }
}

fn satisfies(p: &Predicate, v: &VariableValue) -> bool {
    match &p.rhs {
        Rhs::Set(items) => items.iter().any(|i| same_value(i, v)),
        Rhs::Value(r) => match p.op {
            CmpOp::Eq => same_value(v, r),
            CmpOp::Neq => !same_value(v, r),
            op => {
                let (VariableValue::Number(a), VariableValue::Number(b)) = (v, r) else {
                    return false;
                };
                let ord = a.cmp(b);
                match op {
                    CmpOp::Lt => ord.is_lt(),
                    CmpOp::Le => ord.is_le(),
                    CmpOp::Gt => ord.is_gt(),
                    CmpOp::Ge => ord.is_ge(),
                    _ => false,
                }
            }
        },
    }
}

fn all_vars(node: &RuleNode, out: &mut BTreeSet<VariableId>) {
    match node {
        RuleNode::Leaf(p) => {
            out.insert(p.var.clone());
        }
        RuleNode::All(c) | RuleNode::Any(c) => c.iter().for_each(|n| all_vars(n, out)),
        RuleNode::Guard { var, branches, default } => {
            out.insert(var.clone());
            for (_, n) in branches {
                all_vars(n, out);
            }
            if let Some(d) = default {
                all_vars(d, out);
            }
        }
    }
}

/// Observable, closed and consistent over the dependency set, then the
/// three-valued result.
pub fn oracle_decide(
    root: &RuleNode,
    snapshot: &StateSnapshot,
    rules: &[ConsistencyRule],
    theta: f64,
) -> Result<Verdict, BudgetExceeded> {
    let mut vars = BTreeSet::new();
    all_vars(root, &mut vars);
    if vars.len() > VARIABLE_BUDGET {
        return Err(BudgetExceeded(vars.len()));
    }
    let ctx = Ctx { snapshot, theta };
    let m = ctx.meaning(root);
    let observable = m.deps.iter().all(|v| ctx.reliable(v).is_some());
    let closed = m.open.is_empty();
    let consistent = !rules.iter().any(|r| {
        r.scope.iter().all(|v| m.deps.contains(v) && ctx.reliable(v).is_some())
            && r.contradiction.iter().all(|p| ctx.reliable(&p.var).is_some_and(|v| satisfies(p, v)))
    });
    if !(observable && closed && consistent) {
        return Ok(Verdict::Halt);
    }
    Ok(match m.value {
        K::T => Verdict::Exec,
        K::F => Verdict::Deny,
        K::U => Verdict::Halt,
    })
}

/// The dependency set the oracle derives for `root`.
pub fn oracle_dependencies(root: &RuleNode, snapshot: &StateSnapshot, theta: f64) -> BTreeSet<VariableId> {
    Ctx { snapshot, theta }.meaning(root).deps
}

#[cfg(test)]
mod tests {
    use super::*;
    use rgate_core::policy::parse_policy;
    use rgate_core::state::Observation;

    fn var(s: &str) -> VariableId {
        VariableId::new(s).unwrap()
    }

    #[test]
    fn any_dependencies_stop_at_first_true() {
        let root = parse_policy(
            r#"{"policies":[{"action_class":"a","root":{"any":[
              {"leaf":{"var":"a","op":"eq","rhs":1}},
              {"leaf":{"var":"b","op":"eq","rhs":1}},
              {"leaf":{"var":"c","op":"eq","rhs":1}}]}}]}"#,
        )
        .unwrap()
        .spec("a")
        .unwrap()
        .root
        .clone();
        let s = StateSnapshot::new(
            0,
            [(var("b"), Observation::certain(VariableValue::Number(1.into())))].into_iter().collect(),
        );
        assert_eq!(oracle_dependencies(&root, &s, 0.2), BTreeSet::from([var("a"), var("b")]));
        assert_eq!(oracle_decide(&root, &s, &[], 0.2), Ok(Verdict::Halt));
    }

    #[test]
    fn budget() {
        let leaves: Vec<String> = (0..9)
            .map(|i| format!(r#"{{"leaf":{{"var":"v{i}","op":"eq","rhs":1}}}}"#))
            .collect();
        let text = format!(r#"{{"policies":[{{"action_class":"a","root":{{"all":[{}]}}}}]}}"#, leaves.join(","));
        let root = parse_policy(&text).unwrap().spec("a").unwrap().root.clone();
        assert_eq!(oracle_decide(&root, &StateSnapshot::empty(0), &[], 0.2), Err(BudgetExceeded(9)));
    }
}
