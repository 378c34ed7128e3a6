//! Policy documents: authority specs as guarded rule trees, plus priors.
//!
//! Document shape:
//!
//! ```json
//! {
//!   "policies": [{"action_class": "transfer", "root": {"all": [...]}, "narrowed": [...]}],
//!   "priors": [{"action_class": "transfer", "candidates": ["x1"]}],
//!   "consistency_rules": []
//! }
//! ```
//!
//! Nodes are `{"leaf": {var, op, rhs}}`, `{"all": [..]}`, `{"any": [..]}` or
//! `{"guard": {var, branches: {literal: node}, default?: node}}`. Guard keys use
//! the literal syntax of [`VariableValue::parse_literal`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::de::{self, MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::authority::ConsistencyRule;
use crate::state::{is_identifier_path, VariableId, VariableValue};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("line {line} column {column}: {msg}")]
    Syntax { line: usize, column: usize, msg: String },
    #[error("duplicate action_class {0:?}")]
    DuplicateActionClass(String),
    #[error("invalid action_class {0:?}")]
    InvalidActionClass(String),
    #[error("action_class {class:?}: narrowed scope {scope:?} does not use a strict subset of the root's variables")]
    NarrowedNotStrictSubset { class: String, scope: String },
    #[error("action_class {class:?}: narrowed scope list {reason}")]
    BadNarrowedList { class: String, reason: String },
    #[error("prior for unknown action_class {0:?}")]
    PriorForUnknownClass(String),
    #[error("duplicate prior for action_class {0:?}")]
    DuplicatePrior(String),
    #[error("duplicate consistency rule id {0:?}")]
    DuplicateRuleId(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmpOp {
    Eq,
    Neq,
    Lt,
    Le,
    Gt,
    Ge,
    In,
}

impl CmpOp {
    pub fn is_ordering(self) -> bool {
        matches!(self, CmpOp::Lt | CmpOp::Le | CmpOp::Gt | CmpOp::Ge)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CmpOp::Eq => "eq",
            CmpOp::Neq => "neq",
            CmpOp::Lt => "lt",
            CmpOp::Le => "le",
            CmpOp::Gt => "gt",
            CmpOp::Ge => "ge",
            CmpOp::In => "in",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Rhs {
    Value(VariableValue),
    Set(Vec<VariableValue>),
}

/// `var op rhs` with a literal right-hand side.
#[derive(Debug, Clone, PartialEq)]
pub struct Predicate {
    pub var: VariableId,
    pub op: CmpOp,
    pub rhs: Rhs,
}

impl Predicate {
    pub fn new(var: VariableId, op: CmpOp, rhs: Rhs) -> Result<Self, String> {
        match (&rhs, op) {
            (Rhs::Set(items), CmpOp::In) if items.is_empty() => {
                Err("\"in\" requires a non-empty set".into())
            }
            (Rhs::Set(_), CmpOp::In) => Ok(Self { var, op, rhs }),
            (Rhs::Set(_), _) => Err(format!("operator {:?} takes a single value", op.as_str())),
            (Rhs::Value(_), CmpOp::In) => Err("\"in\" requires an array of values".into()),
            (Rhs::Value(v), op) if op.is_ordering() && v.as_number().is_none() => Err(format!(
                "operator {:?} requires a numeric right-hand side",
                op.as_str()
            )),
            _ => Ok(Self { var, op, rhs }),
        }
    }

    /// Two-valued test against an observed value. Ordering against a
    /// non-number is false; equality across value kinds is false.
    pub fn holds(&self, observed: &VariableValue) -> bool {
        match (&self.rhs, self.op) {
            (Rhs::Set(items), _) => items.contains(observed),
            (Rhs::Value(v), CmpOp::Eq) => observed == v,
            (Rhs::Value(v), CmpOp::Neq) => observed != v,
            (Rhs::Value(v), op) => match (observed.as_number(), v.as_number()) {
                (Some(a), Some(b)) => match op {
                    CmpOp::Lt => a < b,
                    CmpOp::Le => a <= b,
                    CmpOp::Gt => a > b,
                    CmpOp::Ge => a >= b,
                    _ => unreachable!("equality handled above"),
                },
                _ => false,
            },
        }
    }

    fn to_json(&self) -> serde_json::Value {
        let rhs = match &self.rhs {
            Rhs::Value(v) => v.to_json(),
            Rhs::Set(items) => items.iter().map(VariableValue::to_json).collect(),
        };
        serde_json::json!({"var": self.var.as_str(), "op": self.op.as_str(), "rhs": rhs})
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.rhs {
            Rhs::Value(v) => write!(f, "{} {} {}", self.var, self.op.as_str(), v),
            Rhs::Set(items) => {
                let parts: Vec<String> = items.iter().map(|v| v.to_string()).collect();
                write!(f, "{} in {{{}}}", self.var, parts.join(", "))
            }
        }
    }
}

impl<'de> Deserialize<'de> for Predicate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            var: VariableId,
            op: CmpOp,
            rhs: serde_json::Value,
        }
        let raw = Raw::deserialize(d)?;
        let rhs = match &raw.rhs {
            serde_json::Value::Array(items) => Rhs::Set(
                items
                    .iter()
                    .map(VariableValue::from_json)
                    .collect::<Result<_, _>>()
                    .map_err(de::Error::custom)?,
            ),
            other => Rhs::Value(VariableValue::from_json(other).map_err(de::Error::custom)?),
        };
        Predicate::new(raw.var, raw.op, rhs).map_err(de::Error::custom)
    }
}

impl Serialize for Predicate {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

/// Node of the construction rule tree.
#[derive(Debug, Clone, PartialEq)]
pub enum RuleNode {
    Leaf(Predicate),
    All(Vec<RuleNode>),
    Any(Vec<RuleNode>),
    /// Branches keep document order. The default, if any, has path index
    /// `branches.len()`.
    Guard {
        var: VariableId,
        branches: Vec<(VariableValue, RuleNode)>,
        default: Option<Box<RuleNode>>,
    },
}

impl RuleNode {
    pub fn to_json(&self) -> serde_json::Value {
        match self {
            RuleNode::Leaf(p) => serde_json::json!({"leaf": p.to_json()}),
            RuleNode::All(children) => {
                serde_json::json!({"all": children.iter().map(RuleNode::to_json).collect::<Vec<_>>()})
            }
            RuleNode::Any(children) => {
                serde_json::json!({"any": children.iter().map(RuleNode::to_json).collect::<Vec<_>>()})
            }
            RuleNode::Guard { var, branches, default } => {
                let mut map = serde_json::Map::new();
                for (k, node) in branches {
                    map.insert(k.to_literal(), node.to_json());
                }
                let mut g = serde_json::Map::new();
                g.insert("var".into(), var.as_str().into());
                g.insert("branches".into(), serde_json::Value::Object(map));
                if let Some(d) = default {
                    g.insert("default".into(), d.to_json());
                }
                serde_json::json!({"guard": g})
            }
        }
    }

    /// Node at `path`, if the path is valid for this tree.
    pub fn at_path(&self, path: &[usize]) -> Option<&RuleNode> {
        let Some((&first, rest)) = path.split_first() else {
            return Some(self);
        };
        let child = match self {
            RuleNode::Leaf(_) => None,
            RuleNode::All(c) | RuleNode::Any(c) => c.get(first),
            RuleNode::Guard { branches, default, .. } => {
                if first < branches.len() {
                    Some(&branches[first].1)
                } else if first == branches.len() {
                    default.as_deref()
                } else {
                    None
                }
            }
        }?;
        child.at_path(rest)
    }
}

impl Serialize for RuleNode {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum RawNode {
    Leaf(Predicate),
    All(Vec<RuleNode>),
    Any(Vec<RuleNode>),
    Guard(RawGuard),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGuard {
    var: VariableId,
    branches: GuardBranches,
    #[serde(default)]
    default: Option<Box<RuleNode>>,
}

struct GuardBranches(Vec<(VariableValue, RuleNode)>);

impl<'de> Deserialize<'de> for GuardBranches {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = GuardBranches;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map from value literal to rule node")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
                let mut out: Vec<(VariableValue, RuleNode)> = Vec::new();
                while let Some(key) = map.next_key::<String>()? {
                    let literal = VariableValue::parse_literal(&key).map_err(de::Error::custom)?;
                    if out.iter().any(|(k, _)| *k == literal) {
                        return Err(de::Error::custom(format!(
                            "guard branch keyed twice on value {literal}"
                        )));
                    }
                    let node = map.next_value::<RuleNode>()?;
                    out.push((literal, node));
                }
                if out.is_empty() {
                    return Err(de::Error::custom("empty guard branch map"));
                }
                Ok(GuardBranches(out))
            }
        }
        d.deserialize_map(V)
    }
}

impl TryFrom<RawNode> for RuleNode {
    type Error = String;
    fn try_from(raw: RawNode) -> Result<Self, String> {
        Ok(match raw {
            RawNode::Leaf(p) => RuleNode::Leaf(p),
            RawNode::All(c) if c.is_empty() => return Err("\"all\" requires at least one child".into()),
            RawNode::Any(c) if c.is_empty() => return Err("\"any\" requires at least one child".into()),
            RawNode::All(c) => RuleNode::All(c),
            RawNode::Any(c) => RuleNode::Any(c),
            RawNode::Guard(g) => RuleNode::Guard {
                var: g.var,
                branches: g.branches.0,
                default: g.default,
            },
        })
    }
}

impl<'de> Deserialize<'de> for RuleNode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        RawNode::deserialize(d)?.try_into().map_err(de::Error::custom)
    }
}

/// The construction function for one action class.
#[derive(Debug, Clone, PartialEq)]
pub struct AuthoritySpec {
    pub action_class: String,
    pub root: RuleNode,
    /// Widest first.
    pub narrowed: Vec<(String, RuleNode)>,
}

impl AuthoritySpec {
    pub fn new(action_class: impl Into<String>, root: RuleNode) -> Self {
        Self {
            action_class: action_class.into(),
            root,
            narrowed: Vec::new(),
        }
    }

    /// Rule tree for `scope`; `None` selects the root.
    pub fn tree_for(&self, scope: Option<&str>) -> Option<&RuleNode> {
        match scope {
            None => Some(&self.root),
            Some(label) => self.narrowed.iter().find(|(l, _)| l == label).map(|(_, n)| n),
        }
    }

    /// The next narrower scope after `scope` (after the root when `None`).
    pub fn next_narrower(&self, scope: Option<&str>) -> Option<&str> {
        let next = match scope {
            None => 0,
            Some(label) => self.narrowed.iter().position(|(l, _)| l == label)? + 1,
        };
        self.narrowed.get(next).map(|(l, _)| l.as_str())
    }

    fn to_json(&self) -> serde_json::Value {
        let mut m = serde_json::Map::new();
        m.insert("action_class".into(), self.action_class.clone().into());
        m.insert("root".into(), self.root.to_json());
        if !self.narrowed.is_empty() {
            let list = self
                .narrowed
                .iter()
                .map(|(scope, node)| serde_json::json!({"scope": scope, "root": node.to_json()}))
                .collect();
            m.insert("narrowed".into(), serde_json::Value::Array(list));
        }
        serde_json::Value::Object(m)
    }
}

/// Candidate generator for an action class. Never an authority source.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyPrior {
    pub action_class: String,
    pub candidates: Vec<VariableId>,
}

impl PolicyPrior {
    pub fn empty(action_class: impl Into<String>) -> Self {
        Self {
            action_class: action_class.into(),
            candidates: Vec::new(),
        }
    }
}

/// Every variable that some evaluation of `node` could visit.
pub fn reachable_vars(node: &RuleNode) -> BTreeSet<VariableId> {
    let mut out = BTreeSet::new();
    collect_vars(node, &mut out);
    out
}

fn collect_vars(node: &RuleNode, out: &mut BTreeSet<VariableId>) {
    match node {
        RuleNode::Leaf(p) => {
            out.insert(p.var.clone());
        }
        RuleNode::All(c) | RuleNode::Any(c) => c.iter().for_each(|n| collect_vars(n, out)),
        RuleNode::Guard { var, branches, default } => {
            out.insert(var.clone());
            branches.iter().for_each(|(_, n)| collect_vars(n, out));
            if let Some(d) = default {
                collect_vars(d, out);
            }
        }
    }
}

/// Validated policy document.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PolicySet {
    pub specs: BTreeMap<String, AuthoritySpec>,
    pub priors: BTreeMap<String, PolicyPrior>,
    pub consistency_rules: Vec<ConsistencyRule>,
}

impl PolicySet {
    pub fn from_parts(
        specs: Vec<AuthoritySpec>,
        priors: Vec<PolicyPrior>,
        consistency_rules: Vec<ConsistencyRule>,
    ) -> Result<Self, PolicyError> {
        let mut set = PolicySet::default();
        for spec in specs {
            validate_spec(&spec)?;
            if set.specs.contains_key(&spec.action_class) {
                return Err(PolicyError::DuplicateActionClass(spec.action_class));
            }
            set.specs.insert(spec.action_class.clone(), spec);
        }
        for prior in priors {
            if !set.specs.contains_key(&prior.action_class) {
                return Err(PolicyError::PriorForUnknownClass(prior.action_class));
            }
            if set.priors.contains_key(&prior.action_class) {
                return Err(PolicyError::DuplicatePrior(prior.action_class));
            }
            set.priors.insert(prior.action_class.clone(), prior);
        }
        let mut ids = BTreeSet::new();
        for rule in &consistency_rules {
            if !ids.insert(rule.id.clone()) {
                return Err(PolicyError::DuplicateRuleId(rule.id.clone()));
            }
        }
        set.consistency_rules = consistency_rules;
        Ok(set)
    }

    pub fn spec(&self, class: &str) -> Option<&AuthoritySpec> {
        self.specs.get(class)
    }

    /// The prior for `class`, or an empty one.
    pub fn prior(&self, class: &str) -> PolicyPrior {
        self.priors
            .get(class)
            .cloned()
            .unwrap_or_else(|| PolicyPrior::empty(class))
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut m = serde_json::Map::new();
        m.insert(
            "policies".into(),
            self.specs.values().map(AuthoritySpec::to_json).collect(),
        );
        m.insert(
            "priors".into(),
            serde_json::to_value(self.priors.values().collect::<Vec<_>>()).expect("priors serialize"),
        );
        if !self.consistency_rules.is_empty() {
            m.insert(
                "consistency_rules".into(),
                serde_json::to_value(&self.consistency_rules).expect("rules serialize"),
            );
        }
        serde_json::Value::Object(m)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_json()).expect("policy serializes")
    }
}

fn validate_spec(spec: &AuthoritySpec) -> Result<(), PolicyError> {
    if !is_identifier_path(&spec.action_class) {
        return Err(PolicyError::InvalidActionClass(spec.action_class.clone()));
    }
    let full = reachable_vars(&spec.root);
    let mut labels = BTreeSet::new();
    for (scope, node) in &spec.narrowed {
        if scope.is_empty() || !labels.insert(scope.as_str()) {
            return Err(PolicyError::BadNarrowedList {
                class: spec.action_class.clone(),
                reason: format!("has an empty or repeated scope label {scope:?}"),
            });
        }
        let vars = reachable_vars(node);
        if !(vars.is_subset(&full) && vars.len() < full.len()) {
            return Err(PolicyError::NarrowedNotStrictSubset {
                class: spec.action_class.clone(),
                scope: scope.clone(),
            });
        }
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDocument {
    policies: Vec<RawSpec>,
    #[serde(default)]
    priors: Vec<PolicyPrior>,
    #[serde(default)]
    consistency_rules: Vec<ConsistencyRule>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    action_class: String,
    root: RuleNode,
    #[serde(default)]
    narrowed: Option<Vec<RawNarrowed>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNarrowed {
    scope: String,
    root: RuleNode,
}

/// Parses and validates a policy document.
pub fn parse_policy(text: &str) -> Result<PolicySet, PolicyError> {
    let raw: RawDocument = serde_json::from_str(text).map_err(|e| PolicyError::Syntax {
        line: e.line(),
        column: e.column(),
        msg: strip_position(&e.to_string()),
    })?;
    let mut specs = Vec::with_capacity(raw.policies.len());
    for p in raw.policies {
        let narrowed = match p.narrowed {
            Some(list) if list.is_empty() => {
                return Err(PolicyError::BadNarrowedList {
                    class: p.action_class,
                    reason: "is present but empty".into(),
                })
            }
            Some(list) => list.into_iter().map(|n| (n.scope, n.root)).collect(),
            None => Vec::new(),
        };
        specs.push(AuthoritySpec {
            action_class: p.action_class,
            root: p.root,
            narrowed,
        });
    }
    PolicySet::from_parts(specs, raw.priors, raw.consistency_rules)
}

/// serde_json appends " at line L column C"; the position is reported separately.
fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const WORKED: &str = r#"{
      "policies": [{
        "action_class": "transfer",
        "root": {"all": [
          {"leaf": {"var": "x1", "op": "eq", "rhs": {"enum": "active"}}},
          {"leaf": {"var": "x2", "op": "le", "rhs": 500}},
          {"leaf": {"var": "x3", "op": "in", "rhs": [{"enum": "low"}, {"enum": "medium"}]}}
        ]}
      }]
    }"#;

    fn var(s: &str) -> VariableId {
        VariableId::new(s).unwrap()
    }

    #[test]
    fn single_leaf() {
        let set = parse_policy(
            r#"{"policies":[{"action_class":"a","root":{"leaf":{"var":"x1","op":"eq","rhs":true}}}]}"#,
        )
        .unwrap();
        let spec = set.spec("a").unwrap();
        assert!(matches!(&spec.root, RuleNode::Leaf(p) if p.var == var("x1")));
        assert!(set.priors.is_empty());
    }

    #[test]
    fn worked_policy_is_three_leaf_conjunction() {
        let set = parse_policy(WORKED).unwrap();
        let root = &set.spec("transfer").unwrap().root;
        match root {
            RuleNode::All(c) => {
                assert_eq!(c.len(), 3);
                assert!(c.iter().all(|n| matches!(n, RuleNode::Leaf(_))));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(
            reachable_vars(root),
            [var("x1"), var("x2"), var("x3")].into_iter().collect()
        );
    }

    #[test]
    fn duplicate_guard_key_rejected() {
        let text = r##"{"policies":[{"action_class":"a","root":{"guard":{"var":"g","branches":{
            "#a":{"leaf":{"var":"x1","op":"eq","rhs":1}},
            "#a":{"leaf":{"var":"x2","op":"eq","rhs":1}}}}}}]}"##;
        match parse_policy(text).unwrap_err() {
            PolicyError::Syntax { line, msg, .. } => {
                assert!(msg.contains("keyed twice"), "{msg}");
                assert!(line >= 2);
            }
            other => panic!("unexpected {other:?}"),
        }
        let numeric = r#"{"policies":[{"action_class":"a","root":{"guard":{"var":"g","branches":{
            "1":{"leaf":{"var":"x1","op":"eq","rhs":1}},
            "1.0":{"leaf":{"var":"x2","op":"eq","rhs":1}}}}}}]}"#;
        assert!(parse_policy(numeric).is_err());
    }

    #[test]
    fn structural_errors() {
        let empty_branches =
            r#"{"policies":[{"action_class":"a","root":{"guard":{"var":"g","branches":{}}}}]}"#;
        assert!(matches!(parse_policy(empty_branches), Err(PolicyError::Syntax { msg, .. }) if msg.contains("empty guard")));

        let dup = r#"{"policies":[
            {"action_class":"a","root":{"leaf":{"var":"x","op":"eq","rhs":1}}},
            {"action_class":"a","root":{"leaf":{"var":"y","op":"eq","rhs":1}}}]}"#;
        assert_eq!(parse_policy(dup), Err(PolicyError::DuplicateActionClass("a".into())));

        let not_strict = r#"{"policies":[{"action_class":"a",
            "root":{"leaf":{"var":"x","op":"eq","rhs":1}},
            "narrowed":[{"scope":"s","root":{"leaf":{"var":"x","op":"eq","rhs":2}}}]}]}"#;
        assert!(matches!(parse_policy(not_strict), Err(PolicyError::NarrowedNotStrictSubset { .. })));

        let ordering_on_string =
            r#"{"policies":[{"action_class":"a","root":{"leaf":{"var":"x","op":"lt","rhs":"z"}}}]}"#;
        assert!(parse_policy(ordering_on_string).is_err());

        let empty_set =
            r#"{"policies":[{"action_class":"a","root":{"leaf":{"var":"x","op":"in","rhs":[]}}}]}"#;
        assert!(parse_policy(empty_set).is_err());

        let bad_json = "{\"policies\": [\n  {\"action_class\": }]}";
        match parse_policy(bad_json).unwrap_err() {
            PolicyError::Syntax { line, column, .. } => assert_eq!((line, column), (2, 20)),
            other => panic!("unexpected {other:?}"),
        }

        let unknown_prior = r#"{"policies":[{"action_class":"a","root":{"leaf":{"var":"x","op":"eq","rhs":1}}}],
            "priors":[{"action_class":"b","candidates":[]}]}"#;
        assert_eq!(parse_policy(unknown_prior), Err(PolicyError::PriorForUnknownClass("b".into())));
    }

    #[test]
    fn guard_reachability_covers_every_branch() {
        let text = r##"{"policies":[{"action_class":"a","root":{"guard":{"var":"x0","branches":{
            "#a":{"leaf":{"var":"x1","op":"eq","rhs":1}},
            "#b":{"leaf":{"var":"x2","op":"eq","rhs":1}}}}}}]}"##;
        let set = parse_policy(text).unwrap();
        assert_eq!(
            reachable_vars(&set.spec("a").unwrap().root),
            [var("x0"), var("x1"), var("x2")].into_iter().collect()
        );
    }

    #[test]
    fn round_trip() {
        let text = r##"{
          "policies": [{
            "action_class": "wire",
            "root": {"guard": {"var": "kind", "branches": {
                "#domestic": {"all": [{"leaf": {"var": "amt", "op": "le", "rhs": 1e3}},
                                      {"leaf": {"var": "ok", "op": "eq", "rhs": true}}]},
                "\"42\"": {"any": [{"leaf": {"var": "amt", "op": "lt", "rhs": 0.10}},
                                   {"leaf": {"var": "tag", "op": "neq", "rhs": "x"}}]}
              },
              "default": {"leaf": {"var": "ok", "op": "eq", "rhs": false}}}},
            "narrowed": [{"scope": "small", "root": {"leaf": {"var": "amt", "op": "le", "rhs": 10}}}]
          }],
          "priors": [{"action_class": "wire", "candidates": ["amt", "zz"]}]
        }"##;
        let once = parse_policy(text).unwrap();
        let twice = parse_policy(&once.to_json_string()).unwrap();
        assert_eq!(once, twice);
        let spec = once.spec("wire").unwrap();
        assert_eq!(spec.next_narrower(None), Some("small"));
        assert_eq!(spec.next_narrower(Some("small")), None);
    }

    #[test]
    fn predicate_semantics() {
        let num = |s| VariableValue::number(s).unwrap();
        let p = Predicate::new(var("x"), CmpOp::Le, Rhs::Value(num("500"))).unwrap();
        assert!(p.holds(&num("500.00")));
        assert!(!p.holds(&num("500.0000001")));
        assert!(!p.holds(&VariableValue::str("1")));
        let ne = Predicate::new(var("x"), CmpOp::Neq, Rhs::Value(num("1"))).unwrap();
        assert!(ne.holds(&VariableValue::str("1")));
        assert!(!ne.holds(&num("1.0")));
    }

    #[test]
    fn node_paths() {
        let set = parse_policy(WORKED).unwrap();
        let root = &set.spec("transfer").unwrap().root;
        assert!(matches!(root.at_path(&[1]), Some(RuleNode::Leaf(p)) if p.var == var("x2")));
        assert!(root.at_path(&[3]).is_none());
        assert!(root.at_path(&[0, 0]).is_none());
    }
}
