//! Dependency resolution: walks the rule tree against one snapshot and
//! records which variables the decision actually depends on.
//!
//! Walk order is document order. `All` visits every child. `Any` stops after
//! the first child that evaluates to true. A guard whose variable is not
//! resolved stays open and its branches are not entered.

use serde::{Deserialize, Serialize};

use crate::policy::{PolicyPrior, RuleNode};
use crate::state::{lookup, ObservationStatus, StateSnapshot, VariableId};

/// Three-valued truth used during the walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Tri {
    True,
    False,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    PriorCandidate,
    LeafVisit,
    GuardVisit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarStatus {
    Resolved,
    Unobserved,
    Uncertain { u: f64 },
}

impl VarStatus {
    pub fn of(status: &ObservationStatus, theta: f64) -> Self {
        match status {
            ObservationStatus::Unobserved => VarStatus::Unobserved,
            ObservationStatus::Observed(o) if o.u <= theta => VarStatus::Resolved,
            ObservationStatus::Observed(o) => VarStatus::Uncertain { u: o.u },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnresolvedCause {
    Unobserved,
    Uncertain { u: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryStep {
    pub var: VariableId,
    pub origin: Origin,
    pub node_path: Vec<usize>,
    pub status: VarStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Promotion {
    pub var: VariableId,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolutionResult {
    /// First-discovery order.
    pub required: Vec<VariableId>,
    pub authority_defining: Vec<VariableId>,
    pub discovery: Vec<DiscoveryStep>,
    pub promotions: Vec<Promotion>,
    pub open_guards: Vec<VariableId>,
    pub unresolved: Vec<(VariableId, UnresolvedCause)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClosureStatus {
    Closed,
    Open(Vec<VariableId>),
}

pub fn closure_status(res: &ResolutionResult) -> ClosureStatus {
    if res.open_guards.is_empty() {
        ClosureStatus::Closed
    } else {
        ClosureStatus::Open(res.open_guards.clone())
    }
}

struct Walk<'a> {
    snapshot: &'a StateSnapshot,
    theta: f64,
    res: ResolutionResult,
}

impl Walk<'_> {
    fn visit(&mut self, var: &VariableId, origin: Origin, path: &[usize]) -> (ObservationStatus, VarStatus) {
        let obs = lookup(self.snapshot, var);
        let status = VarStatus::of(&obs, self.theta);
        self.res.discovery.push(DiscoveryStep {
            var: var.clone(),
            origin,
            node_path: path.to_vec(),
            status,
        });
        if !self.res.required.contains(var) {
            self.res.required.push(var.clone());
            self.res.authority_defining.push(var.clone());
            let what = match origin {
                Origin::GuardVisit => "guard selects the applicable branch",
                _ => "constraint evaluated by the rule tree",
            };
            self.res.promotions.push(Promotion {
                var: var.clone(),
                reason: format!("{what} at node {path:?}"),
            });
        }
        let cause = match status {
            VarStatus::Resolved => None,
            VarStatus::Unobserved => Some(UnresolvedCause::Unobserved),
            VarStatus::Uncertain { u } => Some(UnresolvedCause::Uncertain { u }),
        };
        if let Some(cause) = cause {
            if !self.res.unresolved.iter().any(|(v, _)| v == var) {
                self.res.unresolved.push((var.clone(), cause));
            }
        }
        (obs, status)
    }

    fn node(&mut self, node: &RuleNode, path: &mut Vec<usize>) -> Tri {
        match node {
            RuleNode::Leaf(p) => match self.visit(&p.var, Origin::LeafVisit, path) {
                (ObservationStatus::Observed(o), VarStatus::Resolved) => {
                    if p.holds(&o.value) {
                        Tri::True
                    } else {
                        Tri::False
                    }
                }
                _ => Tri::Unknown,
            },
            RuleNode::All(children) => {
                let mut acc = Tri::True;
                for (i, child) in children.iter().enumerate() {
                    path.push(i);
                    let v = self.node(child, path);
                    path.pop();
                    acc = match (acc, v) {
                        (Tri::False, _) | (_, Tri::False) => Tri::False,
                        (Tri::Unknown, _) | (_, Tri::Unknown) => Tri::Unknown,
                        _ => Tri::True,
                    };
                }
                acc
            }
            RuleNode::Any(children) => {
                let mut acc = Tri::False;
                for (i, child) in children.iter().enumerate() {
                    path.push(i);
                    let v = self.node(child, path);
                    path.pop();
                    match v {
                        Tri::True => return Tri::True,
                        Tri::Unknown => acc = Tri::Unknown,
                        Tri::False => {}
                    }
                }
                acc
            }
            RuleNode::Guard { var, branches, default } => {
                let (obs, status) = self.visit(var, Origin::GuardVisit, path);
                let value = match (obs, status) {
                    (ObservationStatus::Observed(o), VarStatus::Resolved) => o.value,
                    _ => {
                        if !self.res.open_guards.contains(var) {
                            self.res.open_guards.push(var.clone());
                        }
                        return Tri::Unknown;
                    }
                };
                let chosen = match branches.iter().position(|(k, _)| *k == value) {
                    Some(i) => Some((i, &branches[i].1)),
                    None => default.as_deref().map(|d| (branches.len(), d)),
                };
                match chosen {
                    Some((i, child)) => {
                        path.push(i);
                        let v = self.node(child, path);
                        path.pop();
                        v
                    }
                    None => Tri::False,
                }
            }
        }
    }
}

/// Resolves `root` against `snapshot`. Prior candidates are recorded in the
/// discovery list but only enter the required set if the walk visits them.
pub fn resolve_node(
    root: &RuleNode,
    snapshot: &StateSnapshot,
    prior: &PolicyPrior,
    theta: f64,
) -> ResolutionResult {
    resolve_with_value(root, snapshot, prior, theta).0
}

/// As [`resolve_node`], also returning the walk's three-valued result.
pub fn resolve_with_value(
    root: &RuleNode,
    snapshot: &StateSnapshot,
    prior: &PolicyPrior,
    theta: f64,
) -> (ResolutionResult, Tri) {
    let mut walk = Walk {
        snapshot,
        theta,
        res: ResolutionResult {
            required: Vec::new(),
            authority_defining: Vec::new(),
            discovery: Vec::new(),
            promotions: Vec::new(),
            open_guards: Vec::new(),
            unresolved: Vec::new(),
        },
    };
    for cand in &prior.candidates {
        let status = VarStatus::of(&lookup(snapshot, cand), theta);
        walk.res.discovery.push(DiscoveryStep {
            var: cand.clone(),
            origin: Origin::PriorCandidate,
            node_path: Vec::new(),
            status,
        });
    }
    let value = walk.node(root, &mut Vec::new());
    (walk.res, value)
}

/// Resolves the root tree of `spec`.
pub fn resolve(
    spec: &crate::policy::AuthoritySpec,
    snapshot: &StateSnapshot,
    prior: &PolicyPrior,
    theta: f64,
) -> ResolutionResult {
    resolve_node(&spec.root, snapshot, prior, theta)
}

/// Checks that the required set only grows along the discovery list: each
/// walk step's variable is in the cumulative set from then on, the set ends
/// equal to `required` in first-discovery order, and prior-only candidates
/// are never promoted.
pub fn promotion_monotone(res: &ResolutionResult) -> bool {
    let mut cumulative: Vec<&VariableId> = Vec::new();
    for step in &res.discovery {
        if step.origin == Origin::PriorCandidate {
            continue;
        }
        if !cumulative.contains(&&step.var) {
            cumulative.push(&step.var);
        }
        let prefix = &res.required[..cumulative.len().min(res.required.len())];
        if prefix.len() != cumulative.len() || prefix.iter().zip(&cumulative).any(|(a, b)| a != *b) {
            return false;
        }
    }
    cumulative.len() == res.required.len() && res.authority_defining == res.required
}
