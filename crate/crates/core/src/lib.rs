//! Runtime authority gate.
//!
//! Each action attempt gets exactly one of EXECUTE, DENY or HALT. Authority is
//! rebuilt from the current observable state on every attempt: a rule tree is
//! walked against a snapshot, the variables it touches become
//! authority-defining, and any of them being unobservable or too uncertain
//! makes authority undefined, which halts rather than denies.

pub mod audit;
pub mod authority;
pub mod drift;
pub mod enforce;
pub mod gate;
pub mod policy;
pub mod recovery;
pub mod resolver;
pub mod state;

pub use audit::{AuditArtifact, Auditor, SamplingPolicy};
pub use authority::{reconstruct_authority, AuthorityOutcome, AuthorityState, ConsistencyRule, Reason};
pub use drift::{detect_drift, emit_trigger, DriftSignal, RecoveryTrigger};
pub use enforce::{enforce, ActionRun, Environment, TerminalOutcome};
pub use gate::{bind_effect, decide, map_code, ActionRequest, Decision, DecisionCode, ExecState, Gate};
pub use policy::{parse_policy, AuthoritySpec, PolicyPrior, PolicySet, RuleNode};
pub use recovery::{recovery_step, HaltContext, RecoveryOutcome};
pub use resolver::{resolve, ResolutionResult};
pub use state::{GateConfig, Observation, StateSnapshot, Tick, VariableId, VariableValue};
