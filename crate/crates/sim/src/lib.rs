//! Deterministic simulation: ground-truth environment, scenario runner,
//! snapshot-baseline comparison gate, reference oracle and seeded generators.

pub mod canned;
pub mod env;
pub mod gen;
pub mod harness;
pub mod oracle;
pub mod scenario;

pub use env::SimEnvironment;
pub use harness::{run_scenario, run_with, ActionResult, GateMode, RunOptions, SimRun};
pub use oracle::{oracle_decide, Verdict};
pub use scenario::Scenario;
