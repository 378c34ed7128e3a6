//! `rgate`: single evaluations, scenario runs, audit verification and
//! artifact explanation.
//!
//! Exit codes: 0/1/2 mirror EXECUTE/DENY/HALT for `evaluate`; 3 means a
//! simulated action escalated; 4 means an audit log failed verification;
//! 64 malformed input, 65 invalid data, 66 unreadable or unwritable file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use rgate_core::audit::{parse_log, render_narrative, verify_log, AuditError, JsonlFileSink, LogRecord, SamplingPolicy};
use rgate_core::gate::{decide, ActionRequest, ExecState};
use rgate_core::policy::{parse_policy, PolicyError};
use rgate_core::state::{GateConfig, StateSnapshot};
use rgate_core::DriftSignal;
use rgate_sim::harness::{run_with, GateMode, RunOptions};
use rgate_sim::scenario::{Scenario, ScenarioError};
use serde_json::{json, Value};

const EXIT_ESCALATED: u8 = 3;
const EXIT_UNVERIFIED: u8 = 4;
const EXIT_USAGE: u8 = 64;
const EXIT_DATA: u8 = 65;
const EXIT_IO: u8 = 66;

#[derive(Parser)]
#[command(name = "rgate", version, about = "Runtime authority gate")]
struct Cli {
    /// Add a generated_at field to JSON output.
    #[arg(long, global = true)]
    timestamp: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decide one action against a policy and a state snapshot.
    Evaluate {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        state: PathBuf,
        /// Action class to evaluate.
        #[arg(long)]
        action: String,
        #[arg(long)]
        scope: Option<String>,
        #[arg(long, default_value = "cli")]
        action_id: String,
        #[arg(long, env = "RGATE_THETA")]
        theta: Option<f64>,
    },
    /// Run a scenario file through the simulator.
    Simulate {
        scenario: PathBuf,
        #[arg(long, default_value = "reconstructive")]
        mode: GateMode,
        #[arg(long)]
        audit_out: Option<PathBuf>,
        #[arg(long)]
        trace_out: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        sample_rate: f64,
        #[arg(long)]
        max_recovery: Option<u32>,
        #[arg(long, env = "RGATE_THETA")]
        theta: Option<f64>,
        /// Disable drift-monitor triggers.
        #[arg(long)]
        no_triggers: bool,
    },
    /// Check an audit log for safety and lineage violations.
    ReplayVerify { log: PathBuf },
    /// Render one decision record as a readable narrative.
    Explain {
        log: PathBuf,
        /// 1-based line number of the record.
        #[arg(long)]
        record: usize,
    },
}

struct Failure {
    code: u8,
    msg: String,
}

fn fail(code: u8, msg: impl Into<String>) -> Failure {
    Failure { code, msg: msg.into() }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| fail(EXIT_IO, format!("{}: {e}", path.display())))
}

fn emit(mut value: Value, timestamp: bool) {
    if timestamp {
        if let Value::Object(m) = &mut value {
            let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
            m.insert("generated_at".into(), secs.into());
        }
    }
    write_stdout(&format!("{}\n", serde_json::to_string(&value).expect("output serializes")));
}

// A closed pipe (e.g. `| head`) is not an error worth a panic.
fn write_stdout(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

fn policy_failure(path: &Path, e: PolicyError) -> Failure {
    let code = if matches!(e, PolicyError::Syntax { .. }) { EXIT_USAGE } else { EXIT_DATA };
    fail(code, format!("{}: {e}", path.display()))
}

fn scenario_failure(path: &Path, e: ScenarioError) -> Failure {
    let code = match e {
        ScenarioError::Syntax { .. } => EXIT_USAGE,
        ScenarioError::Invalid { .. } => EXIT_DATA,
    };
    fail(code, format!("{}: {e}", path.display()))
}

fn audit_failure(path: &Path, e: AuditError) -> Failure {
    let code = match e {
        AuditError::Io(_) => EXIT_IO,
        _ => EXIT_UNVERIFIED,
    };
    fail(code, format!("{}: {e}", path.display()))
}

fn evaluate(
    policy: &Path,
    state: &Path,
    action: String,
    scope: Option<String>,
    action_id: String,
    theta: Option<f64>,
    timestamp: bool,
) -> Result<u8, Failure> {
    let policies = parse_policy(&read(policy)?).map_err(|e| policy_failure(policy, e))?;
    let snapshot = StateSnapshot::from_json_str(&read(state)?).map_err(|e| fail(EXIT_USAGE, format!("{}: {e}", state.display())))?;
    let mut cfg = GateConfig::default();
    if let Some(t) = theta {
        cfg.theta_auth = t;
    }
    cfg.validate().map_err(|e| fail(EXIT_DATA, e.to_string()))?;
    let req = ActionRequest::new(action_id, action).with_scope(scope);
    let decision = decide(&req, &snapshot, &policies, &DriftSignal::none(), &cfg, None).map_err(|e| fail(EXIT_DATA, e.to_string()))?;
    let mut out = serde_json::to_value(&decision).expect("decision serializes");
    if let Value::Object(m) = &mut out {
        m.insert("snapshot_digest".into(), snapshot.digest().into());
    }
    emit(out, timestamp);
    Ok(match decision.exec_state {
        ExecState::Execute => 0,
        ExecState::Deny => 1,
        ExecState::Halt => 2,
    })
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    path: &Path,
    mode: GateMode,
    audit_out: Option<PathBuf>,
    trace_out: Option<PathBuf>,
    sample_rate: f64,
    max_recovery: Option<u32>,
    theta: Option<f64>,
    no_triggers: bool,
    timestamp: bool,
) -> Result<u8, Failure> {
    let sc = Scenario::from_json_str(&read(path)?).map_err(|e| scenario_failure(path, e))?;
    let mut opts = RunOptions::new(mode);
    opts.triggers = !no_triggers;
    opts.sampling = SamplingPolicy::new(sample_rate, false).map_err(|e| fail(EXIT_DATA, e.to_string()))?;
    opts.max_recovery_attempts = max_recovery;
    opts.theta_auth = theta;
    let sink: Box<dyn rgate_core::audit::AuditSink> = match &audit_out {
        Some(p) => {
            // Each run writes a fresh log.
            fs::write(p, "").map_err(|e| fail(EXIT_IO, format!("{}: {e}", p.display())))?;
            Box::new(JsonlFileSink::open(p).map_err(|e| fail(EXIT_IO, format!("{}: {e}", p.display())))?)
        }
        None => Box::new(rgate_core::audit::NullSink),
    };
    let run = run_with(&sc, &opts, sink).map_err(|e| fail(EXIT_DATA, e.to_string()))?;
    if let Some(p) = &trace_out {
        fs::write(p, run.trace_jsonl()).map_err(|e| fail(EXIT_IO, format!("{}: {e}", p.display())))?;
    }
    let stale = run.stale_executions().count();
    emit(
        json!({
            "mode": mode,
            "ticks": run.trace.len(),
            "actions": run.actions,
            "effects": run.effects.len(),
            "stale_executions": stale,
        }),
        timestamp,
    );
    Ok(if run.any_escalated() { EXIT_ESCALATED } else { 0 })
}

fn replay_verify(path: &Path, timestamp: bool) -> Result<u8, Failure> {
    let report = verify_log(&read(path)?).map_err(|e| audit_failure(path, e))?;
    let ok = report.safety_ok && report.lineage_ok;
    let mut out = serde_json::to_value(&report).expect("report serializes");
    if report.sampled {
        if let Value::Object(m) = &mut out {
            m.insert(
                "note".into(),
                format!(
                    "sampled log: {} halt records retained in full; execute and deny counts cover retained records only",
                    report.halts
                )
                .into(),
            );
        }
    }
    emit(out, timestamp);
    Ok(if ok { 0 } else { EXIT_UNVERIFIED })
}

fn explain(path: &Path, line: usize) -> Result<u8, Failure> {
    let records = parse_log(&read(path)?).map_err(|e| audit_failure(path, e))?;
    let (_, record) = records
        .iter()
        .find(|(l, _)| *l == line)
        .ok_or_else(|| fail(EXIT_DATA, format!("{}: no record on line {line}", path.display())))?;
    match record {
        LogRecord::Decision(a) => {
            write_stdout(&render_narrative(a));
            Ok(0)
        }
        LogRecord::Event(_) => Err(fail(EXIT_DATA, format!("line {line} is an event, not a decision record"))),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ts = cli.timestamp;
    let result = match cli.command {
        Command::Evaluate {
            policy,
            state,
            action,
            scope,
            action_id,
            theta,
        } => evaluate(&policy, &state, action, scope, action_id, theta, ts),
        Command::Simulate {
            scenario,
            mode,
            audit_out,
            trace_out,
            sample_rate,
            max_recovery,
            theta,
            no_triggers,
        } => simulate(&scenario, mode, audit_out, trace_out, sample_rate, max_recovery, theta, no_triggers, ts),
        Command::ReplayVerify { log } => replay_verify(&log, ts),
        Command::Explain { log, record } => explain(&log, record),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("rgate: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
