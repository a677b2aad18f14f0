use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use ngnsim_core::runner::{self, RunReport};
use ngnsim_core::scenario::{self, Severity};

/// Deterministic simulator of policy-based QoS/QoE assurance in an
/// IMS-based NGN: session setup, admission control, DiffServ transport
/// enforcement and per-session QoE estimation, driven by scenario files.
#[derive(Parser)]
#[command(name = "ngnsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write events.log, flows.csv and sessions.json.
    Run {
        /// Scenario file (JSON).
        scenario: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (defaults to $NGNSIM_OUT, then ./out).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and statically check a scenario without simulating.
    Validate {
        /// Scenario file (JSON).
        scenario: PathBuf,
    },
    /// Summarize a previous run from its output directory.
    Report {
        /// Directory a `run` wrote into.
        out_dir: PathBuf,
        /// Show one session in detail.
        #[arg(long)]
        session: Option<String>,
    },
}

fn default_out_dir() -> PathBuf {
    std::env::var_os("NGNSIM_OUT").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out"))
}

fn cmd_run(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> anyhow::Result<ExitCode> {
    let scenario = scenario::parse_scenario(path)
        .with_context(|| format!("loading scenario {}", path.display()))?;
    for d in scenario.validate() {
        eprintln!("{d}");
    }
    let out_dir = out.unwrap_or_else(default_out_dir);
    let report = runner::run_scenario(&scenario, Some(&out_dir), seed)?;
    println!(
        "run complete: scenario={} seed={} sessions={} flows={} -> {}",
        report.scenario,
        report.seed,
        report.sessions.len(),
        report.flows.len(),
        out_dir.display()
    );
    for s in &report.sessions {
        let state = s.session.state;
        match &s.qoe {
            Some(q) => println!(
                "  session {} [{state:?}] mos={:.3} degraded={} errored={} unavailable={}",
                s.session.session_id,
                q.mos,
                q.degraded_seconds,
                q.errored_seconds,
                q.unavailable_seconds
            ),
            None => {
                let why = s
                    .session
                    .reject_reason
                    .as_deref()
                    .map(|r| format!(" ({r})"))
                    .unwrap_or_default();
                println!("  session {} [{state:?}]{why}", s.session.session_id)
            }
        }
    }
    // Rejected sessions are results, not failures.
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(path: &Path) -> anyhow::Result<ExitCode> {
    match runner::validate_file(path) {
        Ok(diags) => {
            let errors = diags.iter().filter(|d| d.severity == Severity::Error).count();
            let warnings = diags.len() - errors;
            for d in &diags {
                println!("{d}");
            }
            if errors == 0 {
                println!("OK: 0 errors, {warnings} warning(s)");
                Ok(ExitCode::SUCCESS)
            } else {
                println!("INVALID: {errors} error(s), {warnings} warning(s)");
                Ok(ExitCode::from(2))
            }
        }
        Err(e) => {
            println!("{e}");
            Ok(ExitCode::from(2))
        }
    }
}

fn print_session(report: &RunReport, id: &str) -> ExitCode {
    match report.sessions.iter().find(|s| s.session.session_id.as_str() == id) {
        Some(s) => {
            println!("{}", serde_json::to_string_pretty(s).expect("report serializes"));
            ExitCode::SUCCESS
        }
        None => {
            eprintln!("no session {id} in this run");
            ExitCode::from(2)
        }
    }
}

fn cmd_report(out_dir: &Path, session: Option<String>) -> anyhow::Result<ExitCode> {
    let report = runner::load_report(out_dir)
        .with_context(|| format!("loading report from {}", out_dir.display()))?;
    if let Some(id) = session {
        return Ok(print_session(&report, &id));
    }
    println!(
        "scenario={} seed={} duration_ms={} sessions={}",
        report.scenario,
        report.seed,
        report.duration_ms,
        report.sessions.len()
    );
    for s in &report.sessions {
        match &s.qoe {
            Some(q) => println!(
                "  {} [{state:?}] mos={:.3} seconds(degraded/errored/unavailable)={}/{}/{}",
                s.session.session_id,
                q.mos,
                q.degraded_seconds,
                q.errored_seconds,
                q.unavailable_seconds,
                state = s.session.state,
            ),
            None => println!(
                "  {} [{:?}] stage={:?} reason={:?}",
                s.session.session_id, s.session.state, s.session.reject_stage, s.session.reject_reason
            ),
        }
    }
    for f in &report.flows {
        println!(
            "  flow {} loss={:.4} delay_ms={:.3} jitter_ms={:.3} throughput_bps={:.0}",
            f.flow_id, f.loss, f.mean_delay_ms, f.jitter_ms, f.throughput_bps
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { scenario, seed, out } => cmd_run(&scenario, seed, out),
        Command::Validate { scenario } => cmd_validate(&scenario),
        Command::Report { out_dir, session } => cmd_report(&out_dir, session),
    }
}
