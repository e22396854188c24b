//! `eponsim` — scenario runner for the NG-EPON upstream simulator.
//!
//! Subcommands: `run` a scenario (file or preset, with overrides),
//! `validate` a scenario file, `compare` finished run directories, and
//! `guard-budget` for the burst-mode dead-time arithmetic.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use eponsim_core::scenario::{
    self, compare_runs, guard_budget, render_comparison, run_scenario, GuardBudget, LoadProfile,
    ScenarioConfig, ScenarioError, PRESET_NAMES,
};
use eponsim_core::time::SimTime;

/// Default root for run outputs when the scenario does not say otherwise.
const OUTPUT_ROOT_ENV: &str = "EPONSIM_OUTPUT_ROOT";

const EXIT_VALIDATION: u8 = 2;
const EXIT_RUNTIME: u8 = 1;

#[derive(Parser)]
#[command(name = "eponsim", about = "NG-EPON upstream simulator with adaptive grant sizing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario to completion and write its CSV outputs.
    Run(RunArgs),
    /// Parse and validate a scenario file without simulating.
    Validate {
        /// Scenario TOML file.
        scenario: PathBuf,
    },
    /// Compare the managed-ONU latency figures of finished runs.
    Compare {
        /// Run output directories (each containing config.toml and CSVs).
        dirs: Vec<PathBuf>,
    },
    /// Sum guard-interval components and check them against the guard time.
    GuardBudget(GuardBudgetArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario TOML file (omit when using --preset).
    scenario: Option<PathBuf>,

    /// Built-in scenario: desk, desk-diurnal, or full-scale.
    #[arg(long, conflicts_with = "scenario")]
    preset: Option<String>,

    /// Override the RNG seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Override the run duration, e.g. "20s", "800ms", "50us", or ns.
    #[arg(long, value_parser = parse_duration)]
    duration: Option<SimTime>,

    /// Enable or disable the latency-management agent.
    #[arg(long, value_parser = ["on", "off"])]
    agent: Option<String>,

    /// Override the agent's latency target, e.g. "1ms".
    #[arg(long, value_parser = parse_duration)]
    target_latency: Option<SimTime>,

    /// Override the fixed load fraction (fixed-profile scenarios only).
    #[arg(long)]
    load: Option<f64>,

    /// Where to write outputs (defaults to the scenario's output_dir under
    /// $EPONSIM_OUTPUT_ROOT when that is set).
    #[arg(long)]
    output_dir: Option<PathBuf>,

    /// Record the full grant trace in memory (slightly slower; used when
    /// auditing scheduler behavior).
    #[arg(long)]
    trace_grants: bool,
}

#[derive(Args)]
struct GuardBudgetArgs {
    /// Laser fall time in ns.
    #[arg(long, default_value_t = 34)]
    laser_off: u64,
    /// Laser rise time in ns.
    #[arg(long, default_value_t = 27)]
    laser_on: u64,
    /// Burst-mode TIA gain settling time in ns.
    #[arg(long, default_value_t = 48)]
    tia_settle: u64,
    /// Burst CDR lock time in ns.
    #[arg(long, default_value_t = 16)]
    cdr_lock: u64,
    /// Extra engineering margin in ns.
    #[arg(long, default_value_t = 0)]
    margin: u64,
    /// Guard interval to check against, in ns.
    #[arg(long, default_value_t = 1_000)]
    guard: u64,
}

/// Parses "20s", "800ms", "50us", "1000ns", or a bare nanosecond count.
fn parse_duration(text: &str) -> Result<SimTime, String> {
    let text = text.trim();
    let (digits, multiplier) = if let Some(v) = text.strip_suffix("ns") {
        (v, 1u64)
    } else if let Some(v) = text.strip_suffix("us") {
        (v, 1_000)
    } else if let Some(v) = text.strip_suffix("ms") {
        (v, 1_000_000)
    } else if let Some(v) = text.strip_suffix('s') {
        (v, 1_000_000_000)
    } else {
        (text, 1)
    };
    let value: u64 = digits
        .trim()
        .parse()
        .map_err(|_| format!("cannot parse duration {text:?}"))?;
    Ok(SimTime::from_nanos(value * multiplier))
}

fn load_run_config(args: &RunArgs) -> Result<ScenarioConfig, String> {
    let mut cfg = match (&args.scenario, &args.preset) {
        (Some(path), None) => ScenarioConfig::load(path).map_err(|e| e.to_string())?,
        (None, Some(name)) => scenario::preset(name).ok_or_else(|| {
            format!("unknown preset {name:?}; available: {}", PRESET_NAMES.join(", "))
        })?,
        (None, None) => return Err("provide a scenario file or --preset".into()),
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(duration) = args.duration {
        cfg.duration_ns = duration;
    }
    if let Some(agent) = &args.agent {
        cfg.agent.enabled = agent == "on";
    }
    if let Some(target) = args.target_latency {
        cfg.agent.params.target_latency_ns = target;
    }
    if let Some(load) = args.load {
        match &mut cfg.load {
            LoadProfile::Fixed { load: l } => *l = load,
            LoadProfile::Dynamic { .. } => {
                return Err("--load applies only to fixed-profile scenarios".into())
            }
        }
    }
    if let Some(dir) = &args.output_dir {
        cfg.output_dir = dir.clone();
    } else if let Ok(root) = std::env::var(OUTPUT_ROOT_ENV) {
        cfg.output_dir = PathBuf::from(root).join(&cfg.output_dir);
    }
    Ok(cfg)
}

fn cmd_run(args: &RunArgs) -> Result<(), (u8, String)> {
    let cfg = load_run_config(args).map_err(|e| (EXIT_VALIDATION, e))?;
    let result = run_scenario(&cfg, args.trace_grants).map_err(classify)?;
    let summary = &result.output.summary;
    println!("run complete: {}", result.dir.display());
    println!(
        "  events {}  packets {}  delivered {} MB  utilization {:.3}",
        result.output.dispatched_events,
        summary.total_packets,
        summary.total_delivered_bytes / 1_000_000,
        summary.utilization
    );
    let managed = &summary.per_onu[result.managed_onu];
    let mean_us = managed.mean_latency.as_nanos() as f64 / 1_000.0;
    let target_us = result.target_latency.as_nanos() as f64 / 1_000.0;
    if result.agent_enabled {
        println!(
            "  ONU {} mean latency {:.1} us vs target {:.1} us ({})",
            result.managed_onu,
            mean_us,
            target_us,
            if managed.mean_latency <= result.target_latency {
                "met"
            } else {
                "missed"
            }
        );
    } else {
        println!(
            "  ONU {} mean latency {:.1} us (agent off)",
            result.managed_onu, mean_us
        );
    }
    Ok(())
}

fn classify(err: ScenarioError) -> (u8, String) {
    let code = match err {
        ScenarioError::Invalid(_)
        | ScenarioError::Parse { .. }
        | ScenarioError::EmptyComparison
        | ScenarioError::WindowMismatch(_) => EXIT_VALIDATION,
        _ => EXIT_RUNTIME,
    };
    (code, err.to_string())
}

fn cmd_validate(path: &Path) -> Result<(), (u8, String)> {
    let cfg = ScenarioConfig::load(path).map_err(classify)?;
    cfg.validate().map_err(classify)?;
    println!("{}: OK", path.display());
    Ok(())
}

fn cmd_compare(dirs: &[PathBuf]) -> Result<(), (u8, String)> {
    let rows = compare_runs(dirs).map_err(classify)?;
    print!("{}", render_comparison(&rows));
    Ok(())
}

fn cmd_guard_budget(args: &GuardBudgetArgs) -> Result<(), (u8, String)> {
    let budget = GuardBudget {
        laser_off_ns: args.laser_off,
        laser_on_ns: args.laser_on,
        tia_settle_ns: args.tia_settle,
        cdr_lock_ns: args.cdr_lock,
        margin_ns: args.margin,
    };
    let verdict = guard_budget(&budget, SimTime::from_nanos(args.guard));
    println!(
        "laser_off {} + laser_on {} + tia_settle {} + cdr_lock {} + margin {} = {} ns",
        budget.laser_off_ns,
        budget.laser_on_ns,
        budget.tia_settle_ns,
        budget.cdr_lock_ns,
        budget.margin_ns,
        verdict.total_ns
    );
    println!("{verdict}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Validate { scenario } => cmd_validate(scenario),
        Command::Compare { dirs } => cmd_compare(dirs),
        Command::GuardBudget(args) => cmd_guard_budget(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
