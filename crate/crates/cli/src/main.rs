//! `ppaf`: run failover and dueling-proposer scenarios, compare backoff
//! policies and run the property suite.

use clap::{Args, Parser, Subcommand, ValueEnum};
use ppaf::check::{self, agreement::AcceptorRule, CheckOptions};
use ppaf::scheduler::BackoffPolicy;
use ppaf::sim::config::{ScenarioConfig, ScenarioKind};
use ppaf::sim::metrics::MetricsRecord;
use ppaf::sim::{self, scenarios, trace, SimError};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_VIOLATION: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "ppaf", version, about = "Per-partition failover simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario for one or more consecutive seeds.
    Run(RunArgs),
    /// Sweep backoff policies and proposer counts of a dueling scenario.
    Compare(CompareArgs),
    /// Run the property suite.
    Check(CheckArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Policy {
    Static,
    Adaptive,
}

impl From<Policy> for BackoffPolicy {
    fn from(p: Policy) -> Self {
        match p {
            Policy::Static => BackoffPolicy::Static,
            Policy::Adaptive => BackoffPolicy::Adaptive,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file, TOML or JSON (by extension).
    #[arg(long)]
    config: PathBuf,
    /// First seed; defaults to the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of consecutive seeds to run.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    runs: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum)]
    policy: Option<Policy>,
    /// Proposer count of a dueling scenario.
    #[arg(long)]
    proposers: Option<usize>,
    /// Write the full event trace of every run.
    #[arg(long, value_enum, default_value = "off")]
    trace: Switch,
}

#[derive(Args)]
struct CompareArgs {
    /// Dueling scenario file; defaults to the built-in one-hour scenario.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed; run i of every cell uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    runs: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Restrict the sweep to one policy.
    #[arg(long, value_enum)]
    policy: Option<Policy>,
    /// Restrict the sweep to one proposer count instead of 3, 5, 7 and 9.
    #[arg(long)]
    proposers: Option<usize>,
    #[arg(long, value_enum, default_value = "off")]
    trace: Switch,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Agreement trials.
    #[arg(long, default_value_t = 10_000)]
    runs: u64,
    /// Test fixture: acceptors drop their accepted value from promises.
    #[arg(long, hide = true)]
    inject_acceptor_bug: bool,
}

/// One CSV row per run. Column order is part of the output format.
#[derive(Serialize)]
struct RunRow {
    scenario: String,
    seed: u64,
    policy: String,
    proposers: usize,
    sim_hours: f64,
    lease_windows: u64,
    failures: u64,
    failure_rate: f64,
    cas_conflicts: u64,
    p50_recovery_s: Option<f64>,
    max_recovery_s: Option<f64>,
    lost_writes: u64,
}

impl From<&MetricsRecord> for RunRow {
    fn from(m: &MetricsRecord) -> Self {
        RunRow {
            scenario: m.scenario.clone(),
            seed: m.seed,
            policy: m.policy.clone(),
            proposers: m.proposers,
            sim_hours: m.sim_hours,
            lease_windows: m.lease_windows_total,
            failures: m.lease_windows_failed,
            failure_rate: m.failure_rate,
            cas_conflicts: m.cas_conflicts,
            p50_recovery_s: m.p50_recovery_s(),
            max_recovery_s: m.max_recovery_s(),
            lost_writes: m.lost_writes,
        }
    }
}

#[derive(Serialize)]
struct CompareRow {
    scenario: String,
    policy: String,
    proposers: usize,
    runs: u64,
    lease_windows: u64,
    failures: u64,
    mean_failure_rate: f64,
    ci95_low: Option<f64>,
    ci95_high: Option<f64>,
    mean_cas_conflicts: f64,
}

/// Error carrying the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::Check(a) => cmd_check(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load(path: &Path) -> Result<ScenarioConfig, Failure> {
    ScenarioConfig::load(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn apply_overrides(
    cfg: &mut ScenarioConfig,
    seed: Option<u64>,
    policy: Option<Policy>,
    proposers: Option<usize>,
) -> Result<(), Failure> {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(p) = policy {
        cfg.backoff_policy = p.into();
    }
    if let Some(n) = proposers {
        if cfg.scenario != ScenarioKind::Dueling {
            return Err(Failure::usage("--proposers applies to dueling scenarios only"));
        }
        cfg.proposers = Some(n);
    }
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::usage(format!("{}: {e}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let f = File::create(path).map_err(io_err(path))?;
    serde_json::to_writer_pretty(BufWriter::new(f), value).map_err(|e| Failure::usage(e.to_string()))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), Failure> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| Failure::usage(e.to_string()))?;
    }
    w.flush().map_err(io_err(path))
}

fn write_trace(path: &Path, records: &[trace::TraceRecord]) -> Result<(), Failure> {
    let f = File::create(path).map_err(io_err(path))?;
    trace::write_jsonl(BufWriter::new(f), records).map_err(io_err(path))
}

fn trace_name(cfg: &ScenarioConfig) -> String {
    let proposers = cfg.proposers.map(|p| format!("-p{p}")).unwrap_or_default();
    format!(
        "trace-{}-{}{proposers}-{}.jsonl",
        cfg.display_name(),
        cfg.backoff_policy.as_str(),
        cfg.seed
    )
}

/// Runs every config in parallel. Traces are written for all runs when
/// `keep_trace` is set and for every run that violates an invariant.
fn run_all(cfgs: &[ScenarioConfig], keep_trace: bool, out: &Path) -> Result<Vec<MetricsRecord>, Failure> {
    let results: Vec<_> = cfgs.par_iter().map(|c| sim::run(c, keep_trace)).collect();
    let mut metrics = Vec::with_capacity(cfgs.len());
    let mut violations = Vec::new();
    for (cfg, r) in cfgs.iter().zip(results) {
        match r {
            Ok(o) => {
                if keep_trace {
                    write_trace(&out.join(trace_name(cfg)), &o.trace)?;
                }
                metrics.push(o.metrics);
            }
            Err(SimError::Invariant { at, what, trace }) => {
                let path = out.join(format!("violation-{}", trace_name(cfg)));
                write_trace(&path, &trace)?;
                violations.push(format!(
                    "seed {}: invariant violated at {at}: {what} (trace in {})",
                    cfg.seed,
                    path.display()
                ));
            }
        }
    }
    if violations.is_empty() {
        Ok(metrics)
    } else {
        Err(Failure {
            code: EXIT_VIOLATION,
            message: violations.join("\n"),
        })
    }
}

fn cmd_run(a: &RunArgs) -> Result<(), Failure> {
    let mut cfg = load(&a.config)?;
    apply_overrides(&mut cfg, a.seed, a.policy, a.proposers)?;
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    write_json(&a.out.join("config.json"), &cfg)?;
    let cfgs: Vec<ScenarioConfig> = (0..a.runs)
        .map(|i| ScenarioConfig {
            seed: cfg.seed + i,
            ..cfg.clone()
        })
        .collect();
    let metrics = run_all(&cfgs, a.trace == Switch::On, &a.out)?;
    let rows: Vec<RunRow> = metrics.iter().map(RunRow::from).collect();
    write_csv(&a.out.join("metrics.csv"), &rows)?;
    for r in &rows {
        println!(
            "{} seed={} policy={} failure_rate={:.6} conflicts={} lost_writes={}",
            r.scenario, r.seed, r.policy, r.failure_rate, r.cas_conflicts, r.lost_writes
        );
    }
    Ok(())
}

/// Mean and two-sided 95% Student-t interval; no interval for one sample.
fn mean_ci(xs: &[f64]) -> (f64, Option<(f64, f64)>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = StudentsT::new(0.0, 1.0, n - 1.0)
        .expect("degrees of freedom are positive")
        .inverse_cdf(0.975);
    let half = t * (var / n).sqrt();
    (mean, Some((mean - half, mean + half)))
}

fn cmd_compare(a: &CompareArgs) -> Result<(), Failure> {
    let mut base = match &a.config {
        Some(p) => load(p)?,
        None => scenarios::dueling(3, BackoffPolicy::Static, 1),
    };
    if base.scenario != ScenarioKind::Dueling {
        return Err(Failure::usage("compare needs a dueling scenario"));
    }
    apply_overrides(&mut base, a.seed, None, None)?;
    let policies = match a.policy {
        Some(p) => vec![p],
        None => vec![Policy::Static, Policy::Adaptive],
    };
    let counts = a.proposers.map_or_else(|| vec![3, 5, 7, 9], |n| vec![n]);
    let mut cells = Vec::new();
    for &p in &policies {
        for &n in &counts {
            let mut c = base.clone();
            apply_overrides(&mut c, None, Some(p), Some(n))?;
            cells.push(c);
        }
    }
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    write_json(&a.out.join("config.json"), &base)?;
    let cfgs: Vec<ScenarioConfig> = cells
        .iter()
        .flat_map(|c| {
            (0..a.runs).map(move |i| ScenarioConfig {
                seed: c.seed + i,
                ..c.clone()
            })
        })
        .collect();
    let metrics = run_all(&cfgs, a.trace == Switch::On, &a.out)?;
    let rows: Vec<RunRow> = metrics.iter().map(RunRow::from).collect();
    write_csv(&a.out.join("metrics.csv"), &rows)?;
    let summary: Vec<CompareRow> = cells
        .iter()
        .zip(metrics.chunks(a.runs as usize))
        .map(|(c, ms)| {
            let rates: Vec<f64> = ms.iter().map(|m| m.failure_rate).collect();
            let (mean, ci) = mean_ci(&rates);
            CompareRow {
                scenario: c.display_name(),
                policy: c.backoff_policy.as_str().to_owned(),
                proposers: c.proposers.unwrap_or_default(),
                runs: a.runs,
                lease_windows: ms.iter().map(|m| m.lease_windows_total).sum(),
                failures: ms.iter().map(|m| m.lease_windows_failed).sum(),
                mean_failure_rate: mean,
                ci95_low: ci.map(|c| c.0),
                ci95_high: ci.map(|c| c.1),
                mean_cas_conflicts: ms.iter().map(|m| m.cas_conflicts as f64).sum::<f64>() / ms.len() as f64,
            }
        })
        .collect();
    write_csv(&a.out.join("compare.csv"), &summary)?;
    println!("policy    proposers  mean_failure_rate  ci95                    mean_conflicts");
    for r in &summary {
        let ci = match (r.ci95_low, r.ci95_high) {
            (Some(l), Some(h)) => format!("[{l:.6}, {h:.6}]"),
            _ => String::new(),
        };
        println!(
            "{:<9} {:>9}  {:>17.6}  {ci:<22}  {:>14.1}",
            r.policy, r.proposers, r.mean_failure_rate, r.mean_cas_conflicts
        );
    }
    Ok(())
}

fn cmd_check(a: &CheckArgs) -> Result<(), Failure> {
    println!("ppaf check seed={} agreement_trials={}", a.seed, a.runs);
    let opts = CheckOptions {
        agreement_trials: a.runs,
        acceptor_rule: if a.inject_acceptor_bug {
            AcceptorRule::ForgetsAcceptedOnPromise
        } else {
            AcceptorRule::Correct
        },
        ..CheckOptions::default()
    };
    let results = check::run_all(a.seed, &opts);
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed == 0 {
        println!("all {} properties hold", results.len());
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_VIOLATION,
            message: format!("{failed} of {} properties failed", results.len()),
        })
    }
}
