//! Command-line front end.
//!
//! Exit codes: 0 success, 1 verification reject (or a failed check), 2 bad
//! config or any other error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::{self, ExperimentConfig, SweepConfig, SCHEMA};
use crate::phasespace::{self, LinearObservable};
use crate::planner::{self, VerificationPlan};
use crate::protocol;
use crate::witness::{witness_expectation_oracle, ProverModel, WitnessKind};

#[derive(Debug, Parser)]
#[command(name = "cvverify", version, about = "Verification of continuous-variable states and Gaussian channels")]
pub struct Cli {
    /// Log progress to stderr (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute a verification plan and its bounds.
    Plan(PlanArgs),
    /// Run state verification from a JSON config.
    VerifyState(RunArgs),
    /// Run channel verification from a JSON config.
    VerifyChannel(RunArgs),
    /// Empirical check of the concentration inequalities.
    ValidateBounds(BoundsArgs),
    /// Plans and bounds over a parameter grid.
    Sweep(SweepArgs),
    /// Quick invariant checks.
    Selftest,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub epsilon: f64,
    /// Desk plan: give d0, n and l together.
    #[arg(long, requires_all = ["n", "l"])]
    pub d0: Option<u64>,
    #[arg(long, requires_all = ["d0", "l"])]
    pub n: Option<usize>,
    #[arg(long, requires_all = ["d0", "n"])]
    pub l: Option<usize>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config seed; without either, the OS supplies one.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Write the transcript of trial 0 as JSON lines.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    /// Comma-separated subset of serfling, lemma1.
    #[arg(long, default_value = "serfling,lemma1", value_delimiter = ',')]
    pub lemma: Vec<String>,
    #[arg(long, default_value_t = 10_000)]
    pub populations: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

/// Pretty JSON with a trailing newline, to a file or stdout.
pub fn emit_report<T: Serialize>(report: &T, path: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    emit_text(&text, path)
}

fn emit_text(text: &str, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
        }
    }
    Ok(())
}

fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Thread count after applying the CVVERIFY_THREADS cap.
fn threads(requested: Option<usize>) -> Option<usize> {
    let cap = std::env::var("CVVERIFY_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|&v| v > 0);
    match (requested, cap) {
        (Some(r), Some(c)) => Some(r.min(c)),
        (r, c) => r.or(c),
    }
}

fn log(verbose: u8, msg: &str) {
    if verbose > 0 {
        eprintln!("cvverify: {msg}");
    }
}

#[derive(Serialize)]
struct PlanOutput {
    schema: u32,
    #[serde(flatten)]
    report: planner::PlanReport,
}

fn cmd_plan(a: &PlanArgs) -> Result<i32> {
    let plan = match (a.d0, a.n, a.l) {
        (Some(d0), Some(n), Some(l)) => VerificationPlan::desk(a.k, a.m, a.epsilon, d0, n, l)?,
        _ => planner::build_plan(a.k, a.m, a.epsilon)?,
    };
    emit_report(&PlanOutput { schema: SCHEMA, report: planner::plan_report(&plan)? }, a.output.as_deref())?;
    Ok(0)
}

fn cmd_verify(a: &RunArgs, channel: bool, verbose: u8) -> Result<i32> {
    let mut cfg: ExperimentConfig = read_config(&a.config)?;
    let seed = a.seed.or(cfg.seed).unwrap_or_else(rand::random);
    if let Some(t) = a.trials {
        cfg.trials = t;
    }
    cfg.threads = threads(a.threads.or(cfg.threads));
    let kind = cfg.target.kind()?;
    if kind.is_channel() != channel {
        let want = if channel { "a channel" } else { "a state" };
        return Err(Error::Config(format!("{} needs {want} target, got {}", a.config.display(), kind.tag())));
    }
    log(verbose, &format!("{} trials, seed {seed}", cfg.trials));
    let report = harness::run_experiment(&cfg, seed)?;
    if let Some(path) = &a.transcript {
        let (_, plan, exp) = cfg.resolve()?;
        let out = harness::run_trial(&plan, &exp, seed, 0)?;
        emit_text(&protocol::transcript_jsonl(&out.transcript)?, Some(path))?;
    }
    emit_report(&report, a.output.as_deref())?;
    Ok(if report.accepted() { 0 } else { 1 })
}

fn cmd_bounds(a: &BoundsArgs) -> Result<i32> {
    let seed = a.seed.unwrap_or_else(rand::random);
    let lemmas: Vec<&str> = a.lemma.iter().map(|s| s.trim()).collect();
    let r = harness::validate_concentration(&lemmas, a.populations, seed)?;
    emit_report(&r, a.output.as_deref())?;
    Ok(if r.violations == 0 { 0 } else { 1 })
}

fn cmd_sweep(a: &SweepArgs) -> Result<i32> {
    let cfg: SweepConfig = read_config(&a.config)?;
    let seed = a.seed.unwrap_or_else(rand::random);
    let r = harness::sweep(&cfg, seed, threads(a.threads))?;
    if let Some(p) = &a.csv {
        emit_text(&harness::sweep_csv(&r), Some(p))?;
    }
    emit_report(&r, a.output.as_deref())?;
    Ok(0)
}

#[derive(Serialize)]
struct Check {
    name: &'static str,
    pass: bool,
}

#[derive(Serialize)]
struct SelftestReport {
    schema: u32,
    checks: Vec<Check>,
    pass: bool,
}

fn selftest_checks() -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let vac = phasespace::make_vacuum(1)?;
    let (mean, var) = phasespace::marginal(&vac, &LinearObservable::quadrature(1, 0, 0.3))?;
    checks.push(Check { name: "vacuum_marginal", pass: mean == 0.0 && (var - 0.5).abs() < 1e-12 });
    checks.push(Check { name: "worked_l", pass: planner::compute_l(1, 1, 0.1, 10)?.to_string() == "9738643" });
    let kind = WitnessKind::gaussian_state(phasespace::SymplecticOp::squeezer(0.4));
    let target = phasespace::apply_symplectic(&vac, &kind.gaussian_target().expect("gaussian"))?;
    let w = witness_expectation_oracle(&kind, &ProverModel::Gaussian(target))?;
    checks.push(Check { name: "witness_saturation", pass: (w - 1.0).abs() < 1e-8 });
    let cfg: ExperimentConfig = serde_json::from_str(
        r#"{"target":{"vacuum":{}},"plan":{"m":1,"epsilon":0.2,"d0":50,"n":400,"l":300},"trials":20}"#,
    )?;
    let a = harness::run_experiment(&cfg, 7)?;
    let b = harness::run_experiment(&ExperimentConfig { threads: Some(1), ..cfg }, 7)?;
    checks.push(Check { name: "honest_accepts", pass: a.accept_rate >= 0.9 });
    checks.push(Check { name: "deterministic", pass: serde_json::to_string(&a)? == serde_json::to_string(&b)? });
    Ok(checks)
}

fn cmd_selftest() -> Result<i32> {
    let checks = selftest_checks()?;
    let pass = checks.iter().all(|c| c.pass);
    emit_report(&SelftestReport { schema: SCHEMA, checks, pass }, None)?;
    Ok(if pass { 0 } else { 1 })
}

/// Parses arguments, runs the subcommand and returns the exit code.
pub fn parse_and_dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    let res = match &cli.command {
        Command::Plan(a) => cmd_plan(a),
        Command::VerifyState(a) => cmd_verify(a, false, cli.verbose),
        Command::VerifyChannel(a) => cmd_verify(a, true, cli.verbose),
        Command::ValidateBounds(a) => cmd_bounds(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Selftest => cmd_selftest(),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("cvverify: error: {e}");
            2
        }
    }
}
