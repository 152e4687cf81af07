//! `dexperts` command-line driver.
//!
//! Exit codes: 0 on success, 2 for usage or configuration errors, 1 when a
//! run fails.

pub mod selftest;
pub mod settings;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use dexperts_core::harness::{persist_results, run_diffdist, run_trial_with, DiffDistParams, TrialOptions};
use dexperts_core::netsim::write_transcript;
use dexperts_core::protocols::build;
use dexperts_core::{run_experiment, validate_config, Error, ExperimentConfig};

use settings::{build_config, CommonArgs, UsageError};

#[derive(Debug, Parser)]
#[command(name = "dexperts", version, about = "Distributed experts simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one configuration and write regret.csv, comm.json and config.json
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Also write the first trial's channel events to transcript.tsv
        #[arg(long)]
        transcript: bool,
    },
    /// Distinguish fair and biased bit streams with a regret minimizer as
    /// oracle (defaults: ewa, n=50, T=5000, 30 trials)
    Diffdist {
        #[command(flatten)]
        common: CommonArgs,
        /// Target regret R (default 1/(2+sqrt(2 ln 24)))
        #[arg(long)]
        r: Option<f64>,
    },
    /// Run one configuration per value of a single field
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// be, eta, T or protocol
        #[arg(long)]
        vary: String,
        /// Comma-separated values
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<String>,
    },
    /// Quick invariant checks
    Selftest,
}

#[derive(Debug)]
pub enum CliError {
    Usage(UsageError),
    Run(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(e) if e.is_config() => 2,
            CliError::Run(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(e) => write!(f, "{e}"),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

impl From<UsageError> for CliError {
    fn from(e: UsageError) -> Self {
        CliError::Usage(e)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(UsageError(msg.into()))
}

fn validated(cfg: ExperimentConfig) -> Result<ExperimentConfig, CliError> {
    validate_config(cfg).map_err(|e| CliError::Run(Error::InvalidConfig(e)))
}

fn out_dir(settings: &BTreeMap<String, String>) -> PathBuf {
    PathBuf::from(settings.get("out").map(String::as_str).unwrap_or("results"))
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("DEXPERTS_THREADS") {
        let threads: usize = v
            .parse()
            .ok()
            .filter(|t| *t > 0)
            .ok_or_else(|| usage(format!("DEXPERTS_THREADS: expected a positive integer, got {v:?}")))?;
        // A pool built earlier in the same process keeps its size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    Ok(())
}

fn reject_diffdist_stream(settings: &BTreeMap<String, String>, sub: &str) -> Result<(), CliError> {
    if settings.get("dist").map(String::as_str) == Some("diffdist") {
        return Err(usage(format!("--dist diffdist is only valid with the diffdist subcommand, not {sub}")));
    }
    Ok(())
}

fn cmd_run(common: &CommonArgs, transcript: bool) -> Result<String, CliError> {
    let settings = common.settings()?;
    reject_diffdist_stream(&settings, "run")?;
    let cfg = validated(build_config(&settings)?)?;
    let summary = run_experiment(&cfg)?;
    let out = out_dir(&settings);
    persist_results(&summary, &out, Some(&settings))?;
    if transcript {
        let opts = TrialOptions { record_events: true, ..TrialOptions::default() };
        let trial = run_trial_with(&cfg, 0, build(&cfg).as_mut(), &opts)?;
        let path = out.join("transcript.tsv");
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_transcript(trial.ledger.events().unwrap_or(&[]), std::io::BufWriter::new(file))
            .map_err(|e| Error::io(&path, e))?;
    }
    Ok(format!(
        "{} trials of {}: final average regret {:.6}, mean words {:.0}, EWA ratio {:.5}; results in {}\n",
        summary.trials,
        cfg.protocol,
        summary.final_regret_mean(),
        summary.mean_total_words,
        summary.ewa_ratio,
        out.display()
    ))
}

fn cmd_diffdist(common: &CommonArgs, r: Option<f64>) -> Result<String, CliError> {
    let mut settings = common.settings()?;
    if let Some(d) = settings.get("dist") {
        if d != "diffdist" {
            return Err(usage(format!("--dist {d} conflicts with the diffdist subcommand")));
        }
    }
    for (k, v) in [("protocol", "ewa"), ("n", "50"), ("T", "5000"), ("trials", "30"), ("dist", "diffdist")] {
        settings.entry(k.to_string()).or_insert_with(|| v.to_string());
    }
    let cfg = validated(build_config(&settings)?)?;
    let r = r.unwrap_or_else(DiffDistParams::default_r);
    let report = run_diffdist(&cfg, r, cfg.trials)?;
    let out = out_dir(&settings);
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let path = out.join("diffdist.json");
    let mut text = serde_json::to_string_pretty(&report).map_err(|e| Error::Invalid(e.to_string()))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(format!(
        "{} trials with oracle {}: accuracy {:.3} (threshold {:.4}); report in {}\n",
        report.outcomes.len(),
        report.oracle,
        report.accuracy,
        report.params.threshold,
        path.display()
    ))
}

const SWEEP_FIELDS: &[&str] = &["be", "eta", "T", "protocol"];

fn cmd_sweep(common: &CommonArgs, vary: &str, values: &[String]) -> Result<String, CliError> {
    if !SWEEP_FIELDS.contains(&vary) {
        return Err(usage(format!("--vary: expected one of {SWEEP_FIELDS:?}, got {vary:?}")));
    }
    let values: Vec<&String> = values.iter().filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err(usage("--values: the sweep needs at least one value"));
    }
    let settings = common.settings()?;
    reject_diffdist_stream(&settings, "sweep")?;
    let out = out_dir(&settings);
    let base_seed: u64 = build_config(&settings)?.seed;
    // Validate every point before running any.
    let mut runs = Vec::new();
    for (k, v) in values.iter().enumerate() {
        let mut s = settings.clone();
        s.insert(vary.to_string(), v.to_string());
        let mut cfg = build_config(&s)?;
        cfg.seed = base_seed + k as u64;
        runs.push((v.as_str(), s, validated(cfg)?));
    }
    let mut summary = String::from("value,final_regret_mean,total_words_mean,ewa_ratio\n");
    for (v, s, cfg) in &runs {
        let result = run_experiment(cfg)?;
        let dir = out.join(format!("{vary}={}", v.replace(['/', '\\'], "_")));
        persist_results(&result, &dir, Some(s))?;
        writeln!(summary, "{v},{},{},{}", result.final_regret_mean(), result.mean_total_words, result.ewa_ratio)
            .expect("writing to a string");
    }
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let path = out.join("summary.csv");
    fs::write(&path, &summary).map_err(|e| Error::io(&path, e))?;
    Ok(format!("{} sweep points over {vary}; summary in {}\n", runs.len(), path.display()))
}

fn cmd_selftest() -> (String, bool) {
    let checks = selftest::run_checks(dexperts_core::gamma_norm);
    let mut text = String::new();
    for c in &checks {
        let status = if c.pass { "ok  " } else { "FAIL" };
        writeln!(text, "{status} {}: {}", c.name, c.detail).expect("writing to a string");
    }
    (text, checks.iter().all(|c| c.pass))
}

/// Parse `args` and run the command, printing to stdout/stderr. Returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return e.exit_code();
    }
    let result = match &cli.command {
        Command::Run { common, transcript } => cmd_run(common, *transcript),
        Command::Diffdist { common, r } => cmd_diffdist(common, *r),
        Command::Sweep { common, vary, values } => cmd_sweep(common, vary, values),
        Command::Selftest => {
            let (text, ok) = cmd_selftest();
            print!("{text}");
            return if ok { 0 } else { 1 };
        }
    };
    match result {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Whether `path` holds the three files written by `run`.
pub fn has_results(path: &Path) -> bool {
    ["regret.csv", "comm.json", "config.json"].iter().all(|f| path.join(f).is_file())
}
