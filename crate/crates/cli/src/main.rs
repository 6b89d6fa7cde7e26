//! `realchart`: ingest price data, serve contests, run bot simulations and
//! audit event logs.
//!
//! Exit status is 0 on success, 1 when a check or run fails and 2 on a usage
//! error. Failures are also written to stderr as one JSON object.

mod commands;
mod config;
mod manifest;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use realchart::bots::{BotKind, FeatureKind};
use realchart::engine::Mode;
use realchart::store::LogViolation;
use serde_json::json;
use thiserror::Error;

#[derive(Parser, Debug)]
#[command(name = "realchart", version, about = "Real-vs-permuted price chart contests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load a price CSV and register it under a codename.
    Ingest(IngestArgs),
    /// Run the contest server until interrupted.
    Serve(ServeArgs),
    /// Play a contest with bots over the wire protocol on simulated time.
    Simulate(SimulateArgs),
    /// Contest results and p-values from an event log.
    Report(ReportArgs),
    /// Strict audit of an event log.
    ValidateLog(ValidateArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Frequency {
    Daily,
    Tick,
}

impl From<Frequency> for Mode {
    fn from(f: Frequency) -> Self {
        match f {
            Frequency::Daily => Mode::Daily,
            Frequency::Tick => Mode::Tick,
        }
    }
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// CSV with header `date,price` or `timestamp,price`.
    input: PathBuf,
    #[arg(long)]
    codename: String,
    /// Kept server-side, never shown to subjects.
    #[arg(long)]
    source: String,
    #[arg(long, value_enum, default_value = "daily")]
    frequency: Frequency,
    /// Holds `registry.json`.
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    bind: String,
    /// TOML file with one `[[contest]]` table per contest.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data_dir: PathBuf,
    /// Event log, appended to.
    #[arg(long)]
    log: PathBuf,
    /// Per-frame transcript of every connection.
    #[arg(long)]
    transcript: Option<PathBuf>,
    /// Overrides every contest's tick interval.
    #[arg(long)]
    tick_interval_ms: Option<u64>,
    /// Derive every contest seed from this root instead of the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    bot: Option<BotKind>,
    #[arg(long)]
    feature: Option<FeatureKind>,
    /// TOML simulation config. Flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    sessions: Option<usize>,
    #[arg(long)]
    charts: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Shuffle the data before the contest, so neither chart is real.
    #[arg(long)]
    control: bool,
    /// Play on the registered dataset named by the contest codename.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Event log for the simulated guesses.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write a run manifest (JSON) here.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(Args, Debug)]
struct ReportArgs {
    log: PathBuf,
    /// Subjects answering fewer than this share of their trials are excluded.
    #[arg(long, default_value_t = 0.5)]
    min_response_rate: f64,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    log: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

/// Failures with their own exit status.
#[derive(Debug, Error)]
enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error("{} violation(s), first at line {}", .0.len(), .0.first().map_or(0, |v| v.line))]
    Invalid(Vec<LogViolation>),
}

fn fail(kind: &str, code: u8, message: String, violations: Option<&[LogViolation]>) -> ExitCode {
    let mut body = json!({ "error": kind, "message": message });
    if let Some(v) = violations {
        body["violations"] = json!(v);
    }
    eprintln!("{body}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => return fail("usage", 2, e.to_string().trim().to_string(), None),
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();

    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(a),
        Command::Serve(a) => commands::serve(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Report(a) => commands::report(a),
        Command::ValidateLog(a) => commands::validate_log(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => match e.downcast_ref::<Failure>() {
            Some(Failure::Usage(msg)) => fail("usage", 2, msg.clone(), None),
            Some(f @ Failure::Invalid(v)) => fail("validation", 1, f.to_string(), Some(v)),
            None => fail("failure", 1, format!("{e:#}"), None),
        },
    }
}
