//! Command-line front end: run workflows, check traces, score topologies,
//! analyse ratings and build counterbalancing designs.
//!
//! Machine output is one JSON document per line on stdout; `--pretty`
//! switches to indented JSON. Exit codes: 0 success, 1 usage, 2 round
//! limit, 3 deadlock, 4 validation or data error.

pub mod commands;
pub mod trace_check;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub use commands::{cmd_design, cmd_eval, cmd_metrics, cmd_run, cmd_trace, RunSummary};
pub use trace_check::{Check, TraceViolation};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    Usage = 1,
    RoundLimit = 2,
    Deadlock = 3,
    Data = 4,
}

impl From<Exit> for ExitCode {
    fn from(e: Exit) -> Self {
        ExitCode::from(e as u8)
    }
}

/// Misuse that only shows up after parsing, reported with exit code 1.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

#[derive(Debug, Parser)]
#[command(name = "omnigraph", version, about = "Multi-agent workflow engine and rating analysis")]
pub struct Cli {
    /// Indented JSON instead of JSON lines.
    #[arg(long, global = true)]
    pub pretty: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Execute a workflow and write its trace and artifacts.
    Run(RunArgs),
    /// Check invariants over one or more trace files.
    Trace(TraceArgs),
    /// Centralization and hierarchy scores of a workflow graph.
    Metrics(MetricsArgs),
    /// Aggregate a ratings CSV and run the requested tests.
    Eval(EvalArgs),
    /// Latin or Williams counterbalancing design.
    Design(DesignArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub workflow: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the workflow's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the workflow's `max_rounds`.
    #[arg(long)]
    pub max_rounds: Option<u32>,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    /// Trace file; repeat for the determinism check.
    #[arg(long = "in", required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long = "assert", required = true)]
    pub checks: Vec<Check>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub workflow: PathBuf,
    /// Score only the forward edges.
    #[arg(long)]
    pub forward_only: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ratings: PathBuf,
    /// Comma-separated subset of friedman,wilcoxon,bvo; omitted or empty
    /// means aggregation only.
    #[arg(long, default_value = "")]
    pub tests: String,
    #[arg(long, default_value = "prompt")]
    pub group_by: omnigraph_evalstats::GroupBy,
    /// Comma-separated baseline models for the contrast.
    #[arg(long, value_delimiter = ',')]
    pub baselines: Option<Vec<String>>,
    /// Comma-separated models pooled as "ours" for the contrast.
    #[arg(long, value_delimiter = ',')]
    pub ours: Option<Vec<String>>,
    /// Zero-difference handling for Wilcoxon tests: drop or pratt.
    #[arg(long, default_value = "drop")]
    pub zeros: omnigraph_evalstats::ZeroMethod,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DesignType {
    Latin,
    Williams,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub k: u32,
    #[arg(long = "type")]
    pub kind: DesignType,
}

/// Serializes documents to a writer as JSON lines or pretty JSON.
pub struct Output<W: Write> {
    out: W,
    pretty: bool,
}

impl<W: Write> Output<W> {
    pub fn new(out: W, pretty: bool) -> Self {
        Output { out, pretty }
    }

    pub fn emit(&mut self, value: &impl Serialize) -> anyhow::Result<()> {
        let text = if self.pretty {
            serde_json::to_string_pretty(value)?
        } else {
            serde_json::to_string(value)?
        };
        writeln!(self.out, "{text}")?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Parses `args` and runs the selected command, writing documents to `out`
/// and diagnostics to stderr.
pub fn main_with<W: Write>(args: impl IntoIterator<Item = String>, out: W) -> Exit {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { Exit::Usage } else { Exit::Ok };
        }
    };
    let mut out = Output::new(out, cli.pretty);
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a, &mut out).map(|s| s.exit),
        Command::Trace(a) => cmd_trace(a, &mut out),
        Command::Metrics(a) => cmd_metrics(a, &mut out),
        Command::Eval(a) => cmd_eval(a, &mut out),
        Command::Design(a) => cmd_design(a, &mut out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                Exit::Usage
            } else {
                Exit::Data
            }
        }
    }
}
