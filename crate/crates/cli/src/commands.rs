use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use log::info;
use omnigraph::graph::{build_graph, parse_workflow, validate_spec, Violation, WorkflowDoc, WorkflowGraph};
use omnigraph::scheduler::PruneRecord;
use omnigraph::store::trace_to_bytes;
use omnigraph::topology::topology_report;
use omnigraph::{run_workflow, RunConfig, RunStatus, Runtime};
use omnigraph_evalstats::report::{DEFAULT_BASELINES, DEFAULT_OURS};
use omnigraph_evalstats::{counterbalance_design, evaluate, read_ratings, DesignKind, EvalOptions, TestKind};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::trace_check::{self, Check, TraceViolation};
use crate::{DesignArgs, DesignType, EvalArgs, Exit, MetricsArgs, Output, RunArgs, TraceArgs, UsageError};

pub const TRACE_FILE: &str = "trace.jsonl";
pub const RESULT_FILE: &str = "result.json";
pub const ARTIFACT_DIR: &str = "artifacts";

#[derive(Debug, Serialize)]
struct ValidationReport<'a> {
    error: &'static str,
    violations: Vec<ViolationLine<'a>>,
}

#[derive(Debug, Serialize)]
struct ViolationLine<'a> {
    message: String,
    #[serde(flatten)]
    detail: &'a Violation,
}

/// Reads, validates and builds a workflow. Violations are emitted as one
/// document before the error is returned.
fn load_workflow<W: Write>(
    path: &Path,
    runtime: &Runtime,
    out: &mut Output<W>,
) -> anyhow::Result<(WorkflowDoc, WorkflowGraph)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let doc = parse_workflow(&text).with_context(|| format!("parsing {}", path.display()))?;
    let violations = validate_spec(&doc, runtime);
    if !violations.is_empty() {
        out.emit(&ValidationReport {
            error: "validation",
            violations: violations
                .iter()
                .map(|v| ViolationLine {
                    message: v.to_string(),
                    detail: v,
                })
                .collect(),
        })?;
        for v in &violations {
            eprintln!("{}: {v}", path.display());
        }
        bail!("{} failed validation with {} violation(s)", path.display(), violations.len());
    }
    let graph = build_graph(&doc, runtime).with_context(|| format!("building {}", path.display()))?;
    Ok((doc, graph))
}

/// The one-line summary printed by `run`.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub status: RunStatus,
    pub rounds: u32,
    pub prunes: Vec<PruneRecord>,
    pub failures: usize,
    pub events: usize,
    pub trace: PathBuf,
    pub trace_sha256: String,
    #[serde(skip)]
    pub exit: Exit,
}

pub fn cmd_run<W: Write>(args: &RunArgs, out: &mut Output<W>) -> anyhow::Result<RunSummary> {
    let runtime = Runtime::from_env();
    let (doc, mut graph) = load_workflow(&args.workflow, &runtime, out)?;
    let mut config = RunConfig::from_doc(&doc);
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(max_rounds) = args.max_rounds {
        config.max_rounds = max_rounds;
    }
    info!("running {} with {config:?}", args.workflow.display());
    let outcome = run_workflow(&mut graph, &runtime, config)?;

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let bytes = trace_to_bytes(&outcome.trace)?;
    let trace = args.out.join(TRACE_FILE);
    fs::write(&trace, &bytes).with_context(|| format!("writing {}", trace.display()))?;
    fs::write(
        args.out.join(RESULT_FILE),
        serde_json::to_string_pretty(&outcome.result)? + "\n",
    )?;
    outcome.store.dump_artifacts(&args.out.join(ARTIFACT_DIR))?;

    let result = outcome.result;
    let summary = RunSummary {
        status: result.status,
        rounds: result.rounds_executed,
        prunes: result.prune_log,
        failures: result.failures.len(),
        events: outcome.trace.len(),
        trace,
        trace_sha256: hex::encode(Sha256::digest(&bytes)),
        exit: match result.status {
            RunStatus::Completed => Exit::Ok,
            RunStatus::RoundLimitExceeded => Exit::RoundLimit,
            RunStatus::Deadlock => Exit::Deadlock,
        },
    };
    out.emit(&summary)?;
    Ok(summary)
}

#[derive(Debug, Serialize)]
struct TraceSummary<'a> {
    checks: &'a [Check],
    files: usize,
    events: usize,
    violations: usize,
}

pub fn cmd_trace<W: Write>(args: &TraceArgs, out: &mut Output<W>) -> anyhow::Result<Exit> {
    let checks: Vec<Check> = args.checks.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if checks.contains(&Check::Determinism) && args.inputs.len() < 2 {
        return Err(UsageError("--assert determinism needs at least two --in traces".into()).into());
    }
    let mut traces = Vec::with_capacity(args.inputs.len());
    for path in &args.inputs {
        let events = omnigraph::load_trace(path).with_context(|| format!("loading {}", path.display()))?;
        if let Err((seq, e)) = trace_check::replay(&events) {
            bail!("{}: corrupt trace at seq {seq}: {e}", path.display());
        }
        traces.push((path.clone(), events));
    }

    let mut violations: Vec<TraceViolation> = Vec::new();
    for check in &checks {
        match check {
            Check::DagRecovered => {
                for (path, events) in &traces {
                    violations.extend(trace_check::dag_recovered(events).into_iter().map(|v| v.in_file(path)));
                }
            }
            Check::Counters => {
                for (path, events) in &traces {
                    violations.extend(trace_check::counters(events).into_iter().map(|v| v.in_file(path)));
                }
            }
            Check::Determinism => violations.extend(trace_check::determinism(&traces)),
        }
    }
    for v in &violations {
        out.emit(v)?;
        eprintln!("{v}");
    }
    out.emit(&TraceSummary {
        checks: &checks,
        files: traces.len(),
        events: traces.iter().map(|(_, e)| e.len()).sum(),
        violations: violations.len(),
    })?;
    Ok(if violations.is_empty() { Exit::Ok } else { Exit::Data })
}

pub fn cmd_metrics<W: Write>(args: &MetricsArgs, out: &mut Output<W>) -> anyhow::Result<Exit> {
    let runtime = Runtime::from_env();
    let (_, graph) = load_workflow(&args.workflow, &runtime, out)?;
    out.emit(&topology_report(&graph, args.forward_only))?;
    Ok(Exit::Ok)
}

fn parse_tests(list: &str) -> anyhow::Result<BTreeSet<TestKind>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<TestKind>().map_err(|e| UsageError(e).into()))
        .collect()
}

pub fn cmd_eval<W: Write>(args: &EvalArgs, out: &mut Output<W>) -> anyhow::Result<Exit> {
    let tests = parse_tests(&args.tests)?;
    let file = fs::File::open(&args.ratings).with_context(|| format!("opening {}", args.ratings.display()))?;
    let records = read_ratings(file).with_context(|| format!("reading {}", args.ratings.display()))?;
    let owned = |names: &[&str]| names.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let opts = EvalOptions {
        tests,
        group_by: args.group_by,
        baselines: args.baselines.clone().unwrap_or_else(|| owned(&DEFAULT_BASELINES)),
        ours: args.ours.clone().unwrap_or_else(|| owned(&DEFAULT_OURS)),
        zeros: args.zeros,
    };
    let report = evaluate(&records, &opts)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    out.emit(&report)?;
    Ok(Exit::Ok)
}

pub fn cmd_design<W: Write>(args: &DesignArgs, out: &mut Output<W>) -> anyhow::Result<Exit> {
    let kind = match args.kind {
        DesignType::Latin => DesignKind::Latin,
        DesignType::Williams => DesignKind::Williams,
    };
    out.emit(&counterbalance_design(args.k as usize, kind))?;
    Ok(Exit::Ok)
}
