//! Invariant checks over recorded traces, each finding tied to a seq.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use omnigraph::graph::EdgeKind;
use omnigraph::store::{EdgeRef, EventBody, StoreError};
use omnigraph::{AgentId, RunStatus, Store, TraceEvent};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    /// Each agent activates once, after the producers that feed it, with no
    /// traffic on reverse edges.
    DagRecovered,
    /// Reverse-edge counters step by one, never exceed their budget, and the
    /// edge is pruned exactly when the budget is spent.
    Counters,
    /// All traces are identical event for event.
    Determinism,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceViolation {
    pub check: Check,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    pub seq: u64,
    pub message: String,
}

impl TraceViolation {
    fn new(check: Check, seq: u64, message: impl Into<String>) -> Self {
        TraceViolation {
            check,
            file: None,
            seq,
            message: message.into(),
        }
    }

    pub fn in_file(mut self, path: &Path) -> Self {
        self.file = Some(path.to_path_buf());
        self
    }
}

impl fmt::Display for TraceViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(file) = &self.file {
            write!(f, "{}: ", file.display())?;
        }
        let name = self.check.to_possible_value().expect("no skipped variants");
        write!(f, "{} violation at seq {}: {}", name.get_name(), self.seq, self.message)
    }
}

fn edge_key(e: &EdgeRef) -> (AgentId, AgentId) {
    (e.source.clone(), e.target.clone())
}

fn fmt_edge(e: &EdgeRef) -> String {
    format!("{}->{}", e.source, e.target)
}

fn last_seq(events: &[TraceEvent]) -> u64 {
    events.last().map_or(0, |e| e.seq)
}

pub fn dag_recovered(events: &[TraceEvent]) -> Vec<TraceViolation> {
    let v = |seq, msg: String| TraceViolation::new(Check::DagRecovered, seq, msg);
    let mut out = Vec::new();
    let mut activated: BTreeMap<&AgentId, u32> = BTreeMap::new();
    // Forward deliveries as (seq, from, to).
    let mut feeds: Vec<(u64, &AgentId, &AgentId)> = Vec::new();
    for e in events {
        match &e.body {
            EventBody::Activate { .. } => {
                if let Some(first) = activated.insert(&e.agent, e.round) {
                    out.push(v(
                        e.seq,
                        format!("{} activated again in round {} (first in round {first})", e.agent, e.round),
                    ));
                    activated.insert(&e.agent, first);
                }
            }
            EventBody::SendInstruction { message, edge } => match edge {
                EdgeKind::Forward => feeds.push((e.seq, &message.from, &message.to)),
                EdgeKind::Reverse => {
                    out.push(v(e.seq, format!("delivery over reverse edge {}->{}", message.from, message.to)))
                }
            },
            EventBody::ReverseTraverse { edge, .. } => {
                out.push(v(e.seq, format!("reverse edge {} traversed", fmt_edge(edge))))
            }
            _ => {}
        }
    }
    for (seq, from, to) in feeds {
        match (activated.get(from), activated.get(to)) {
            (Some(a), Some(b)) if a < b => {}
            (Some(a), Some(b)) => out.push(v(
                seq,
                format!("{to} (round {b}) did not activate after its producer {from} (round {a})"),
            )),
            (_, None) => out.push(v(seq, format!("{to} never activated despite input from {from}"))),
            (None, _) => out.push(v(seq, format!("{from} sent before activating"))),
        }
    }
    match events.last().map(|e| (e.seq, &e.body)) {
        Some((_, EventBody::WorkflowDone { status: RunStatus::Completed, .. })) => {}
        Some((seq, EventBody::WorkflowDone { status, .. })) => {
            out.push(v(seq, format!("run ended with status {status:?}")))
        }
        _ => out.push(v(last_seq(events), "trace does not end with workflow_done".into())),
    }
    out.sort_by_key(|x| x.seq);
    out
}

#[derive(Debug, Default)]
struct EdgeState {
    counter: u32,
    budget: Option<u32>,
    pruned: bool,
}

pub fn counters(events: &[TraceEvent]) -> Vec<TraceViolation> {
    let v = |seq, msg: String| TraceViolation::new(Check::Counters, seq, msg);
    let mut out = Vec::new();
    let mut edges: BTreeMap<(AgentId, AgentId), EdgeState> = BTreeMap::new();
    let mut awaiting: Option<(u64, AgentId, AgentId)> = None;

    for e in events {
        if let Some((seq, from, to)) = awaiting.take() {
            let matches = matches!(&e.body, EventBody::ReverseTraverse { edge, .. }
                if edge.source == from && edge.target == to);
            if !matches {
                out.push(v(seq, format!("reverse delivery {from}->{to} not followed by its counter update")));
            }
        }
        match &e.body {
            EventBody::SendInstruction {
                message,
                edge: EdgeKind::Reverse,
            } => {
                let key = (message.from.clone(), message.to.clone());
                if edges.get(&key).is_some_and(|s| s.pruned) {
                    out.push(v(e.seq, format!("delivery over pruned edge {}->{}", key.0, key.1)));
                }
                awaiting = Some((e.seq, key.0, key.1));
            }
            EventBody::ReverseTraverse { edge, counter, budget } => {
                let s = edges.entry(edge_key(edge)).or_default();
                let name = fmt_edge(edge);
                if s.pruned {
                    out.push(v(e.seq, format!("{name} traversed after prune")));
                }
                if *counter != s.counter + 1 {
                    out.push(v(e.seq, format!("{name} counter {counter}, expected {}", s.counter + 1)));
                }
                if s.budget.is_some_and(|b| b != *budget) {
                    out.push(v(e.seq, format!("{name} budget changed to {budget}")));
                }
                if counter > budget {
                    out.push(v(e.seq, format!("{name} counter {counter} exceeds budget {budget}")));
                }
                s.counter = *counter;
                s.budget = Some(*budget);
            }
            EventBody::EdgePruned { edge, counter, budget } => {
                let s = edges.entry(edge_key(edge)).or_default();
                let name = fmt_edge(edge);
                if s.pruned {
                    out.push(v(e.seq, format!("{name} pruned twice")));
                }
                if *counter != s.counter {
                    out.push(v(e.seq, format!("{name} pruned at counter {counter}, last seen {}", s.counter)));
                }
                if counter != budget {
                    out.push(v(e.seq, format!("{name} pruned at counter {counter} with budget {budget}")));
                }
                if s.budget.is_some_and(|b| b != *budget) {
                    out.push(v(e.seq, format!("{name} budget changed to {budget}")));
                }
                s.pruned = true;
                s.budget = Some(*budget);
            }
            _ => {}
        }
    }
    if let Some((seq, from, to)) = awaiting {
        out.push(v(seq, format!("reverse delivery {from}->{to} not followed by its counter update")));
    }
    let end = last_seq(events);
    for ((from, to), s) in &edges {
        if !s.pruned && s.budget == Some(s.counter) {
            out.push(v(end, format!("{from}->{to} spent its budget but was never pruned")));
        }
    }
    out.sort_by_key(|x| x.seq);
    out
}

/// Compares every trace against the first.
pub fn determinism(traces: &[(PathBuf, Vec<TraceEvent>)]) -> Vec<TraceViolation> {
    let mut out = Vec::new();
    let Some((first_path, first)) = traces.first() else {
        return out;
    };
    for (path, events) in &traces[1..] {
        let diverged = first.iter().zip(events).find(|(a, b)| a != b).map(|(a, _)| a.seq);
        let seq = diverged.or_else(|| {
            (first.len() != events.len()).then(|| first.len().min(events.len()) as u64 + 1)
        });
        if let Some(seq) = seq {
            out.push(
                TraceViolation::new(
                    Check::Determinism,
                    seq,
                    format!("diverges from {} ({} vs {} events)", first_path.display(), first.len(), events.len()),
                )
                .in_file(path),
            );
        }
    }
    out
}

/// Agents named anywhere in the trace.
fn agents(events: &[TraceEvent]) -> BTreeSet<AgentId> {
    let mut out = BTreeSet::new();
    for e in events {
        out.insert(e.agent.clone());
        match &e.body {
            EventBody::SendInstruction { message, .. } => {
                out.insert(message.from.clone());
                out.insert(message.to.clone());
            }
            EventBody::HuddleTurn { messages, .. } => {
                for m in messages {
                    out.insert(m.from.clone());
                    out.insert(m.to.clone());
                }
            }
            EventBody::HuddleOpen { participants, .. } => out.extend(participants.iter().cloned()),
            _ => {}
        }
    }
    out.remove(&AgentId::new(""));
    out
}

/// Replays the trace into a fresh store; a record the store rejects makes
/// the trace corrupt.
pub fn replay(events: &[TraceEvent]) -> Result<Store, (u64, StoreError)> {
    let agents = agents(events);
    let mut store = Store::new(&agents);
    for e in events {
        store.apply(e).map_err(|err| (e.seq, err))?;
    }
    Ok(store)
}
