//! Per-agent private memory, the artifact store and the execution trace.
//!
//! The store is event-sourced: the scheduler emits [`TraceEvent`]s and the
//! store applies them. Replaying a persisted trace through [`Store::apply`]
//! therefore rebuilds exactly the state of the original run.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::{AgentId, EdgeKind, WorkflowGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Instruction,
    HuddleTurn,
    RevisionRequest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub from: AgentId,
    pub to: AgentId,
    pub round: u32,
    pub seq: u64,
    pub body: String,
    pub kind: MessageKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactLabel {
    Script,
    Storyboard,
    Clip,
    Audio,
    Cut,
    Other,
}

impl ArtifactLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            ArtifactLabel::Script => "script",
            ArtifactLabel::Storyboard => "storyboard",
            ArtifactLabel::Clip => "clip",
            ArtifactLabel::Audio => "audio",
            ArtifactLabel::Cut => "cut",
            ArtifactLabel::Other => "other",
        }
    }
}

impl fmt::Display for ArtifactLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub producer: AgentId,
    pub round: u32,
    pub label: ArtifactLabel,
    pub payload: String,
    pub version: u32,
}

impl Artifact {
    /// Short content digest used in attempt logs.
    pub fn digest(&self) -> String {
        short_digest(self.payload.as_bytes())
    }
}

pub(crate) fn short_digest(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}

/// Instructions an agent addresses to its successors.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionSet {
    pub issuer: Option<AgentId>,
    pub directives: BTreeMap<AgentId, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub round: u32,
    /// Digest of the emitted artifact, or `failed`.
    pub outcome: String,
}

pub const FAILED_OUTCOME: &str = "failed";

/// Private memory M_i plus contact set A_i of one agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentMemory {
    pub owner: AgentId,
    pub dialogs: Vec<Message>,
    pub contact_set: BTreeSet<AgentId>,
    pub attempt_log: Vec<AttemptRecord>,
}

impl AgentMemory {
    fn new(owner: AgentId) -> Self {
        AgentMemory {
            owner,
            dialogs: Vec::new(),
            contact_set: BTreeSet::new(),
            attempt_log: Vec::new(),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StoreError {
    #[error("unknown agent {0:?}")]
    UnknownAgent(AgentId),
    #[error("seq regression on channel {from}->{to}: {seq} after {last}")]
    SeqRegression {
        from: AgentId,
        to: AgentId,
        seq: u64,
        last: u64,
    },
    #[error("artifact from {0:?} has an empty payload")]
    EmptyPayload(AgentId),
    #[error("artifact from {producer:?} has version {got}, expected {expected}")]
    VersionMismatch {
        producer: AgentId,
        got: u32,
        expected: u32,
    },
}

/// All mutable run state that is not graph topology.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Store {
    memories: BTreeMap<AgentId, AgentMemory>,
    artifacts: BTreeMap<AgentId, Vec<Artifact>>,
    channels: BTreeMap<(AgentId, AgentId), u64>,
    activated: BTreeSet<AgentId>,
    pending: BTreeMap<AgentId, Vec<Message>>,
}

impl Store {
    pub fn new<'a>(agents: impl IntoIterator<Item = &'a AgentId>) -> Self {
        let memories = agents
            .into_iter()
            .map(|a| (a.clone(), AgentMemory::new(a.clone())))
            .collect();
        Store {
            memories,
            ..Default::default()
        }
    }

    pub fn for_graph(graph: &WorkflowGraph) -> Self {
        Store::new(graph.agent_ids())
    }

    fn check(&self, id: &AgentId) -> Result<(), StoreError> {
        if self.memories.contains_key(id) {
            Ok(())
        } else {
            Err(StoreError::UnknownAgent(id.clone()))
        }
    }

    pub fn memory(&self, id: &AgentId) -> Option<&AgentMemory> {
        self.memories.get(id)
    }

    pub fn memories(&self) -> impl Iterator<Item = &AgentMemory> {
        self.memories.values()
    }

    /// Next free seq on the `from -> to` channel.
    pub fn next_seq(&self, from: &AgentId, to: &AgentId) -> u64 {
        self.channels
            .get(&(from.clone(), to.clone()))
            .map_or(1, |s| s + 1)
    }

    /// Records `msg` in both endpoints' memories.
    pub fn append_dialog(&mut self, msg: Message) -> Result<(), StoreError> {
        self.check(&msg.from)?;
        self.check(&msg.to)?;
        let key = (msg.from.clone(), msg.to.clone());
        if let Some(&last) = self.channels.get(&key) {
            if msg.seq <= last {
                return Err(StoreError::SeqRegression {
                    from: msg.from,
                    to: msg.to,
                    seq: msg.seq,
                    last,
                });
            }
        }
        self.channels.insert(key, msg.seq);
        let sender = self.memories.get_mut(&msg.from).unwrap();
        sender.contact_set.insert(msg.to.clone());
        sender.dialogs.push(msg.clone());
        let receiver = self.memories.get_mut(&msg.to).unwrap();
        receiver.contact_set.insert(msg.from.clone());
        receiver.dialogs.push(msg);
        Ok(())
    }

    /// Stores an artifact and returns its version. `artifact.version` is
    /// ignored when zero and checked otherwise.
    pub fn put_artifact(&mut self, mut artifact: Artifact) -> Result<u32, StoreError> {
        self.check(&artifact.producer)?;
        if artifact.payload.is_empty() {
            return Err(StoreError::EmptyPayload(artifact.producer));
        }
        let versions = self.artifacts.entry(artifact.producer.clone()).or_default();
        let expected = versions.len() as u32 + 1;
        if artifact.version == 0 {
            artifact.version = expected;
        } else if artifact.version != expected {
            return Err(StoreError::VersionMismatch {
                producer: artifact.producer,
                got: artifact.version,
                expected,
            });
        }
        versions.push(artifact);
        Ok(expected)
    }

    /// Every stored version from `producer`, oldest first.
    pub fn artifact_versions(&self, producer: &AgentId) -> &[Artifact] {
        self.artifacts.get(producer).map_or(&[], Vec::as_slice)
    }

    pub fn latest_artifact(&self, producer: &AgentId) -> Option<&Artifact> {
        self.artifacts.get(producer).and_then(|v| v.last())
    }

    pub fn all_artifacts(&self) -> impl Iterator<Item = &Artifact> {
        self.artifacts.values().flatten()
    }

    pub fn has_emitted(&self, id: &AgentId) -> bool {
        self.latest_artifact(id).is_some()
    }

    pub fn is_activated(&self, id: &AgentId) -> bool {
        self.activated.contains(id)
    }

    pub fn activated(&self) -> &BTreeSet<AgentId> {
        &self.activated
    }

    /// Undelivered instruction and revision messages addressed to `id`.
    pub fn pending(&self, id: &AgentId) -> &[Message] {
        self.pending.get(id).map_or(&[], Vec::as_slice)
    }

    pub fn has_any_pending(&self) -> bool {
        self.pending.values().any(|q| !q.is_empty())
    }

    /// Inputs to the agent's context: inbound dialog from its contacts, and
    /// the latest artifact of each live predecessor.
    pub fn context_inputs(
        &self,
        agent: &AgentId,
        graph: &WorkflowGraph,
    ) -> (Vec<Message>, Vec<Artifact>) {
        let dialogs = self
            .memories
            .get(agent)
            .map(|m| {
                m.dialogs
                    .iter()
                    .filter(|d| &d.to == agent && m.contact_set.contains(&d.from))
                    .cloned()
                    .collect()
            })
            .unwrap_or_default();
        let artifacts = graph
            .predecessors(agent)
            .unwrap_or_default()
            .iter()
            .filter_map(|p| self.latest_artifact(p).cloned())
            .collect();
        (dialogs, artifacts)
    }

    /// Applies one trace event to the store.
    pub fn apply(&mut self, event: &TraceEvent) -> Result<(), StoreError> {
        let agent = &event.agent;
        match &event.body {
            EventBody::Activate { .. } => {
                self.check(agent)?;
                self.activated.insert(agent.clone());
                self.pending.remove(agent);
                self.memories
                    .get_mut(agent)
                    .unwrap()
                    .attempt_log
                    .push(AttemptRecord {
                        round: event.round,
                        outcome: FAILED_OUTCOME.to_owned(),
                    });
            }
            EventBody::EmitArtifact { artifact, .. } => {
                let digest = artifact.digest();
                self.put_artifact(artifact.clone())?;
                if let Some(last) = self
                    .memories
                    .get_mut(agent)
                    .and_then(|m| m.attempt_log.last_mut())
                {
                    last.outcome = digest;
                }
            }
            EventBody::SendInstruction { message, .. } => {
                self.append_dialog(message.clone())?;
                self.pending
                    .entry(message.to.clone())
                    .or_default()
                    .push(message.clone());
            }
            EventBody::HuddleTurn { messages, .. } => {
                for m in messages {
                    self.append_dialog(m.clone())?;
                }
            }
            EventBody::HuddleOpen { .. }
            | EventBody::HuddleClose { .. }
            | EventBody::ReverseTraverse { .. }
            | EventBody::EdgePruned { .. }
            | EventBody::WorkflowDone { .. } => {}
        }
        Ok(())
    }

    /// Rebuilds a store by replaying `events` over fresh memories for `agents`.
    pub fn replay<'a>(
        agents: impl IntoIterator<Item = &'a AgentId>,
        events: &[TraceEvent],
    ) -> Result<Self, StoreError> {
        let mut store = Store::new(agents);
        for e in events {
            store.apply(e)?;
        }
        Ok(store)
    }

    /// Writes one file per stored artifact version, named
    /// `<producer>.<label>.v<version>`.
    pub fn dump_artifacts(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        for a in self.all_artifacts() {
            let name = format!("{}.{}.v{}", a.producer, a.label, a.version);
            fs::write(dir.join(name), a.payload.as_bytes())?;
        }
        Ok(())
    }
}

/// Identifies an edge in trace payloads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeRef {
    pub source: AgentId,
    pub target: AgentId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    RoundLimitExceeded,
    Deadlock,
}

/// Event-specific payload. Serialized as the `event` tag plus `payload`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    Activate {
        attempt: u32,
    },
    EmitArtifact {
        artifact: Artifact,
        tool_calls: Vec<String>,
    },
    SendInstruction {
        message: Message,
        edge: EdgeKind,
    },
    HuddleOpen {
        session: u64,
        participants: Vec<AgentId>,
        levels: Vec<Vec<AgentId>>,
        depth_used: u32,
    },
    HuddleTurn {
        session: u64,
        cycle: u32,
        text: String,
        sufficient: bool,
        messages: Vec<Message>,
    },
    HuddleClose {
        session: u64,
        turns: u32,
        skipped: Vec<AgentId>,
    },
    ReverseTraverse {
        edge: EdgeRef,
        counter: u32,
        budget: u32,
    },
    EdgePruned {
        edge: EdgeRef,
        counter: u32,
        budget: u32,
    },
    WorkflowDone {
        status: RunStatus,
        rounds_executed: u32,
    },
}

impl EventBody {
    pub fn name(&self) -> &'static str {
        match self {
            EventBody::Activate { .. } => "activate",
            EventBody::EmitArtifact { .. } => "emit_artifact",
            EventBody::SendInstruction { .. } => "send_instruction",
            EventBody::HuddleOpen { .. } => "huddle_open",
            EventBody::HuddleTurn { .. } => "huddle_turn",
            EventBody::HuddleClose { .. } => "huddle_close",
            EventBody::ReverseTraverse { .. } => "reverse_traverse",
            EventBody::EdgePruned { .. } => "edge_pruned",
            EventBody::WorkflowDone { .. } => "workflow_done",
        }
    }
}

/// One trace record: `{seq, round, agent, event, payload}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub round: u32,
    pub agent: AgentId,
    #[serde(flatten)]
    pub body: EventBody,
}

impl TraceEvent {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trace events always serialize")
    }
}

/// Single serialization point for a run: allocates trace seqs and applies
/// each event to the store as it is recorded.
#[derive(Debug, Clone, Default)]
pub struct Journal {
    store: Store,
    events: Vec<TraceEvent>,
}

impl Journal {
    pub fn new(store: Store) -> Self {
        Journal {
            store,
            events: Vec::new(),
        }
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn record(
        &mut self,
        round: u32,
        agent: &AgentId,
        body: EventBody,
    ) -> Result<&TraceEvent, StoreError> {
        let event = TraceEvent {
            seq: self.events.len() as u64 + 1,
            round,
            agent: agent.clone(),
            body,
        };
        self.store.apply(&event)?;
        self.events.push(event);
        Ok(self.events.last().unwrap())
    }

    pub fn into_parts(self) -> (Store, Vec<TraceEvent>) {
        (self.store, self.events)
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace io: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: malformed trace record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: expected seq {expected}, found {found}")]
    Gap {
        line: usize,
        expected: u64,
        found: u64,
    },
}

/// Streams trace events as JSON lines, enforcing a gapless seq from 1.
pub struct TraceWriter<W: Write> {
    out: W,
    last: u64,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Self {
        TraceWriter { out, last: 0 }
    }

    pub fn write(&mut self, e: &TraceEvent) -> Result<(), TraceError> {
        if e.seq != self.last + 1 {
            return Err(TraceError::Gap {
                line: self.last as usize + 1,
                expected: self.last + 1,
                found: e.seq,
            });
        }
        self.last = e.seq;
        writeln!(self.out, "{}", e.to_json_line())?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Serializes a full trace to JSON-lines bytes.
pub fn trace_to_bytes(events: &[TraceEvent]) -> Result<Vec<u8>, TraceError> {
    let mut w = TraceWriter::new(Vec::new());
    for e in events {
        w.write(e)?;
    }
    Ok(w.into_inner())
}

pub fn write_trace(path: &Path, events: &[TraceEvent]) -> Result<(), TraceError> {
    fs::write(path, trace_to_bytes(events)?)?;
    Ok(())
}

/// Parses JSON-lines trace text, rejecting gaps and duplicate seqs.
pub fn parse_trace(reader: impl BufRead) -> Result<Vec<TraceEvent>, TraceError> {
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: TraceEvent = serde_json::from_str(&line).map_err(|err| TraceError::Malformed {
            line: i + 1,
            message: err.to_string(),
        })?;
        let expected = events.len() as u64 + 1;
        if e.seq != expected {
            return Err(TraceError::Gap {
                line: i + 1,
                expected,
                found: e.seq,
            });
        }
        events.push(e);
    }
    Ok(events)
}

pub fn load_trace(path: &Path) -> Result<Vec<TraceEvent>, TraceError> {
    parse_trace(BufReader::new(fs::File::open(path)?))
}
