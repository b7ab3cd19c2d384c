//! Round-based execution with budgeted reverse edges.
//!
//! Each round runs every ready agent against a snapshot of the store taken
//! at the start of the round; their outputs are committed together at the
//! round barrier, in lexicographic agent order. Revision requests sent over a
//! reverse edge bump that edge's counter at the barrier, and the delivery
//! that brings the counter to the budget is the last one: the edge is pruned
//! for the rest of the run.

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use crate::context::{
    assemble_context, run_huddle, select_huddle_set_until, ContextBundle, HuddleError,
    DEFAULT_D_MAX, DEFAULT_TURN_LIMIT,
};
use crate::graph::{AgentId, EdgeBudget, EdgeKind, LookupError, WorkflowDoc, WorkflowGraph};
use crate::runtime::{ReasoningRequest, ReasoningResponse, Runtime, Successor};
use crate::store::{
    Artifact, EdgeRef, EventBody, Journal, Message, MessageKind, RunStatus, Store, StoreError,
    TraceEvent,
};

pub const DEFAULT_MAX_ROUNDS: u32 = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunConfig {
    pub max_rounds: u32,
    pub seed: u64,
    pub d_max: u32,
    pub turn_limit: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            max_rounds: DEFAULT_MAX_ROUNDS,
            seed: 0,
            d_max: DEFAULT_D_MAX,
            turn_limit: DEFAULT_TURN_LIMIT,
        }
    }
}

impl RunConfig {
    /// Defaults overridden by the tuning keys present in `doc`.
    pub fn from_doc(doc: &WorkflowDoc) -> Self {
        let d = RunConfig::default();
        RunConfig {
            max_rounds: doc.max_rounds.unwrap_or(d.max_rounds),
            seed: doc.seed.unwrap_or(d.seed),
            d_max: doc.d_max.unwrap_or(d.d_max),
            turn_limit: doc.turn_limit.unwrap_or(d.turn_limit),
        }
    }
}

/// Counts one delivery over a reverse edge. Returns the updated budget,
/// dead once the counter reaches the budget, or `None` when the edge is
/// already dead and the delivery must be dropped.
pub fn record_reverse_traversal(budget: EdgeBudget) -> Option<EdgeBudget> {
    if !budget.live {
        return None;
    }
    let counter = budget.counter + 1;
    Some(EdgeBudget {
        counter,
        budget: budget.budget,
        live: counter < budget.budget,
    })
}

/// Agents that should run this round: every forward predecessor has emitted
/// and the agent has undelivered input or has never run, or a revision
/// request is waiting for it.
pub fn ready_set(graph: &WorkflowGraph, store: &Store) -> BTreeSet<AgentId> {
    graph
        .agent_ids()
        .filter(|id| {
            let pending = store.pending(id);
            if pending.iter().any(|m| m.kind == MessageKind::RevisionRequest) {
                return true;
            }
            let preds_done = graph
                .forward_predecessors(id)
                .map(|p| p.iter().all(|k| store.has_emitted(k)))
                .unwrap_or(false);
            preds_done && (!pending.is_empty() || !store.is_activated(id))
        })
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RoundState {
    /// Index of the round that runs next.
    pub t: u32,
    /// Agents that ran in the previous round.
    pub active: BTreeSet<AgentId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Failure {
    pub round: u32,
    pub agent: AgentId,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PruneRecord {
    pub edge: EdgeRef,
    pub round: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WorkflowResult {
    pub rounds_executed: u32,
    pub terminal_artifacts: Vec<Artifact>,
    pub status: RunStatus,
    pub prune_log: Vec<PruneRecord>,
    pub failures: Vec<Failure>,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("agent {agent} has unresolvable reasoning_ref {reasoning_ref:?}")]
    Unresolved {
        agent: AgentId,
        reasoning_ref: String,
    },
    #[error(transparent)]
    Lookup(#[from] LookupError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Huddle(#[from] HuddleError),
}

/// Everything a run leaves behind.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub result: WorkflowResult,
    pub store: Store,
    pub trace: Vec<TraceEvent>,
}

/// Mutable state of one run.
pub struct Engine<'a> {
    graph: &'a mut WorkflowGraph,
    runtime: &'a Runtime,
    config: RunConfig,
    journal: Journal,
    failures: Vec<Failure>,
    prune_log: Vec<PruneRecord>,
    sessions: u64,
}

impl<'a> Engine<'a> {
    pub fn new(
        graph: &'a mut WorkflowGraph,
        runtime: &'a Runtime,
        config: RunConfig,
    ) -> Result<Self, RunError> {
        for spec in graph.agents() {
            if runtime.resolve(&spec.reasoning_ref).is_none() {
                return Err(RunError::Unresolved {
                    agent: spec.id.clone(),
                    reasoning_ref: spec.reasoning_ref.clone(),
                });
            }
        }
        let store = Store::for_graph(graph);
        Ok(Engine {
            graph,
            runtime,
            config,
            journal: Journal::new(store),
            failures: Vec::new(),
            prune_log: Vec::new(),
            sessions: 0,
        })
    }

    pub fn store(&self) -> &Store {
        self.journal.store()
    }

    pub fn graph(&self) -> &WorkflowGraph {
        self.graph
    }

    pub fn trace(&self) -> &[TraceEvent] {
        self.journal.events()
    }

    pub fn ready_set(&self) -> BTreeSet<AgentId> {
        ready_set(self.graph, self.journal.store())
    }

    fn successors_of(&self, agent: &AgentId) -> Vec<Successor> {
        self.graph
            .edges()
            .iter()
            .filter(|e| &e.source == agent)
            .map(|e| Successor {
                id: e.target.clone(),
                kind: e.kind,
                live: e.is_live(),
            })
            .collect()
    }

    fn context_stages(&self, bundle: &ContextBundle) -> BTreeSet<String> {
        let mut stages: BTreeSet<String> = bundle
            .artifacts
            .iter()
            .filter_map(|a| self.graph.agent(&a.producer).ok())
            .map(|s| s.stage.clone())
            .collect();
        stages.extend(bundle.enrichment.iter().map(|s| s.stage.clone()));
        stages
    }

    /// Runs one round for the agents in `ready` and commits their outputs.
    pub fn execute_round(&mut self, t: u32, ready: &BTreeSet<AgentId>) -> Result<RoundState, RunError> {
        // Snapshot every context before anything in this round is recorded.
        let snapshots: Vec<(AgentId, ContextBundle)> = ready
            .iter()
            .map(|a| (a.clone(), assemble_context(a, self.graph, self.journal.store())))
            .collect();

        let mut outputs: Vec<(AgentId, ReasoningResponse, Vec<String>)> = Vec::new();
        for (agent, bundle) in snapshots {
            let attempt = self
                .journal
                .store()
                .memory(&agent)
                .map_or(0, |m| m.attempt_log.len() as u32)
                + 1;
            self.journal
                .record(t, &agent, EventBody::Activate { attempt })?;
            match self.reason(t, &agent, attempt, bundle) {
                Ok((resp, calls)) => outputs.push((agent, resp, calls)),
                Err(reason) => {
                    log::warn!("round {t}: {agent} failed: {reason}");
                    self.failures.push(Failure {
                        round: t,
                        agent,
                        reason,
                    });
                }
            }
        }

        // Barrier: commit artifacts, messages and counter updates.
        for (agent, resp, tool_calls) in &outputs {
            let version = self.journal.store().artifact_versions(agent).len() as u32 + 1;
            let artifact = Artifact {
                producer: agent.clone(),
                round: t,
                label: resp.artifact.label,
                payload: resp.artifact.payload.clone(),
                version,
            };
            self.journal.record(
                t,
                agent,
                EventBody::EmitArtifact {
                    artifact,
                    tool_calls: tool_calls.clone(),
                },
            )?;
            for (target, body) in &resp.instructions.directives {
                self.deliver(t, agent, target, body)?;
            }
        }

        Ok(RoundState {
            t: t + 1,
            active: ready.clone(),
        })
    }

    fn reason(
        &mut self,
        t: u32,
        agent: &AgentId,
        attempt: u32,
        bundle: ContextBundle,
    ) -> Result<(ReasoningResponse, Vec<String>), String> {
        let spec = self.graph.agent(agent).map_err(|e| e.to_string())?.clone();
        let mut req = ReasoningRequest {
            agent: agent.clone(),
            stage: spec.stage.clone(),
            context_stages: self.context_stages(&bundle),
            context: bundle,
            round: t,
            attempt,
            seed: self.config.seed,
            successors: self.successors_of(agent),
            required_context: spec.required_context.clone(),
        };
        let (resp, calls) = self.runtime.invoke(&spec, &req).map_err(|e| e.to_string())?;
        if !resp.needs_huddle {
            return Ok((resp, calls));
        }

        let graph = &*self.graph;
        let required = &spec.required_context;
        let have = req.context_stages.clone();
        let selection = select_huddle_set_until(
            agent,
            graph,
            self.journal.store().activated(),
            self.config.d_max,
            |convened| {
                required.iter().all(|r| {
                    have.contains(r)
                        || convened
                            .iter()
                            .any(|c| graph.agent(c).is_ok_and(|s| &s.stage == r))
                })
            },
        )
        .map_err(|e| e.to_string())?;
        if selection.convened.is_empty() {
            return Ok((resp, calls));
        }
        self.sessions += 1;
        let (_, enriched) = run_huddle(
            &selection,
            self.graph,
            self.runtime,
            &mut self.journal,
            t,
            self.sessions,
            self.config.turn_limit,
            self.config.seed,
            req.context.clone(),
        )
        .map_err(|e| e.to_string())?;
        req.context_stages = self.context_stages(&enriched);
        req.context = enriched;
        self.runtime.invoke(&spec, &req).map_err(|e| e.to_string())
    }

    fn deliver(&mut self, t: u32, from: &AgentId, to: &AgentId, body: &str) -> Result<(), RunError> {
        let edge = self
            .graph
            .edge(from, to)
            .ok_or_else(|| LookupError::UnknownEdge(from.clone(), to.clone()))?
            .clone();
        let kind = match edge.kind {
            EdgeKind::Forward => MessageKind::Instruction,
            EdgeKind::Reverse => MessageKind::RevisionRequest,
        };
        let updated = match edge.budget {
            Some(b) => match record_reverse_traversal(b) {
                Some(updated) => Some(updated),
                None => {
                    log::warn!("round {t}: dropped revision request over pruned edge {from}->{to}");
                    return Ok(());
                }
            },
            None => None,
        };
        let message = Message {
            from: from.clone(),
            to: to.clone(),
            round: t,
            seq: self.journal.store().next_seq(from, to),
            body: body.to_owned(),
            kind,
        };
        self.journal.record(
            t,
            from,
            EventBody::SendInstruction {
                message,
                edge: edge.kind,
            },
        )?;
        if let Some(updated) = updated {
            self.graph.set_budget(from, to, updated)?;
            let edge_ref = EdgeRef {
                source: from.clone(),
                target: to.clone(),
            };
            self.journal.record(
                t,
                from,
                EventBody::ReverseTraverse {
                    edge: edge_ref.clone(),
                    counter: updated.counter,
                    budget: updated.budget,
                },
            )?;
            if !updated.live {
                self.record_prune(t, edge_ref, updated)?;
            }
        }
        Ok(())
    }

    fn record_prune(&mut self, t: u32, edge: EdgeRef, budget: EdgeBudget) -> Result<(), RunError> {
        self.journal.record(
            t,
            &edge.source,
            EventBody::EdgePruned {
                edge: edge.clone(),
                counter: budget.counter,
                budget: budget.budget,
            },
        )?;
        self.prune_log.push(PruneRecord { edge, round: t });
        Ok(())
    }

    /// Runs rounds until completion, deadlock or the round limit.
    pub fn run(mut self) -> Result<RunOutcome, RunError> {
        let dead_at_start: Vec<(EdgeRef, EdgeBudget)> = self
            .graph
            .edges()
            .iter()
            .filter_map(|e| match e.budget {
                Some(b) if !b.live => Some((
                    EdgeRef {
                        source: e.source.clone(),
                        target: e.target.clone(),
                    },
                    b,
                )),
                _ => None,
            })
            .collect();
        for (edge, b) in dead_at_start {
            self.record_prune(1, edge, b)?;
        }

        let mut t = 1;
        let mut rounds_executed = 0;
        let status = loop {
            let ready = self.ready_set();
            if ready.is_empty() {
                break if self.journal.store().has_any_pending() {
                    RunStatus::Deadlock
                } else {
                    RunStatus::Completed
                };
            }
            if t > self.config.max_rounds {
                break RunStatus::RoundLimitExceeded;
            }
            let next = self.execute_round(t, &ready)?;
            rounds_executed = t;
            t = next.t;
        };
        self.journal.record(
            rounds_executed,
            &AgentId::new(""),
            EventBody::WorkflowDone {
                status,
                rounds_executed,
            },
        )?;

        let store = self.journal.store();
        let terminal_artifacts = self
            .graph
            .agent_ids()
            .filter(|id| {
                !self
                    .graph
                    .edges()
                    .iter()
                    .any(|e| &e.source == *id && e.kind == EdgeKind::Forward)
            })
            .filter_map(|id| store.latest_artifact(id).cloned())
            .collect();
        let result = WorkflowResult {
            rounds_executed,
            terminal_artifacts,
            status,
            prune_log: self.prune_log,
            failures: self.failures,
        };
        let (store, trace) = self.journal.into_parts();
        Ok(RunOutcome {
            result,
            store,
            trace,
        })
    }
}

/// Runs a built graph to termination.
pub fn run_workflow(
    graph: &mut WorkflowGraph,
    runtime: &Runtime,
    config: RunConfig,
) -> Result<RunOutcome, RunError> {
    Engine::new(graph, runtime, config)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{AgentSpec, EdgeDoc};

    fn id(s: &str) -> AgentId {
        AgentId::from(s)
    }

    fn doc(agents: &[(&str, &str)], edges: &[(&str, &str)]) -> WorkflowDoc {
        WorkflowDoc {
            agents: agents
                .iter()
                .map(|(i, r)| AgentSpec {
                    id: id(i),
                    role_label: String::new(),
                    stage: "work".into(),
                    tools: Default::default(),
                    reasoning_ref: (*r).into(),
                    required_context: vec![],
                })
                .collect(),
            edges: edges
                .iter()
                .map(|(s, t)| EdgeDoc {
                    source: id(s),
                    target: id(t),
                    retry_budget: None,
                })
                .collect(),
            ..Default::default()
        }
    }

    fn echo(names: &[&str], edges: &[(&str, &str)]) -> WorkflowGraph {
        let agents: Vec<(&str, &str)> = names.iter().map(|n| (*n, "mock/echo")).collect();
        WorkflowGraph::from_valid_doc(&doc(&agents, edges)).unwrap()
    }

    fn events(trace: &[TraceEvent]) -> Vec<(u32, &str, &str)> {
        trace
            .iter()
            .map(|e| (e.round, e.agent.as_str(), e.body.name()))
            .collect()
    }

    #[test]
    fn traversal_counter_simulation() {
        let b = EdgeBudget::new(3);
        let b1 = record_reverse_traversal(b).unwrap();
        let b2 = record_reverse_traversal(b1).unwrap();
        assert_eq!((b2.counter, b2.live), (2, true));
        let b3 = record_reverse_traversal(b2).unwrap();
        assert_eq!((b3.counter, b3.live), (3, false));
        assert_eq!(record_reverse_traversal(b3), None);
        assert_eq!(record_reverse_traversal(EdgeBudget::new(0)), None);
    }

    #[test]
    fn round_one_readiness_on_chain() {
        let g = echo(&["A", "B", "C"], &[("A", "B"), ("B", "C")]);
        let s = Store::for_graph(&g);
        assert_eq!(ready_set(&g, &s), BTreeSet::from([id("A")]));
    }

    #[test]
    fn successor_waits_for_unemitted_predecessor() {
        let g = echo(&["A", "B"], &[("A", "B")]);
        let mut s = Store::for_graph(&g);
        s.apply(&TraceEvent {
            seq: 1,
            round: 1,
            agent: id("A"),
            body: EventBody::Activate { attempt: 1 },
        })
        .unwrap();
        assert!(!ready_set(&g, &s).contains(&id("B")));
    }

    #[test]
    fn queued_revision_request_makes_activated_agent_ready() {
        let g = WorkflowGraph::from_valid_doc(&doc(
            &[("B", "mock/echo"), ("D", "mock/supervisor:forever")],
            &[("B", "D"), ("D", "B")],
        ))
        .unwrap();
        let mut engine_graph = g.clone();
        let rt = Runtime::default();
        let mut engine = Engine::new(&mut engine_graph, &rt, RunConfig::default()).unwrap();
        let r1 = engine.ready_set();
        engine.execute_round(1, &r1).unwrap();
        let r2 = engine.ready_set();
        assert_eq!(r2, BTreeSet::from([id("D")]));
        engine.execute_round(2, &r2).unwrap();
        assert!(engine.store().is_activated(&id("B")));
        assert_eq!(engine.ready_set(), BTreeSet::from([id("B")]));
        engine.execute_round(3, &BTreeSet::from([id("B")])).unwrap();
        let activations: Vec<_> = engine
            .trace()
            .iter()
            .filter(|e| e.body.name() == "activate" && e.agent == id("B"))
            .map(|e| e.round)
            .collect();
        assert_eq!(activations, vec![1, 3]);
    }

    #[test]
    fn single_node_run() {
        let mut g = echo(&["solo"], &[]);
        let out = run_workflow(&mut g, &Runtime::default(), RunConfig::default()).unwrap();
        assert_eq!(
            events(&out.trace),
            vec![
                (1, "solo", "activate"),
                (1, "solo", "emit_artifact"),
                (1, "", "workflow_done")
            ]
        );
        assert_eq!(out.result.status, RunStatus::Completed);
        assert_eq!(out.result.terminal_artifacts.len(), 1);
    }

    #[test]
    fn empty_graph_only_emits_done() {
        let mut g = echo(&[], &[]);
        let out = run_workflow(&mut g, &Runtime::default(), RunConfig::default()).unwrap();
        assert_eq!(events(&out.trace), vec![(0, "", "workflow_done")]);
    }

    #[test]
    fn chain_activates_in_order() {
        let mut g = echo(&["A", "B", "C"], &[("A", "B"), ("B", "C")]);
        let out = run_workflow(&mut g, &Runtime::default(), RunConfig::default()).unwrap();
        let acts: Vec<(u32, &str)> = out
            .trace
            .iter()
            .filter(|e| e.body.name() == "activate")
            .map(|e| (e.round, e.agent.as_str()))
            .collect();
        assert_eq!(acts, vec![(1, "A"), (2, "B"), (3, "C")]);
        assert_eq!(out.result.rounds_executed, 3);
    }

    #[test]
    fn parallel_branches_share_a_round() {
        let mut g = echo(&["A", "B", "C"], &[("A", "B"), ("A", "C")]);
        let out = run_workflow(&mut g, &Runtime::default(), RunConfig::default()).unwrap();
        let round_of = |who: &str| {
            out.trace
                .iter()
                .find(|e| e.body.name() == "activate" && e.agent.as_str() == who)
                .unwrap()
                .round
        };
        assert_eq!(round_of("B"), round_of("C"));
    }

    #[test]
    fn failed_agent_does_not_stop_others() {
        let mut g = WorkflowGraph::from_valid_doc(&doc(
            &[("A", "mock/echo"), ("B", "mock/fail"), ("C", "mock/echo")],
            &[("A", "B"), ("A", "C")],
        ))
        .unwrap();
        let out = run_workflow(&mut g, &Runtime::default(), RunConfig::default()).unwrap();
        assert_eq!(out.result.status, RunStatus::Completed);
        assert_eq!(out.result.failures.len(), 1);
        assert!(out.store.has_emitted(&id("C")));
        let log = &out.store.memory(&id("B")).unwrap().attempt_log;
        assert_eq!(log[0].outcome, crate::store::FAILED_OUTCOME);
    }

    #[test]
    fn blocked_pending_message_is_deadlock() {
        let mut g = WorkflowGraph::from_valid_doc(&doc(
            &[("A", "mock/echo"), ("B", "mock/fail"), ("C", "mock/echo")],
            &[("A", "C"), ("B", "C")],
        ))
        .unwrap();
        let out = run_workflow(&mut g, &Runtime::default(), RunConfig::default()).unwrap();
        assert_eq!(out.result.status, RunStatus::Deadlock);
    }

    #[test]
    fn round_limit() {
        let mut g = echo(&["A", "B", "C"], &[("A", "B"), ("B", "C")]);
        let cfg = RunConfig {
            max_rounds: 1,
            ..RunConfig::default()
        };
        let out = run_workflow(&mut g, &Runtime::default(), cfg).unwrap();
        assert_eq!(out.result.status, RunStatus::RoundLimitExceeded);
        assert_eq!(out.result.rounds_executed, 1);
    }

    #[test]
    fn unresolvable_reference_fails_before_round_one() {
        let mut g = WorkflowGraph::from_valid_doc(&doc(&[("A", "nobody")], &[])).unwrap();
        assert!(matches!(
            run_workflow(&mut g, &Runtime::default(), RunConfig::default()),
            Err(RunError::Unresolved { .. })
        ));
    }

    #[test]
    fn huddle_runs_when_required_context_missing() {
        let mut d = doc(
            &[("A", "mock/echo"), ("B", "mock/echo"), ("C", "mock/echo")],
            &[("A", "B"), ("B", "C")],
        );
        d.agents[0].stage = "concept".into();
        d.agents[2].required_context = vec!["concept".into()];
        let mut g = WorkflowGraph::from_valid_doc(&d).unwrap();
        let out = run_workflow(&mut g, &Runtime::default(), RunConfig::default()).unwrap();
        let opens: Vec<&TraceEvent> = out
            .trace
            .iter()
            .filter(|e| e.body.name() == "huddle_open")
            .collect();
        assert_eq!(opens.len(), 1);
        assert_eq!(opens[0].agent, id("C"));
        let c = out.store.latest_artifact(&id("C")).unwrap();
        assert!(c.payload.contains("notes"), "{}", c.payload);
    }
}
