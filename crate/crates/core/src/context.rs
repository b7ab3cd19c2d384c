//! Context assembly and hypergraph huddles.
//!
//! An agent's context is its inbound dialog plus the latest artifact of each
//! live predecessor. When that is not enough the agent convenes a huddle: a
//! breadth-first expansion over predecessors and activated successors picks
//! collaborators level by level, and the group holds a short round-robin
//! discussion whose contributions enrich the requester's context only.

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use crate::graph::{AgentId, LookupError, WorkflowGraph};
use crate::runtime::{HuddleTurnRequest, Runtime};
use crate::store::{Artifact, EventBody, Journal, Message, MessageKind, Store, StoreError};

/// Default maximum BFS depth for huddle selection.
pub const DEFAULT_D_MAX: u32 = 2;
/// Default number of speaking cycles per huddle.
pub const DEFAULT_TURN_LIMIT: u32 = 2;

/// Text a huddle participant contributed to the requester's context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Snippet {
    pub agent: AgentId,
    pub stage: String,
    pub text: String,
}

/// C_i: conversational memory, artifact context and huddle enrichment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ContextBundle {
    pub owner: AgentId,
    pub conversational: Vec<Message>,
    pub artifacts: Vec<Artifact>,
    pub enrichment: Vec<Snippet>,
}

impl ContextBundle {
    pub fn empty(owner: AgentId) -> Self {
        ContextBundle {
            owner,
            conversational: Vec::new(),
            artifacts: Vec::new(),
            enrichment: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.conversational.is_empty() && self.artifacts.is_empty() && self.enrichment.is_empty()
    }
}

pub fn assemble_context(agent: &AgentId, graph: &WorkflowGraph, store: &Store) -> ContextBundle {
    let (conversational, artifacts) = store.context_inputs(agent, graph);
    ContextBundle {
        owner: agent.clone(),
        conversational,
        artifacts,
        enrichment: Vec::new(),
    }
}

/// Level sets of a huddle search and their union.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HuddleSelection {
    pub requester: AgentId,
    pub levels: Vec<BTreeSet<AgentId>>,
    pub convened: BTreeSet<AgentId>,
    pub depth_used: u32,
}

/// BFS selection to depth `d_max` with no sufficiency cut-off.
pub fn select_huddle_set(
    agent: &AgentId,
    graph: &WorkflowGraph,
    activated: &BTreeSet<AgentId>,
    d_max: u32,
) -> Result<HuddleSelection, LookupError> {
    select_huddle_set_until(agent, graph, activated, d_max, |_| false)
}

/// BFS selection that stops after the first level at which `sufficient`
/// holds for the convened set, when a level comes up empty, or at `d_max`.
///
/// Level 0 is Pred(agent); level d expands every member of level d-1 through
/// its predecessors and activated successors, minus all earlier levels. The
/// requester itself is removed from every level.
pub fn select_huddle_set_until(
    agent: &AgentId,
    graph: &WorkflowGraph,
    activated: &BTreeSet<AgentId>,
    d_max: u32,
    mut sufficient: impl FnMut(&BTreeSet<AgentId>) -> bool,
) -> Result<HuddleSelection, LookupError> {
    let mut level0 = graph.predecessors(agent)?;
    level0.remove(agent);
    let mut convened = level0.clone();
    let mut levels = vec![level0];
    let mut depth_used = 0;

    while depth_used < d_max {
        let last = levels.last().unwrap();
        if last.is_empty() || sufficient(&convened) {
            break;
        }
        let mut next = BTreeSet::new();
        for j in last {
            next.extend(graph.predecessors(j)?);
            next.extend(graph.active_successors(j, activated)?);
        }
        next.remove(agent);
        next.retain(|v| !convened.contains(v));
        if next.is_empty() {
            break;
        }
        convened.extend(next.iter().cloned());
        levels.push(next);
        depth_used += 1;
    }
    Ok(HuddleSelection {
        requester: agent.clone(),
        levels,
        convened,
        depth_used,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HuddleTurn {
    pub speaker: AgentId,
    pub cycle: u32,
    pub text: String,
    pub sufficient: bool,
}

/// One completed huddle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HuddleSession {
    pub id: u64,
    pub participants: Vec<AgentId>,
    pub turn_limit: u32,
    pub transcript: Vec<HuddleTurn>,
    pub outcome: Vec<Snippet>,
    /// (cycle, agent) pairs whose contribution failed.
    pub skipped: Vec<(u32, AgentId)>,
}

#[derive(Debug, Error)]
pub enum HuddleError {
    #[error("huddle for {0} has nobody to convene")]
    EmptySelection(AgentId),
    #[error("turn limit must be positive")]
    ZeroTurnLimit,
    #[error(transparent)]
    Lookup(#[from] LookupError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Runs a round-robin discussion among the requester and the convened set.
///
/// Speakers go in lexicographic order for up to `turn_limit` cycles; the
/// session closes early after a cycle in which someone signalled
/// sufficiency. Each turn is fanned out as `huddle_turn` messages to every
/// other participant. Contributions from the other participants are appended
/// to `bundle`'s enrichment.
#[allow(clippy::too_many_arguments)]
pub fn run_huddle(
    selection: &HuddleSelection,
    graph: &WorkflowGraph,
    runtime: &Runtime,
    journal: &mut Journal,
    round: u32,
    session: u64,
    turn_limit: u32,
    seed: u64,
    mut bundle: ContextBundle,
) -> Result<(HuddleSession, ContextBundle), HuddleError> {
    if selection.convened.is_empty() {
        return Err(HuddleError::EmptySelection(selection.requester.clone()));
    }
    if turn_limit == 0 {
        return Err(HuddleError::ZeroTurnLimit);
    }
    let requester = &selection.requester;
    let mut participants: BTreeSet<AgentId> = selection.convened.clone();
    participants.insert(requester.clone());
    let participants: Vec<AgentId> = participants.into_iter().collect();

    journal.record(
        round,
        requester,
        EventBody::HuddleOpen {
            session,
            participants: participants.clone(),
            levels: selection
                .levels
                .iter()
                .map(|l| l.iter().cloned().collect())
                .collect(),
            depth_used: selection.depth_used,
        },
    )?;

    let mut transcript: Vec<HuddleTurn> = Vec::new();
    let mut skipped = Vec::new();
    let mut outcome = Vec::new();
    for cycle in 1..=turn_limit {
        let mut signalled = false;
        for speaker in &participants {
            let spec = graph.agent(speaker)?;
            let req = HuddleTurnRequest {
                speaker: speaker.clone(),
                speaker_stage: spec.stage.clone(),
                requester: requester.clone(),
                session,
                cycle,
                transcript: transcript
                    .iter()
                    .map(|t| (t.speaker.clone(), t.text.clone()))
                    .collect(),
                seed,
            };
            let contribution = match runtime.contribute(spec, &req) {
                Ok(c) => c,
                Err(e) => {
                    log::warn!("huddle {session}: {speaker} skipped in cycle {cycle}: {e}");
                    skipped.push((cycle, speaker.clone()));
                    continue;
                }
            };
            let messages = participants
                .iter()
                .filter(|p| *p != speaker)
                .map(|p| Message {
                    from: speaker.clone(),
                    to: p.clone(),
                    round,
                    seq: journal.store().next_seq(speaker, p),
                    body: contribution.text.clone(),
                    kind: MessageKind::HuddleTurn,
                })
                .collect();
            journal.record(
                round,
                speaker,
                EventBody::HuddleTurn {
                    session,
                    cycle,
                    text: contribution.text.clone(),
                    sufficient: contribution.sufficient,
                    messages,
                },
            )?;
            signalled |= contribution.sufficient;
            if speaker != requester {
                outcome.push(Snippet {
                    agent: speaker.clone(),
                    stage: spec.stage.clone(),
                    text: contribution.text.clone(),
                });
            }
            transcript.push(HuddleTurn {
                speaker: speaker.clone(),
                cycle,
                text: contribution.text,
                sufficient: contribution.sufficient,
            });
        }
        if signalled {
            break;
        }
    }

    journal.record(
        round,
        requester,
        EventBody::HuddleClose {
            session,
            turns: transcript.len() as u32,
            skipped: skipped.iter().map(|(_, a)| a.clone()).collect(),
        },
    )?;
    bundle.enrichment.extend(outcome.iter().cloned());
    Ok((
        HuddleSession {
            id: session,
            participants,
            turn_limit,
            transcript,
            outcome,
            skipped,
        },
        bundle,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{AgentSpec, EdgeDoc, WorkflowDoc};
    use std::sync::Arc;

    fn id(s: &str) -> AgentId {
        AgentId::from(s)
    }

    fn ids(xs: &[&str]) -> BTreeSet<AgentId> {
        xs.iter().map(|x| id(x)).collect()
    }

    fn graph_with(ids: &[(&str, &str)], edges: &[(&str, &str)]) -> WorkflowGraph {
        let doc = WorkflowDoc {
            agents: ids
                .iter()
                .map(|(i, r)| AgentSpec {
                    id: id(i),
                    role_label: String::new(),
                    stage: format!("stage-{i}"),
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
        };
        WorkflowGraph::from_valid_doc(&doc).unwrap()
    }

    fn graph(names: &[&str], edges: &[(&str, &str)]) -> WorkflowGraph {
        let agents: Vec<(&str, &str)> = names.iter().map(|n| (*n, "mock/echo")).collect();
        graph_with(&agents, edges)
    }

    #[test]
    fn empty_bundle_for_isolated_agent() {
        let g = graph(&["A", "B"], &[]);
        let s = Store::for_graph(&g);
        assert!(assemble_context(&id("A"), &g, &s).is_empty());
    }

    #[test]
    fn bundle_ignores_messages_to_others() {
        let g = graph(&["A", "B", "C"], &[("A", "B"), ("A", "C")]);
        let mut s = Store::for_graph(&g);
        let before = assemble_context(&id("B"), &g, &s);
        s.append_dialog(Message {
            from: id("A"),
            to: id("C"),
            round: 1,
            seq: 1,
            body: "for C".into(),
            kind: MessageKind::Instruction,
        })
        .unwrap();
        assert_eq!(assemble_context(&id("B"), &g, &s), before);
    }

    #[test]
    fn depth_zero_is_predecessors() {
        let g = graph(&["A", "B", "C"], &[("A", "C"), ("B", "C")]);
        let sel = select_huddle_set(&id("C"), &g, &BTreeSet::new(), 0).unwrap();
        assert_eq!(sel.convened, ids(&["A", "B"]));
        assert_eq!(sel.levels, vec![ids(&["A", "B"])]);
        assert_eq!(sel.depth_used, 0);
    }

    #[test]
    fn chain_depth_one() {
        let g = graph(&["A", "B", "C", "D"], &[("A", "B"), ("B", "C"), ("C", "D")]);
        let sel = select_huddle_set(&id("C"), &g, &ids(&["A", "B"]), 1).unwrap();
        assert_eq!(sel.levels, vec![ids(&["B"]), ids(&["A"])]);
        assert_eq!(sel.convened, ids(&["A", "B"]));
    }

    #[test]
    fn active_successor_reached_and_requester_excluded() {
        let g = graph(&["A", "B", "C", "D"], &[("A", "B"), ("B", "C"), ("A", "D")]);
        let sel = select_huddle_set(&id("B"), &g, &ids(&["B", "D"]), 1).unwrap();
        assert_eq!(sel.levels, vec![ids(&["A"]), ids(&["D"])]);
        assert_eq!(sel.convened, ids(&["A", "D"]));
    }

    #[test]
    fn sufficiency_stops_expansion() {
        let g = graph(&["A", "B", "C", "D"], &[("A", "B"), ("B", "C"), ("C", "D")]);
        let sel =
            select_huddle_set_until(&id("D"), &g, &BTreeSet::new(), 5, |c| c.contains(&id("C")))
                .unwrap();
        assert_eq!(sel.convened, ids(&["C"]));
        let sel = select_huddle_set(&id("D"), &g, &BTreeSet::new(), 5).unwrap();
        assert_eq!(sel.depth_used, 2);
        assert_eq!(sel.convened, ids(&["A", "B", "C"]));
    }

    #[test]
    fn empty_selection_is_rejected() {
        let g = graph(&["A"], &[]);
        let mut j = Journal::new(Store::for_graph(&g));
        let sel = select_huddle_set(&id("A"), &g, &BTreeSet::new(), 2).unwrap();
        let err = run_huddle(
            &sel,
            &g,
            &Runtime::default(),
            &mut j,
            1,
            1,
            2,
            0,
            ContextBundle::empty(id("A")),
        )
        .unwrap_err();
        assert!(matches!(err, HuddleError::EmptySelection(_)));
        assert!(j.events().is_empty());
    }

    fn count(j: &Journal, name: &str) -> usize {
        j.events().iter().filter(|e| e.body.name() == name).count()
    }

    #[test]
    fn two_participants_one_cycle() {
        let g = graph(&["A", "B"], &[("A", "B")]);
        let mut j = Journal::new(Store::for_graph(&g));
        let sel = select_huddle_set(&id("B"), &g, &BTreeSet::new(), 0).unwrap();
        let (session, bundle) = run_huddle(
            &sel,
            &g,
            &Runtime::default(),
            &mut j,
            3,
            9,
            1,
            0,
            ContextBundle::empty(id("B")),
        )
        .unwrap();
        assert_eq!(count(&j, "huddle_turn"), 2);
        let speakers: Vec<&str> = session.transcript.iter().map(|t| t.speaker.as_str()).collect();
        assert_eq!(speakers, vec!["A", "B"]);
        assert_eq!(bundle.enrichment.len(), 1);
        assert_eq!(bundle.enrichment[0].agent, id("A"));
        let names: Vec<&str> = j.events().iter().map(|e| e.body.name()).collect();
        assert_eq!(names.first(), Some(&"huddle_open"));
        assert_eq!(names.last(), Some(&"huddle_close"));
        // Transcript persisted in both memories as flagged huddle turns.
        let mem = j.store().memory(&id("A")).unwrap();
        assert!(mem.dialogs.iter().all(|m| m.kind == MessageKind::HuddleTurn));
        assert_eq!(mem.dialogs.len(), 2);
    }

    #[test]
    fn sufficiency_signal_closes_session_early() {
        let g = graph_with(&[("A", "mock/oracle"), ("B", "mock/echo")], &[("A", "B")]);
        let mut j = Journal::new(Store::for_graph(&g));
        let sel = select_huddle_set(&id("B"), &g, &BTreeSet::new(), 0).unwrap();
        let (session, _) = run_huddle(
            &sel,
            &g,
            &Runtime::default(),
            &mut j,
            1,
            1,
            4,
            0,
            ContextBundle::empty(id("B")),
        )
        .unwrap();
        assert_eq!(session.transcript.len(), 2);
        assert!(session.transcript.len() < 4 * 2);
    }

    #[test]
    fn failing_participant_is_skipped() {
        let g = graph_with(
            &[("A", "mock/fail"), ("B", "mock/echo"), ("C", "mock/echo")],
            &[("A", "C"), ("B", "C")],
        );
        let mut j = Journal::new(Store::for_graph(&g));
        let sel = select_huddle_set(&id("C"), &g, &BTreeSet::new(), 0).unwrap();
        let (session, bundle) = run_huddle(
            &sel,
            &g,
            &Runtime::default(),
            &mut j,
            1,
            1,
            2,
            0,
            ContextBundle::empty(id("C")),
        )
        .unwrap();
        assert_eq!(session.skipped, vec![(1, id("A")), (2, id("A"))]);
        assert_eq!(session.transcript.len(), 4);
        assert!(bundle.enrichment.iter().all(|s| s.agent == id("B")));
        assert_eq!(count(&j, "huddle_close"), 1);
    }

    #[test]
    fn enrichment_does_not_touch_other_contexts() {
        let g = graph(&["A", "B", "C"], &[("A", "B"), ("A", "C")]);
        let mut j = Journal::new(Store::for_graph(&g));
        let before = assemble_context(&id("C"), &g, j.store());
        let sel = select_huddle_set(&id("B"), &g, &BTreeSet::new(), 0).unwrap();
        let _ = run_huddle(
            &sel,
            &g,
            &Arc::new(Runtime::default()),
            &mut j,
            1,
            1,
            1,
            0,
            ContextBundle::empty(id("B")),
        )
        .unwrap();
        let after = assemble_context(&id("C"), &g, j.store());
        assert_eq!(before.artifacts, after.artifacts);
        assert!(after.enrichment.is_empty());
    }
}
