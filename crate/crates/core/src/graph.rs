//! Agent graph definition, workflow document validation and forward/reverse
//! edge classification.
//!
//! A workflow is authored as a JSON document listing agents and directed
//! edges. The engine derives a topological order from the graph, then
//! classifies every edge: an edge whose target precedes its source in that
//! order is a *reverse* edge and carries a retry budget. Forward edges are
//! never limited.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default number of deliveries allowed over a reverse edge.
pub const DEFAULT_RETRY_BUDGET: u32 = 3;

/// Opaque agent identifier, unique within a workflow.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(String);

impl AgentId {
    pub fn new(id: impl Into<String>) -> Self {
        AgentId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AgentId {
    fn from(s: &str) -> Self {
        AgentId(s.to_owned())
    }
}

impl std::borrow::Borrow<str> for AgentId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

/// One agent as written in the workflow document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub id: AgentId,
    pub role_label: String,
    pub stage: String,
    #[serde(default)]
    pub tools: BTreeSet<String>,
    pub reasoning_ref: String,
    /// Stage tags this agent needs in its context before it considers the
    /// context sufficient. Drives huddle requests.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub required_context: Vec<String>,
}

/// One edge as written in the workflow document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeDoc {
    pub source: AgentId,
    pub target: AgentId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retry_budget: Option<u32>,
}

/// The raw workflow document (`agents`, `edges` plus optional tuning keys).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowDoc {
    pub agents: Vec<AgentSpec>,
    pub edges: Vec<EdgeDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_max: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn_limit: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retry_budget_default: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_rounds: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl WorkflowDoc {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("workflow documents always serialize")
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("malformed workflow document at line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

/// Parses a workflow document from JSON text.
pub fn parse_workflow(text: &str) -> Result<WorkflowDoc, ParseError> {
    serde_json::from_str(text).map_err(|e| ParseError {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Names the engine can resolve when validating a document.
pub trait Catalog {
    fn has_reasoning(&self, reasoning_ref: &str) -> bool;
    fn has_tool(&self, name: &str) -> bool;
}

/// A single validation finding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    EmptyAgentId { index: usize },
    DuplicateAgentId { id: AgentId },
    DanglingSource { source: AgentId, target: AgentId },
    DanglingTarget { source: AgentId, target: AgentId },
    SelfLoop { agent: AgentId },
    DuplicateEdge { source: AgentId, target: AgentId },
    UnresolvedReasoning { agent: AgentId, reasoning_ref: String },
    UnknownTool { agent: AgentId, tool: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyAgentId { index } => write!(f, "empty agent id at agents[{index}]"),
            Violation::DuplicateAgentId { id } => write!(f, "duplicate agent id {id:?}"),
            Violation::DanglingSource { source, target } => {
                write!(f, "dangling source {source:?} on edge {source}->{target}")
            }
            Violation::DanglingTarget { source, target } => {
                write!(f, "dangling target {target:?} on edge {source}->{target}")
            }
            Violation::SelfLoop { agent } => write!(f, "self-loop on {agent:?}"),
            Violation::DuplicateEdge { source, target } => {
                write!(f, "duplicate edge {source}->{target}")
            }
            Violation::UnresolvedReasoning {
                agent,
                reasoning_ref,
            } => write!(f, "agent {agent:?}: unresolvable reasoning_ref {reasoning_ref:?}"),
            Violation::UnknownTool { agent, tool } => {
                write!(f, "agent {agent:?}: unknown tool {tool:?}")
            }
        }
    }
}

/// Returns every rule violation in `doc`; an empty list means the document
/// is valid.
pub fn validate_spec(doc: &WorkflowDoc, catalog: &dyn Catalog) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (index, agent) in doc.agents.iter().enumerate() {
        if agent.id.as_str().is_empty() {
            out.push(Violation::EmptyAgentId { index });
            continue;
        }
        if !seen.insert(agent.id.clone()) {
            out.push(Violation::DuplicateAgentId {
                id: agent.id.clone(),
            });
        }
        if !catalog.has_reasoning(&agent.reasoning_ref) {
            out.push(Violation::UnresolvedReasoning {
                agent: agent.id.clone(),
                reasoning_ref: agent.reasoning_ref.clone(),
            });
        }
        for tool in &agent.tools {
            if !catalog.has_tool(tool) {
                out.push(Violation::UnknownTool {
                    agent: agent.id.clone(),
                    tool: tool.clone(),
                });
            }
        }
    }

    let mut pairs = BTreeSet::new();
    for edge in &doc.edges {
        let (s, t) = (&edge.source, &edge.target);
        if !seen.contains(s) {
            out.push(Violation::DanglingSource {
                source: s.clone(),
                target: t.clone(),
            });
        }
        if !seen.contains(t) {
            out.push(Violation::DanglingTarget {
                source: s.clone(),
                target: t.clone(),
            });
        }
        if s == t {
            out.push(Violation::SelfLoop { agent: s.clone() });
        } else if !pairs.insert((s.clone(), t.clone())) {
            out.push(Violation::DuplicateEdge {
                source: s.clone(),
                target: t.clone(),
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Forward,
    Reverse,
}

/// Traversal accounting for one reverse edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeBudget {
    pub counter: u32,
    pub budget: u32,
    pub live: bool,
}

impl EdgeBudget {
    /// A fresh budget. A zero budget is dead from the start.
    pub fn new(budget: u32) -> Self {
        EdgeBudget {
            counter: 0,
            budget,
            live: budget > 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub source: AgentId,
    pub target: AgentId,
    pub kind: EdgeKind,
    /// Present exactly for reverse edges.
    pub budget: Option<EdgeBudget>,
}

impl EdgeSpec {
    pub fn is_live(&self) -> bool {
        self.budget.is_none_or(|b| b.live)
    }

    pub fn is_reverse(&self) -> bool {
        self.kind == EdgeKind::Reverse
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BuildError {
    #[error("workflow document has {} violation(s)", .0.len())]
    Invalid(Vec<Violation>),
    #[error("edge {0}->{1} declares a retry_budget but classifies as forward")]
    BudgetOnForwardEdge(AgentId, AgentId),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LookupError {
    #[error("unknown agent {0:?}")]
    UnknownAgent(AgentId),
    #[error("no edge {0}->{1}")]
    UnknownEdge(AgentId, AgentId),
}

/// A built workflow graph.
///
/// Immutable after construction except for reverse-edge budgets, which the
/// scheduler updates between rounds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkflowGraph {
    agents: BTreeMap<AgentId, AgentSpec>,
    edges: Vec<EdgeSpec>,
    index: BTreeMap<(AgentId, AgentId), usize>,
    topo_order: Vec<AgentId>,
    position: BTreeMap<AgentId, usize>,
}

/// Validates and builds a graph. `catalog` resolves reasoning and tool names.
pub fn build_graph(doc: &WorkflowDoc, catalog: &dyn Catalog) -> Result<WorkflowGraph, BuildError> {
    let violations = validate_spec(doc, catalog);
    if !violations.is_empty() {
        return Err(BuildError::Invalid(violations));
    }
    WorkflowGraph::from_valid_doc(doc)
}

impl WorkflowGraph {
    /// Builds from a document that already passed [`validate_spec`].
    pub fn from_valid_doc(doc: &WorkflowDoc) -> Result<Self, BuildError> {
        let agents: BTreeMap<AgentId, AgentSpec> = doc
            .agents
            .iter()
            .map(|a| (a.id.clone(), a.clone()))
            .collect();
        let default_budget = doc.retry_budget_default.unwrap_or(DEFAULT_RETRY_BUDGET);

        // Explicitly budgeted edges are author-declared feedback edges and do
        // not shape the order.
        let mut order_adj: BTreeMap<&AgentId, BTreeSet<&AgentId>> =
            agents.keys().map(|id| (id, BTreeSet::new())).collect();
        for e in doc.edges.iter().filter(|e| e.retry_budget.is_none()) {
            order_adj.get_mut(&e.source).unwrap().insert(&e.target);
        }
        let back = dfs_back_edges(&order_adj);
        for (s, t) in &back {
            order_adj.get_mut(s).unwrap().remove(t);
        }
        let topo_order = kahn_lexicographic(&order_adj);
        let position: BTreeMap<AgentId, usize> = topo_order
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();

        let mut edges: Vec<EdgeSpec> = Vec::with_capacity(doc.edges.len());
        for e in &doc.edges {
            let reverse = position[&e.target] < position[&e.source];
            if !reverse && e.retry_budget.is_some() {
                return Err(BuildError::BudgetOnForwardEdge(
                    e.source.clone(),
                    e.target.clone(),
                ));
            }
            edges.push(EdgeSpec {
                source: e.source.clone(),
                target: e.target.clone(),
                kind: if reverse {
                    EdgeKind::Reverse
                } else {
                    EdgeKind::Forward
                },
                budget: reverse.then(|| EdgeBudget::new(e.retry_budget.unwrap_or(default_budget))),
            });
        }
        edges.sort_by(|a, b| (&a.source, &a.target).cmp(&(&b.source, &b.target)));
        let index = edges
            .iter()
            .enumerate()
            .map(|(i, e)| ((e.source.clone(), e.target.clone()), i))
            .collect();

        Ok(WorkflowGraph {
            agents,
            edges,
            index,
            topo_order,
            position,
        })
    }

    pub fn agents(&self) -> impl Iterator<Item = &AgentSpec> {
        self.agents.values()
    }

    pub fn agent_ids(&self) -> impl Iterator<Item = &AgentId> {
        self.agents.keys()
    }

    pub fn agent(&self, id: &AgentId) -> Result<&AgentSpec, LookupError> {
        self.agents
            .get(id)
            .ok_or_else(|| LookupError::UnknownAgent(id.clone()))
    }

    pub fn contains(&self, id: &AgentId) -> bool {
        self.agents.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    /// All edges, live or pruned, sorted by (source, target).
    pub fn edges(&self) -> &[EdgeSpec] {
        &self.edges
    }

    pub fn live_edges(&self) -> impl Iterator<Item = &EdgeSpec> {
        self.edges.iter().filter(|e| e.is_live())
    }

    pub fn edge(&self, source: &AgentId, target: &AgentId) -> Option<&EdgeSpec> {
        self.index
            .get(&(source.clone(), target.clone()))
            .map(|&i| &self.edges[i])
    }

    pub fn topo_order(&self) -> &[AgentId] {
        &self.topo_order
    }

    /// Position of `id` in the topological order.
    pub fn position(&self, id: &AgentId) -> Option<usize> {
        self.position.get(id).copied()
    }

    fn check(&self, id: &AgentId) -> Result<(), LookupError> {
        if self.agents.contains_key(id) {
            Ok(())
        } else {
            Err(LookupError::UnknownAgent(id.clone()))
        }
    }

    /// Pred(i): sources of live edges into `agent`.
    pub fn predecessors(&self, agent: &AgentId) -> Result<BTreeSet<AgentId>, LookupError> {
        self.check(agent)?;
        Ok(self
            .live_edges()
            .filter(|e| &e.target == agent)
            .map(|e| e.source.clone())
            .collect())
    }

    /// Sources of forward edges into `agent`.
    pub fn forward_predecessors(&self, agent: &AgentId) -> Result<BTreeSet<AgentId>, LookupError> {
        self.check(agent)?;
        Ok(self
            .edges
            .iter()
            .filter(|e| &e.target == agent && e.kind == EdgeKind::Forward)
            .map(|e| e.source.clone())
            .collect())
    }

    /// Live out-edges of `agent`.
    pub fn out_edges<'a>(
        &'a self,
        agent: &'a AgentId,
    ) -> Result<impl Iterator<Item = &'a EdgeSpec> + 'a, LookupError> {
        self.check(agent)?;
        Ok(self.live_edges().filter(move |e| &e.source == agent))
    }

    /// ActiveSucc(j): targets of live edges out of `agent` whose activation
    /// flag is set.
    pub fn active_successors(
        &self,
        agent: &AgentId,
        activated: &BTreeSet<AgentId>,
    ) -> Result<BTreeSet<AgentId>, LookupError> {
        Ok(self
            .out_edges(agent)?
            .filter(|e| activated.contains(&e.target))
            .map(|e| e.target.clone())
            .collect())
    }

    pub fn budget(&self, source: &AgentId, target: &AgentId) -> Result<Option<EdgeBudget>, LookupError> {
        self.edge(source, target)
            .map(|e| e.budget)
            .ok_or_else(|| LookupError::UnknownEdge(source.clone(), target.clone()))
    }

    /// Replaces the budget record of a reverse edge.
    pub fn set_budget(
        &mut self,
        source: &AgentId,
        target: &AgentId,
        budget: EdgeBudget,
    ) -> Result<(), LookupError> {
        let i = *self
            .index
            .get(&(source.clone(), target.clone()))
            .ok_or_else(|| LookupError::UnknownEdge(source.clone(), target.clone()))?;
        match &mut self.edges[i].budget {
            Some(b) => {
                *b = budget;
                Ok(())
            }
            None => Err(LookupError::UnknownEdge(source.clone(), target.clone())),
        }
    }

    /// Marks a reverse edge dead without touching its counter.
    pub fn prune(&mut self, source: &AgentId, target: &AgentId) -> Result<(), LookupError> {
        let mut b = self
            .budget(source, target)?
            .ok_or_else(|| LookupError::UnknownEdge(source.clone(), target.clone()))?;
        b.live = false;
        self.set_budget(source, target, b)
    }

    /// Copy of this graph restricted to its forward edges.
    pub fn forward_only(&self) -> WorkflowGraph {
        let mut g = self.clone();
        g.edges.retain(|e| e.kind == EdgeKind::Forward);
        g.index = g
            .edges
            .iter()
            .enumerate()
            .map(|(i, e)| ((e.source.clone(), e.target.clone()), i))
            .collect();
        g
    }

    /// True when the live edge set has no directed cycle.
    pub fn live_is_acyclic(&self) -> bool {
        find_cycle(
            self.agents.keys(),
            self.live_edges().map(|e| (&e.source, &e.target)),
        )
        .is_none()
    }
}

/// DFS back edges of `adj`, visiting roots (in-degree 0 first) and children
/// in lexicographic order.
fn dfs_back_edges<'a>(
    adj: &BTreeMap<&'a AgentId, BTreeSet<&'a AgentId>>,
) -> Vec<(&'a AgentId, &'a AgentId)> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        White,
        Grey,
        Black,
    }
    let mut indeg: BTreeMap<&AgentId, usize> = adj.keys().map(|k| (*k, 0)).collect();
    for targets in adj.values() {
        for t in targets {
            *indeg.get_mut(t).unwrap() += 1;
        }
    }
    let roots = indeg
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(k, _)| *k)
        .chain(adj.keys().copied());

    let mut mark: BTreeMap<&AgentId, Mark> = adj.keys().map(|k| (*k, Mark::White)).collect();
    let mut back = Vec::new();
    for root in roots {
        if mark[root] != Mark::White {
            continue;
        }
        let mut stack: Vec<(&AgentId, Vec<&AgentId>)> = Vec::new();
        mark.insert(root, Mark::Grey);
        stack.push((root, adj[root].iter().rev().copied().collect()));
        while let Some((node, pending)) = stack.last_mut() {
            match pending.pop() {
                Some(child) => match mark[child] {
                    Mark::White => {
                        mark.insert(child, Mark::Grey);
                        let next = adj[child].iter().rev().copied().collect();
                        stack.push((child, next));
                    }
                    Mark::Grey => back.push((*node, child)),
                    Mark::Black => {}
                },
                None => {
                    mark.insert(*node, Mark::Black);
                    stack.pop();
                }
            }
        }
    }
    back
}

/// Kahn's algorithm with lexicographic tie-breaking. `adj` must be acyclic.
fn kahn_lexicographic(adj: &BTreeMap<&AgentId, BTreeSet<&AgentId>>) -> Vec<AgentId> {
    let mut indeg: BTreeMap<&AgentId, usize> = adj.keys().map(|k| (*k, 0)).collect();
    for targets in adj.values() {
        for t in targets {
            *indeg.get_mut(t).unwrap() += 1;
        }
    }
    let mut ready: BTreeSet<&AgentId> = indeg
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(k, _)| *k)
        .collect();
    let mut order = Vec::with_capacity(adj.len());
    while let Some(next) = ready.pop_first() {
        order.push(next.clone());
        for t in &adj[next] {
            let d = indeg.get_mut(t).unwrap();
            *d -= 1;
            if *d == 0 {
                ready.insert(t);
            }
        }
    }
    debug_assert_eq!(order.len(), adj.len(), "order graph must be acyclic");
    order
}

/// Returns the nodes of some directed cycle, or `None` if the graph is acyclic.
pub fn find_cycle<'a>(
    nodes: impl IntoIterator<Item = &'a AgentId>,
    edges: impl IntoIterator<Item = (&'a AgentId, &'a AgentId)>,
) -> Option<Vec<AgentId>> {
    let mut adj: BTreeMap<&AgentId, BTreeSet<&AgentId>> =
        nodes.into_iter().map(|n| (n, BTreeSet::new())).collect();
    for (s, t) in edges {
        adj.entry(s).or_default().insert(t);
        adj.entry(t).or_default();
    }
    let mut indeg: BTreeMap<&AgentId, usize> = adj.keys().map(|k| (*k, 0)).collect();
    for ts in adj.values() {
        for t in ts {
            *indeg.get_mut(t).unwrap() += 1;
        }
    }
    let mut queue: VecDeque<&AgentId> = indeg
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(k, _)| *k)
        .collect();
    let mut removed = BTreeSet::new();
    while let Some(n) = queue.pop_front() {
        removed.insert(n);
        for t in &adj[n] {
            let d = indeg.get_mut(t).unwrap();
            *d -= 1;
            if *d == 0 {
                queue.push_back(t);
            }
        }
    }
    if removed.len() == adj.len() {
        return None;
    }
    // Every remaining node lies on or leads into a cycle; walk until a repeat.
    let start = *adj.keys().find(|k| !removed.contains(*k))?;
    let mut path = vec![start];
    let mut on_path: BTreeMap<&AgentId, usize> = BTreeMap::from([(start, 0)]);
    loop {
        let cur = *path.last().unwrap();
        let next = *adj[cur].iter().find(|t| !removed.contains(**t))?;
        if let Some(&i) = on_path.get(next) {
            return Some(path[i..].iter().map(|a| (*a).clone()).collect());
        }
        on_path.insert(next, path.len());
        path.push(next);
    }
}
