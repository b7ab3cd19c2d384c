//! Centralization and hierarchy scores for agent graphs.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::graph::{AgentId, WorkflowGraph};

/// Plain directed graph over `0..n`, parallel edges and self-loops removed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Digraph {
    n: usize,
    out: Vec<BTreeSet<usize>>,
}

impl Digraph {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut out = vec![BTreeSet::new(); n];
        for (s, t) in edges {
            assert!(s < n && t < n, "edge ({s}, {t}) out of range for n={n}");
            if s != t {
                out[s].insert(t);
            }
        }
        Digraph { n, out }
    }

    /// Live edges of `graph`, optionally restricted to forward edges.
    pub fn from_workflow(graph: &WorkflowGraph, forward_only: bool) -> Self {
        let index: BTreeMap<&AgentId, usize> =
            graph.agent_ids().enumerate().map(|(i, a)| (a, i)).collect();
        let edges = graph
            .live_edges()
            .filter(|e| !forward_only || !e.is_reverse())
            .map(|e| (index[&e.source], index[&e.target]));
        Digraph::new(graph.len(), edges)
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.out.iter().map(BTreeSet::len).sum()
    }

    /// Nodes reachable from `v` by a non-empty directed path, excluding `v`.
    fn reachable_from(&self, v: usize) -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([v]);
        while let Some(u) = queue.pop_front() {
            for &w in &self.out[u] {
                if w != v && seen.insert(w) {
                    queue.push_back(w);
                }
            }
        }
        seen
    }

    fn undirected_degrees(&self) -> Vec<usize> {
        let mut pairs = BTreeSet::new();
        for (s, targets) in self.out.iter().enumerate() {
            for &t in targets {
                pairs.insert((s.min(t), s.max(t)));
            }
        }
        let mut deg = vec![0; self.n];
        for (a, b) in pairs {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{metric} needs at least {min} nodes, graph has {n}")]
pub struct TooSmall {
    pub metric: &'static str,
    pub min: usize,
    pub n: usize,
}

fn guard(metric: &'static str, min: usize, g: &Digraph) -> Result<(), TooSmall> {
    if g.n < min {
        Err(TooSmall { metric, min, n: g.n })
    } else {
        Ok(())
    }
}

/// Freeman degree centralization of the undirected projection:
/// `sum(c_max - c_i) / ((n-1)(n-2))`.
pub fn freeman_centralization(g: &Digraph) -> Result<f64, TooSmall> {
    guard("freeman_centralization", 3, g)?;
    let deg = g.undirected_degrees();
    let max = *deg.iter().max().unwrap();
    let spread: usize = deg.iter().map(|d| max - d).sum();
    Ok(spread as f64 / ((g.n - 1) * (g.n - 2)) as f64)
}

/// Global reaching centrality over unweighted directed reachability.
pub fn global_reaching_centrality(g: &Digraph) -> Result<f64, TooSmall> {
    guard("global_reaching_centrality", 2, g)?;
    let denom = (g.n - 1) as f64;
    let local: Vec<f64> = (0..g.n)
        .map(|v| g.reachable_from(v).len() as f64 / denom)
        .collect();
    let max = local.iter().cloned().fold(0.0, f64::max);
    Ok(local.iter().map(|c| max - c).sum::<f64>() / denom)
}

/// Krackhardt hierarchy: share of reachable ordered pairs that are not
/// reciprocally reachable. 1.0 when nothing is reachable.
pub fn krackhardt_hierarchy(g: &Digraph) -> Result<f64, TooSmall> {
    guard("krackhardt_hierarchy", 2, g)?;
    let reach: Vec<BTreeSet<usize>> = (0..g.n).map(|v| g.reachable_from(v)).collect();
    let mut reachable = 0usize;
    let mut symmetric = 0usize;
    for (u, targets) in reach.iter().enumerate() {
        for &v in targets {
            reachable += 1;
            if reach[v].contains(&u) {
                symmetric += 1;
            }
        }
    }
    if reachable == 0 {
        return Ok(1.0);
    }
    Ok(1.0 - symmetric as f64 / reachable as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopologyReport {
    pub freeman_centralization: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub freeman_reason: Option<String>,
    pub global_reaching_centrality: Option<f64>,
    pub krackhardt_hierarchy: Option<f64>,
    pub n_agents: usize,
    pub n_edges: usize,
    /// `live` or `forward`: which edge set the scores describe.
    pub edge_set: &'static str,
    pub freeman_variant: &'static str,
}

pub fn topology_report(graph: &WorkflowGraph, forward_only: bool) -> TopologyReport {
    let g = Digraph::from_workflow(graph, forward_only);
    let freeman = freeman_centralization(&g);
    TopologyReport {
        freeman_reason: freeman.as_ref().err().map(ToString::to_string),
        freeman_centralization: freeman.ok(),
        global_reaching_centrality: global_reaching_centrality(&g).ok(),
        krackhardt_hierarchy: krackhardt_hierarchy(&g).ok(),
        n_agents: g.node_count(),
        n_edges: g.edge_count(),
        edge_set: if forward_only { "forward" } else { "live" },
        freeman_variant: "degree, undirected projection",
    }
}
