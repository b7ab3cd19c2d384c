#![allow(dead_code)]

use std::collections::BTreeSet;

use omnigraph::graph::{AgentSpec, EdgeDoc, WorkflowDoc};
use omnigraph::AgentId;
use rand::seq::SliceRandom;
use rand::Rng;

pub fn id(s: &str) -> AgentId {
    AgentId::from(s)
}

pub fn agent(name: &str, reasoning_ref: &str) -> AgentSpec {
    AgentSpec {
        id: id(name),
        role_label: name.to_owned(),
        stage: "work".to_owned(),
        tools: BTreeSet::new(),
        reasoning_ref: reasoning_ref.to_owned(),
        required_context: Vec::new(),
    }
}

pub fn edge(s: &str, t: &str, budget: Option<u32>) -> EdgeDoc {
    EdgeDoc {
        source: id(s),
        target: id(t),
        retry_budget: budget,
    }
}

/// A random workflow: a forward DAG over a shuffled naming plus up to
/// `max_reverse` back edges, each closing a cycle through an existing
/// forward path and carrying an explicit budget in `0..=max_budget`.
pub struct RandomWorkflow {
    pub doc: WorkflowDoc,
    /// Nodes in generation order; every forward edge goes left to right.
    pub order: Vec<String>,
    pub forward: Vec<(String, String)>,
    pub reverse: Vec<(String, String, u32)>,
}

impl RandomWorkflow {
    pub fn budget_sum(&self) -> u32 {
        self.reverse.iter().map(|r| r.2).sum()
    }

    /// Number of edges on the longest forward path.
    pub fn longest_forward_path(&self) -> u32 {
        let pos = |n: &str| self.order.iter().position(|o| o == n).unwrap();
        let mut depth = vec![0u32; self.order.len()];
        for (j, name) in self.order.iter().enumerate() {
            for (s, t) in &self.forward {
                if t == name {
                    depth[j] = depth[j].max(depth[pos(s)] + 1);
                }
            }
        }
        depth.into_iter().max().unwrap_or(0)
    }
}

pub fn random_workflow(
    rng: &mut impl Rng,
    max_nodes: usize,
    max_reverse: usize,
    max_budget: u32,
) -> RandomWorkflow {
    let n = rng.gen_range(1..=max_nodes);
    let mut order: Vec<String> = (0..n).map(|i| format!("n{i:02}")).collect();
    order.shuffle(rng);
    let density = rng.gen_range(0.15..0.6);

    let mut forward = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(density) {
                forward.push((order[i].clone(), order[j].clone()));
            }
        }
    }

    // reach[i][j]: forward path from order[i] to order[j].
    let mut reach = vec![vec![false; n]; n];
    for (s, t) in &forward {
        let i = order.iter().position(|o| o == s).unwrap();
        let j = order.iter().position(|o| o == t).unwrap();
        reach[i][j] = true;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    let mut candidates: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| reach[i][j])
        .collect();
    candidates.shuffle(rng);
    let k = rng.gen_range(0..=max_reverse).min(candidates.len());
    let reverse: Vec<(String, String, u32)> = candidates[..k]
        .iter()
        .map(|&(i, j)| (order[j].clone(), order[i].clone(), rng.gen_range(0..=max_budget)))
        .collect();

    let sources: BTreeSet<&str> = reverse.iter().map(|r| r.0.as_str()).collect();
    let mut names = order.clone();
    names.sort();
    let agents = names
        .iter()
        .map(|a| {
            let r = if sources.contains(a.as_str()) {
                "mock/supervisor:forever"
            } else {
                "mock/echo"
            };
            agent(a, r)
        })
        .collect();
    let edges = forward
        .iter()
        .map(|(s, t)| edge(s, t, None))
        .chain(reverse.iter().map(|(s, t, b)| edge(s, t, Some(*b))))
        .collect();
    RandomWorkflow {
        doc: WorkflowDoc {
            agents,
            edges,
            ..WorkflowDoc::default()
        },
        order,
        forward,
        reverse,
    }
}
