mod common;

use std::collections::BTreeSet;

use common::{agent, edge, random_workflow};
use omnigraph::graph::{find_cycle, EdgeKind, WorkflowDoc, DEFAULT_RETRY_BUDGET};
use omnigraph::{build_graph, parse_workflow, AgentId, Runtime, WorkflowGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Arbitrary digraph document without budgets: cycles are allowed and the
/// engine has to find the feedback edges itself.
fn cyclic_doc(rng: &mut ChaCha8Rng) -> WorkflowDoc {
    let n = rng.gen_range(1..=10);
    let names: Vec<String> = (0..n).map(|i| format!("v{}", (i * 7) % 11)).collect();
    let p = rng.gen_range(0.05..0.5);
    let mut edges = Vec::new();
    for s in &names {
        for t in &names {
            if s != t && rng.gen_bool(p) {
                edges.push(edge(s, t, None));
            }
        }
    }
    WorkflowDoc {
        agents: names.iter().map(|a| agent(a, "mock/echo")).collect(),
        edges,
        ..WorkflowDoc::default()
    }
}

fn check_structure(graph: &WorkflowGraph, default_budget: u32) {
    let order = graph.topo_order();
    assert_eq!(order.len(), graph.len());
    let pos = |a: &AgentId| graph.position(a).unwrap();
    for (i, a) in order.iter().enumerate() {
        assert_eq!(pos(a), i);
    }
    for e in graph.edges() {
        let reverse = pos(&e.target) < pos(&e.source);
        assert_eq!(e.kind == EdgeKind::Reverse, reverse);
        match e.budget {
            Some(b) => {
                assert!(reverse);
                assert_eq!(b.counter, 0);
            }
            None => assert!(!reverse),
        }
        if reverse && default_budget > 0 {
            assert!(e.budget.is_some());
        }
    }
    let forward = graph.forward_only();
    assert!(forward.live_is_acyclic());
    assert!(find_cycle(
        forward.agent_ids(),
        forward.edges().iter().map(|e| (&e.source, &e.target))
    )
    .is_none());
}

#[test]
fn arbitrary_documents_classify_consistently() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    for _ in 0..500 {
        let doc = cyclic_doc(&mut rng);
        let graph = build_graph(&doc, &Runtime::default()).unwrap();
        check_structure(&graph, DEFAULT_RETRY_BUDGET);
        for e in graph.edges().iter().filter(|e| e.is_reverse()) {
            assert_eq!(e.budget.unwrap().budget, DEFAULT_RETRY_BUDGET);
        }
    }
}

#[test]
fn generated_workflows_keep_declared_budgets() {
    let mut rng = ChaCha8Rng::seed_from_u64(52);
    for _ in 0..500 {
        let w = random_workflow(&mut rng, 12, 3, 3);
        let graph = build_graph(&w.doc, &Runtime::default()).unwrap();
        check_structure(&graph, DEFAULT_RETRY_BUDGET);
        for (s, t, b) in &w.reverse {
            let e = graph.edge(&AgentId::from(s.as_str()), &AgentId::from(t.as_str())).unwrap();
            assert!(e.is_reverse());
            assert_eq!(e.budget.unwrap().budget, *b);
            assert_eq!(e.is_live(), *b > 0);
        }
    }
}

#[test]
fn identical_bytes_build_identical_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    for _ in 0..200 {
        let text = cyclic_doc(&mut rng).to_json_pretty();
        let a = build_graph(&parse_workflow(&text).unwrap(), &Runtime::default()).unwrap();
        let b = build_graph(&parse_workflow(&text).unwrap(), &Runtime::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.topo_order(), b.topo_order());
    }
}

#[test]
fn neighbour_queries_track_prunes() {
    let mut rng = ChaCha8Rng::seed_from_u64(54);
    for _ in 0..300 {
        let doc = cyclic_doc(&mut rng);
        let mut graph = build_graph(&doc, &Runtime::default()).unwrap();
        let reverse: Vec<(AgentId, AgentId)> = graph
            .edges()
            .iter()
            .filter(|e| e.is_reverse())
            .map(|e| (e.source.clone(), e.target.clone()))
            .collect();
        let ids: Vec<AgentId> = graph.agent_ids().cloned().collect();
        let mut pruned: BTreeSet<(AgentId, AgentId)> = BTreeSet::new();
        for step in 0..=reverse.len() {
            let activated: BTreeSet<AgentId> = ids.iter().filter(|_| rng.gen_bool(0.5)).cloned().collect();
            let live = |s: &AgentId, t: &AgentId| {
                doc.edges.iter().any(|e| &e.source == s && &e.target == t)
                    && !pruned.contains(&(s.clone(), t.clone()))
            };
            for v in &ids {
                let pred: BTreeSet<AgentId> = ids.iter().filter(|u| live(u, v)).cloned().collect();
                let succ: BTreeSet<AgentId> = ids
                    .iter()
                    .filter(|w| live(v, w) && activated.contains(*w))
                    .cloned()
                    .collect();
                assert_eq!(graph.predecessors(v).unwrap(), pred);
                assert_eq!(graph.active_successors(v, &activated).unwrap(), succ);
            }
            if step < reverse.len() {
                let (s, t) = &reverse[step];
                graph.prune(s, t).unwrap();
                pruned.insert((s.clone(), t.clone()));
            }
        }
        assert!(graph.live_is_acyclic());
    }
}
