//! Multi-agent workflow engine.
//!
//! Agents are nodes of a directed graph, each with private memory, a
//! reasoning function and a tool set. Execution proceeds in rounds; edges
//! that run against the graph's topological order carry retry budgets so
//! that feedback loops are bounded. Agents missing context can convene a
//! huddle of collaborators found by breadth-first search over the graph.
//!
//! - [`graph`]: workflow documents, validation, edge classification
//! - [`store`]: private memories, artifacts, the JSON-lines trace
//! - [`context`]: context assembly and huddles
//! - [`scheduler`]: rounds, readiness, budgets and pruning
//! - [`runtime`]: reasoning functions, tools, back-end adapter, mocks
//! - [`topology`]: centralization and hierarchy metrics

pub mod context;
pub mod graph;
pub mod runtime;
pub mod scheduler;
pub mod store;
pub mod topology;

pub use context::{assemble_context, run_huddle, select_huddle_set, ContextBundle, HuddleSelection};
pub use graph::{build_graph, parse_workflow, validate_spec, AgentId, WorkflowDoc, WorkflowGraph};
pub use runtime::{film_pipeline_template, Runtime};
pub use scheduler::{run_workflow, RunConfig, RunOutcome, WorkflowResult};
pub use store::{load_trace, write_trace, RunStatus, Store, TraceEvent};
