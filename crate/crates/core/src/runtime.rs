//! Reasoning functions, tool access control, the back-end adapter contract,
//! deterministic mock agents and the film-production pipeline template.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use thiserror::Error;

use crate::context::ContextBundle;
use crate::graph::{AgentId, AgentSpec, Catalog, EdgeDoc, EdgeKind, WorkflowDoc};
use crate::store::{short_digest, ArtifactLabel, InstructionSet};

/// Environment variable that points tool calls at a live back end.
pub const BACKEND_URL_ENV: &str = "OMNIGRAPH_BACKEND_URL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
    Image,
    Video,
    Audio,
    VideoUnderstanding,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Endpoint {
    Mock,
    Http { url: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub modality: Modality,
    pub endpoint: Endpoint,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("tool {0:?} is already registered")]
    DuplicateTool(String),
    #[error("unknown tool {0:?}")]
    UnknownTool(String),
    #[error("reasoning function {0:?} is already registered")]
    DuplicateReasoner(String),
}

#[derive(Debug, Clone, Default)]
pub struct ToolRegistry {
    tools: BTreeMap<String, ToolDescriptor>,
}

impl ToolRegistry {
    pub fn register_tool(&mut self, desc: ToolDescriptor) -> Result<(), RegistryError> {
        if self.tools.contains_key(&desc.name) {
            return Err(RegistryError::DuplicateTool(desc.name));
        }
        self.tools.insert(desc.name.clone(), desc);
        Ok(())
    }

    pub fn resolve_tool(&self, name: &str) -> Result<&ToolDescriptor, RegistryError> {
        self.tools
            .get(name)
            .ok_or_else(|| RegistryError::UnknownTool(name.to_owned()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tools.keys().map(String::as_str)
    }

    /// Tools for the five generation/understanding roles, all on `endpoint`.
    pub fn standard(endpoint: Endpoint) -> Self {
        let mut reg = ToolRegistry::default();
        for (name, modality) in [
            ("llm-text", Modality::Text),
            ("image-gen", Modality::Image),
            ("video-gen", Modality::Video),
            ("audio-foley", Modality::Audio),
            ("video-understanding", Modality::VideoUnderstanding),
        ] {
            reg.register_tool(ToolDescriptor {
                name: name.into(),
                modality,
                endpoint: endpoint.clone(),
            })
            .expect("standard tool names are unique");
        }
        reg
    }
}

/// Request body of the back-end wire contract.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdapterRequest {
    pub modality: Modality,
    pub prompt: String,
    pub params: Box<RawValue>,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdapterResponse {
    pub payload: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<Box<RawValue>>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("back end timed out")]
    Timeout,
    #[error("back end unreachable: {0}")]
    Unreachable(String),
    #[error("back end answered HTTP {0}")]
    Status(u16),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("agent {agent:?} may not call tool {tool:?}")]
    Unauthorized { agent: AgentId, tool: String },
}

/// Deterministic in-process back end: echoes a digest of the request and
/// passes `params` through untouched.
pub fn mock_backend_call(req: &AdapterRequest) -> AdapterResponse {
    let digest = request_digest(req);
    AdapterResponse {
        payload: format!("{}:{}", modality_tag(req.modality), digest),
        params: Some(req.params.clone()),
    }
}

pub fn request_digest(req: &AdapterRequest) -> String {
    let mut material = Vec::new();
    material.extend_from_slice(modality_tag(req.modality).as_bytes());
    material.push(0);
    material.extend_from_slice(req.prompt.as_bytes());
    material.push(0);
    material.extend_from_slice(req.params.get().as_bytes());
    material.push(0);
    material.extend_from_slice(&req.seed.to_le_bytes());
    short_digest(&material)
}

fn modality_tag(m: Modality) -> &'static str {
    match m {
        Modality::Text => "text",
        Modality::Image => "image",
        Modality::Video => "video",
        Modality::Audio => "audio",
        Modality::VideoUnderstanding => "video_understanding",
    }
}

const HTTP_TIMEOUT: Duration = Duration::from_secs(10);

/// POSTs the request as a Content-Length framed JSON body.
pub fn http_backend_call(
    url: &str,
    req: &AdapterRequest,
    timeout: Duration,
) -> Result<AdapterResponse, TransportError> {
    let body = serde_json::to_string(req).map_err(|e| TransportError::Protocol(e.to_string()))?;
    let agent = ureq::AgentBuilder::new().timeout(timeout).build();
    let resp = agent
        .post(url)
        .set("Content-Type", "application/json")
        .send_string(&body);
    let resp = match resp {
        Ok(r) => r,
        Err(ureq::Error::Status(code, _)) => return Err(TransportError::Status(code)),
        Err(ureq::Error::Transport(t)) => return Err(classify_transport(&t)),
    };
    let text = resp
        .into_string()
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock => TransportError::Timeout,
            _ => TransportError::Protocol(e.to_string()),
        })?;
    serde_json::from_str(&text).map_err(|e| TransportError::Protocol(e.to_string()))
}

fn classify_transport(t: &ureq::Transport) -> TransportError {
    let io_kind = std::error::Error::source(t)
        .and_then(|s| s.downcast_ref::<std::io::Error>())
        .map(|e| e.kind());
    match (t.kind(), io_kind) {
        (_, Some(std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock)) => {
            TransportError::Timeout
        }
        (ureq::ErrorKind::Dns | ureq::ErrorKind::ConnectionFailed, _) => {
            TransportError::Unreachable(t.to_string())
        }
        (ureq::ErrorKind::Io, _) => TransportError::Unreachable(t.to_string()),
        _ => TransportError::Protocol(t.to_string()),
    }
}

/// Dispatches one tool request to the descriptor's endpoint.
pub fn backend_adapter_call(
    desc: &ToolDescriptor,
    req: &AdapterRequest,
) -> Result<AdapterResponse, TransportError> {
    match &desc.endpoint {
        Endpoint::Mock => Ok(mock_backend_call(req)),
        Endpoint::Http { url } => http_backend_call(url, req, HTTP_TIMEOUT),
    }
}

/// Tool access scoped to one agent's T_i. Records every successful call.
pub struct ToolBox<'a> {
    agent: &'a AgentId,
    allowed: &'a BTreeSet<String>,
    registry: &'a ToolRegistry,
    seed: u64,
    calls: Vec<String>,
}

impl<'a> ToolBox<'a> {
    pub fn new(
        agent: &'a AgentId,
        allowed: &'a BTreeSet<String>,
        registry: &'a ToolRegistry,
        seed: u64,
    ) -> Self {
        ToolBox {
            agent,
            allowed,
            registry,
            seed,
            calls: Vec::new(),
        }
    }

    pub fn allowed(&self) -> &BTreeSet<String> {
        self.allowed
    }

    pub fn call(
        &mut self,
        tool: &str,
        prompt: &str,
        params: &str,
    ) -> Result<AdapterResponse, TransportError> {
        if !self.allowed.contains(tool) {
            return Err(TransportError::Unauthorized {
                agent: self.agent.clone(),
                tool: tool.to_owned(),
            });
        }
        let desc = self
            .registry
            .resolve_tool(tool)
            .map_err(|e| TransportError::Protocol(e.to_string()))?;
        let params = RawValue::from_string(params.to_owned())
            .map_err(|e| TransportError::Protocol(e.to_string()))?;
        let req = AdapterRequest {
            modality: desc.modality,
            prompt: prompt.to_owned(),
            params,
            seed: self.seed,
        };
        let resp = backend_adapter_call(desc, &req)?;
        self.calls.push(tool.to_owned());
        Ok(resp)
    }

    pub fn into_calls(self) -> Vec<String> {
        self.calls
    }
}

/// An out-edge as seen by the agent that owns it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Successor {
    pub id: AgentId,
    pub kind: EdgeKind,
    pub live: bool,
}

/// Input to f_i.
#[derive(Debug, Clone)]
pub struct ReasoningRequest {
    pub agent: AgentId,
    pub stage: String,
    pub context: ContextBundle,
    pub round: u32,
    /// 1-based per-agent attempt index, derived from the attempt log.
    pub attempt: u32,
    pub seed: u64,
    pub successors: Vec<Successor>,
    pub required_context: Vec<String>,
    /// Stage tags represented in `context` (artifact producers and huddle
    /// contributors).
    pub context_stages: BTreeSet<String>,
}

impl ReasoningRequest {
    pub fn context_satisfied(&self) -> bool {
        self.required_context
            .iter()
            .all(|r| self.context_stages.contains(r))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactDraft {
    pub producer: AgentId,
    pub label: ArtifactLabel,
    pub payload: String,
}

/// Output of f_i: (O_i, I_{i->*}) plus huddle flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReasoningResponse {
    pub artifact: ArtifactDraft,
    pub instructions: InstructionSet,
    pub needs_huddle: bool,
    pub sufficiency_signal: bool,
}

/// Request for one huddle turn.
#[derive(Debug, Clone)]
pub struct HuddleTurnRequest {
    pub speaker: AgentId,
    pub speaker_stage: String,
    pub requester: AgentId,
    pub session: u64,
    pub cycle: u32,
    pub transcript: Vec<(AgentId, String)>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Contribution {
    pub text: String,
    pub sufficient: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReasoningError {
    #[error("tool call failed: {0}")]
    Transport(#[from] TransportError),
    #[error("reasoning failed: {0}")]
    Failed(String),
}

/// A registered reasoning function f_i.
pub trait Reasoner: Send + Sync {
    fn reason(
        &self,
        req: &ReasoningRequest,
        tools: &mut ToolBox<'_>,
    ) -> Result<ReasoningResponse, ReasoningError>;

    fn contribute(&self, req: &HuddleTurnRequest) -> Result<Contribution, ReasoningError> {
        Ok(Contribution {
            text: format!(
                "{} ({}) on cycle {} for {}",
                req.speaker, req.speaker_stage, req.cycle, req.requester
            ),
            sufficient: false,
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InvokeError {
    #[error("unresolvable reasoning_ref {0:?}")]
    Unresolved(String),
    #[error(transparent)]
    Reasoning(#[from] ReasoningError),
    #[error("protocol error: {0}")]
    Protocol(String),
}

/// Maps a stage tag to the artifact label the mocks emit.
pub fn label_for_stage(stage: &str) -> ArtifactLabel {
    match stage {
        "script" => ArtifactLabel::Script,
        "storyboard" => ArtifactLabel::Storyboard,
        "video_composition" => ArtifactLabel::Clip,
        "audio" => ArtifactLabel::Audio,
        "post_production" => ArtifactLabel::Cut,
        _ => ArtifactLabel::Other,
    }
}

fn describe_inputs(req: &ReasoningRequest) -> String {
    if req.context.artifacts.is_empty() {
        return "∅".to_owned();
    }
    let parts: Vec<String> = req
        .context
        .artifacts
        .iter()
        .map(|a| format!("{}.{}.v{}", a.producer, a.label, a.version))
        .collect();
    format!("{{{}}}", parts.join(", "))
}

fn forward_directives(req: &ReasoningRequest, body: &str) -> BTreeMap<AgentId, String> {
    req.successors
        .iter()
        .filter(|s| s.kind == EdgeKind::Forward)
        .map(|s| (s.id.clone(), body.to_owned()))
        .collect()
}

/// Emits `<label> v<attempt> from <inputs>` and instructs every forward
/// successor. Calls each of its tools once with the payload as prompt.
#[derive(Debug, Default)]
pub struct EchoAgent;

impl Reasoner for EchoAgent {
    fn reason(
        &self,
        req: &ReasoningRequest,
        tools: &mut ToolBox<'_>,
    ) -> Result<ReasoningResponse, ReasoningError> {
        let label = label_for_stage(&req.stage);
        let mut payload = format!("{} v{} from {}", label, req.attempt, describe_inputs(req));
        if !req.context.enrichment.is_empty() {
            payload.push_str(&format!(" +{} notes", req.context.enrichment.len()));
        }
        let names: Vec<String> = tools.allowed().iter().cloned().collect();
        for tool in names {
            let resp = tools.call(&tool, &payload, r#"{"stage":"mock"}"#)?;
            payload.push_str(&format!(" [{}]", resp.payload));
        }
        let body = format!("continue from {} v{}", label, req.attempt);
        Ok(ReasoningResponse {
            artifact: ArtifactDraft {
                producer: req.agent.clone(),
                label,
                payload,
            },
            instructions: InstructionSet {
                issuer: Some(req.agent.clone()),
                directives: forward_directives(req, &body),
            },
            needs_huddle: !req.context_satisfied() && req.context.enrichment.is_empty(),
            sufficiency_signal: false,
        })
    }
}

/// Reviews upstream work. Rejects on its first `rejections` attempts (or
/// always, when `None`) by sending revision requests over its live reverse
/// edges; otherwise accepts and instructs forward successors. With no live
/// reverse edge left it accepts regardless.
#[derive(Debug)]
pub struct SupervisorAgent {
    pub rejections: Option<u32>,
}

impl Reasoner for SupervisorAgent {
    fn reason(
        &self,
        req: &ReasoningRequest,
        _tools: &mut ToolBox<'_>,
    ) -> Result<ReasoningResponse, ReasoningError> {
        let wants_reject = self.rejections.is_none_or(|n| req.attempt <= n);
        let reverse: Vec<&Successor> = req
            .successors
            .iter()
            .filter(|s| s.kind == EdgeKind::Reverse && s.live)
            .collect();
        let (verdict, directives) = if wants_reject && !reverse.is_empty() {
            let body = format!(
                "revise: continuity break found in review {} of {}",
                req.attempt,
                describe_inputs(req)
            );
            (
                "reject",
                reverse
                    .iter()
                    .map(|s| (s.id.clone(), body.clone()))
                    .collect(),
            )
        } else {
            let body = format!("approved in review {}", req.attempt);
            ("accept", forward_directives(req, &body))
        };
        Ok(ReasoningResponse {
            artifact: ArtifactDraft {
                producer: req.agent.clone(),
                label: label_for_stage(&req.stage),
                payload: format!("review v{}: {} {}", req.attempt, verdict, describe_inputs(req)),
            },
            instructions: InstructionSet {
                issuer: Some(req.agent.clone()),
                directives,
            },
            needs_huddle: false,
            sufficiency_signal: false,
        })
    }
}

/// Always fails.
#[derive(Debug, Default)]
pub struct FailingAgent;

impl Reasoner for FailingAgent {
    fn reason(
        &self,
        req: &ReasoningRequest,
        _tools: &mut ToolBox<'_>,
    ) -> Result<ReasoningResponse, ReasoningError> {
        Err(ReasoningError::Failed(format!("{} is scripted to fail", req.agent)))
    }

    fn contribute(&self, req: &HuddleTurnRequest) -> Result<Contribution, ReasoningError> {
        Err(ReasoningError::Failed(format!("{} is scripted to fail", req.speaker)))
    }
}

/// Echo behaviour whose huddle contributions signal sufficiency.
#[derive(Debug, Default)]
pub struct OracleAgent;

impl Reasoner for OracleAgent {
    fn reason(
        &self,
        req: &ReasoningRequest,
        tools: &mut ToolBox<'_>,
    ) -> Result<ReasoningResponse, ReasoningError> {
        EchoAgent.reason(req, tools)
    }

    fn contribute(&self, req: &HuddleTurnRequest) -> Result<Contribution, ReasoningError> {
        Ok(Contribution {
            text: format!("{} has what {} needs", req.speaker, req.requester),
            sufficient: true,
        })
    }
}

/// Reasoning functions plus tools. Resolves the built-in mock family:
/// `mock/echo`, `mock/fail`, `mock/oracle`, `mock/supervisor:<n>` and
/// `mock/supervisor:forever`.
#[derive(Clone)]
pub struct Runtime {
    reasoners: BTreeMap<String, Arc<dyn Reasoner>>,
    tools: ToolRegistry,
}

impl fmt::Debug for Runtime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Runtime")
            .field("reasoners", &self.reasoners.keys().collect::<Vec<_>>())
            .field("tools", &self.tools)
            .finish()
    }
}

impl Default for Runtime {
    fn default() -> Self {
        Runtime::with_tools(ToolRegistry::standard(Endpoint::Mock))
    }
}

impl Runtime {
    pub fn with_tools(tools: ToolRegistry) -> Self {
        Runtime {
            reasoners: BTreeMap::new(),
            tools,
        }
    }

    /// Standard tools bound to `OMNIGRAPH_BACKEND_URL` when set, mocks otherwise.
    pub fn from_env() -> Self {
        let endpoint = match std::env::var(BACKEND_URL_ENV) {
            Ok(url) if !url.is_empty() => Endpoint::Http { url },
            _ => Endpoint::Mock,
        };
        Runtime::with_tools(ToolRegistry::standard(endpoint))
    }

    pub fn tools(&self) -> &ToolRegistry {
        &self.tools
    }

    pub fn tools_mut(&mut self) -> &mut ToolRegistry {
        &mut self.tools
    }

    pub fn register_reasoner(
        &mut self,
        name: impl Into<String>,
        reasoner: Arc<dyn Reasoner>,
    ) -> Result<(), RegistryError> {
        let name = name.into();
        if self.reasoners.contains_key(&name) || builtin(&name).is_some() {
            return Err(RegistryError::DuplicateReasoner(name));
        }
        self.reasoners.insert(name, reasoner);
        Ok(())
    }

    pub fn resolve(&self, reasoning_ref: &str) -> Option<Arc<dyn Reasoner>> {
        self.reasoners
            .get(reasoning_ref)
            .cloned()
            .or_else(|| builtin(reasoning_ref))
    }

    /// Runs f_i for `spec` and validates the response before returning it
    /// together with the tools it called.
    pub fn invoke(
        &self,
        spec: &AgentSpec,
        req: &ReasoningRequest,
    ) -> Result<(ReasoningResponse, Vec<String>), InvokeError> {
        let reasoner = self
            .resolve(&spec.reasoning_ref)
            .ok_or_else(|| InvokeError::Unresolved(spec.reasoning_ref.clone()))?;
        let mut tools = ToolBox::new(&spec.id, &spec.tools, &self.tools, req.seed);
        let resp = reasoner.reason(req, &mut tools)?;
        validate_response(req, &resp)?;
        Ok((resp, tools.into_calls()))
    }

    pub fn contribute(
        &self,
        spec: &AgentSpec,
        req: &HuddleTurnRequest,
    ) -> Result<Contribution, InvokeError> {
        let reasoner = self
            .resolve(&spec.reasoning_ref)
            .ok_or_else(|| InvokeError::Unresolved(spec.reasoning_ref.clone()))?;
        Ok(reasoner.contribute(req)?)
    }
}

fn builtin(name: &str) -> Option<Arc<dyn Reasoner>> {
    match name {
        "mock/echo" => Some(Arc::new(EchoAgent)),
        "mock/fail" => Some(Arc::new(FailingAgent)),
        "mock/oracle" => Some(Arc::new(OracleAgent)),
        "mock/supervisor:forever" => Some(Arc::new(SupervisorAgent { rejections: None })),
        _ => {
            let n = name.strip_prefix("mock/supervisor:")?.parse().ok()?;
            Some(Arc::new(SupervisorAgent {
                rejections: Some(n),
            }))
        }
    }
}

fn validate_response(req: &ReasoningRequest, resp: &ReasoningResponse) -> Result<(), InvokeError> {
    if resp.artifact.producer != req.agent {
        return Err(InvokeError::Protocol(format!(
            "artifact producer {} does not match agent {}",
            resp.artifact.producer, req.agent
        )));
    }
    if resp.artifact.payload.is_empty() {
        return Err(InvokeError::Protocol("empty artifact payload".into()));
    }
    if let Some(issuer) = &resp.instructions.issuer {
        if issuer != &req.agent {
            return Err(InvokeError::Protocol(format!(
                "instructions issued as {issuer}, not {}",
                req.agent
            )));
        }
    }
    for target in resp.instructions.directives.keys() {
        if !req.successors.iter().any(|s| &s.id == target) {
            return Err(InvokeError::Protocol(format!(
                "instruction target {target} is not a successor of {}",
                req.agent
            )));
        }
    }
    Ok(())
}

impl Catalog for Runtime {
    fn has_reasoning(&self, reasoning_ref: &str) -> bool {
        self.resolve(reasoning_ref).is_some()
    }

    fn has_tool(&self, name: &str) -> bool {
        self.tools.resolve_tool(name).is_ok()
    }
}

/// The hierarchical film-production workflow: one agent per production
/// stage, a script supervisor reviewing the composed video, and a reverse
/// edge from the supervisor back to the scriptwriter.
///
/// Tool assignment follows each stage's modality.
pub fn film_pipeline_template() -> WorkflowDoc {
    let agent = |id: &str, role: &str, stage: &str, tools: &[&str], reasoning: &str, needs: &[&str]| {
        AgentSpec {
            id: id.into(),
            role_label: role.into(),
            stage: stage.into(),
            tools: tools.iter().map(|t| t.to_string()).collect(),
            reasoning_ref: reasoning.into(),
            required_context: needs.iter().map(|t| t.to_string()).collect(),
        }
    };
    let edge = |s: &str, t: &str| EdgeDoc {
        source: s.into(),
        target: t.into(),
        retry_budget: None,
    };
    WorkflowDoc {
        agents: vec![
            agent("concept", "Concept Developer", "concept", &["llm-text"], "mock/echo", &[]),
            agent("scriptwriter", "Scriptwriter", "script", &["llm-text"], "mock/echo", &[]),
            agent(
                "storyboard",
                "Storyboard Artist",
                "storyboard",
                &["image-gen", "llm-text"],
                "mock/echo",
                &["concept"],
            ),
            agent("visual_assets", "Visual Asset Designer", "visual_assets", &["image-gen"], "mock/echo", &[]),
            agent("video_composition", "Video Composer", "video_composition", &["video-gen"], "mock/echo", &[]),
            agent(
                "script_supervisor",
                "Script Supervisor",
                "supervision",
                &["llm-text", "video-understanding"],
                "mock/supervisor:1",
                &[],
            ),
            agent("post_production", "Post-Production Editor", "post_production", &["audio-foley"], "mock/echo", &[]),
        ],
        edges: vec![
            edge("concept", "scriptwriter"),
            edge("scriptwriter", "storyboard"),
            edge("storyboard", "visual_assets"),
            edge("visual_assets", "video_composition"),
            edge("video_composition", "script_supervisor"),
            edge("script_supervisor", "post_production"),
            edge("script_supervisor", "scriptwriter"),
        ],
        d_max: Some(2),
        turn_limit: Some(2),
        retry_budget_default: Some(3),
        max_rounds: None,
        seed: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, validate_spec, EdgeKind};

    fn request(agent: &str, stage: &str, attempt: u32, successors: Vec<Successor>) -> ReasoningRequest {
        ReasoningRequest {
            agent: agent.into(),
            stage: stage.into(),
            context: ContextBundle::empty(agent.into()),
            round: 1,
            attempt,
            seed: 7,
            successors,
            required_context: vec![],
            context_stages: BTreeSet::new(),
        }
    }

    fn spec(id: &str, reasoning: &str, tools: &[&str]) -> AgentSpec {
        AgentSpec {
            id: id.into(),
            role_label: String::new(),
            stage: "script".into(),
            tools: tools.iter().map(|t| t.to_string()).collect(),
            reasoning_ref: reasoning.into(),
            required_context: vec![],
        }
    }

    #[test]
    fn echo_writer_on_empty_context() {
        let rt = Runtime::default();
        let (resp, calls) = rt
            .invoke(&spec("writer", "mock/echo", &[]), &request("writer", "script", 1, vec![]))
            .unwrap();
        assert_eq!(resp.artifact.payload, "script v1 from ∅");
        assert_eq!(resp.artifact.label, ArtifactLabel::Script);
        assert!(resp.instructions.directives.is_empty());
        assert!(calls.is_empty());
    }

    #[test]
    fn invoke_is_deterministic() {
        let rt = Runtime::default();
        let s = spec("writer", "mock/echo", &["llm-text", "image-gen"]);
        let req = request("writer", "script", 2, vec![]);
        let a = rt.invoke(&s, &req).unwrap();
        let b = rt.invoke(&s, &req).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.1, vec!["image-gen".to_string(), "llm-text".to_string()]);
    }

    #[test]
    fn scripted_supervisor_rejects_twice_then_accepts() {
        let rt = Runtime::default();
        let s = spec("sup", "mock/supervisor:2", &[]);
        let succ = vec![
            Successor {
                id: "post".into(),
                kind: EdgeKind::Forward,
                live: true,
            },
            Successor {
                id: "writer".into(),
                kind: EdgeKind::Reverse,
                live: true,
            },
        ];
        for attempt in 1..=3 {
            let (resp, _) = rt.invoke(&s, &request("sup", "supervision", attempt, succ.clone())).unwrap();
            let targets: Vec<&str> = resp.instructions.directives.keys().map(|k| k.as_str()).collect();
            if attempt <= 2 {
                assert_eq!(targets, vec!["writer"]);
                assert!(resp.artifact.payload.contains("reject"));
            } else {
                assert_eq!(targets, vec!["post"]);
                assert!(resp.artifact.payload.contains("accept"));
            }
        }
    }

    #[test]
    fn instruction_to_non_successor_is_protocol_error() {
        struct Rogue;
        impl Reasoner for Rogue {
            fn reason(&self, req: &ReasoningRequest, _: &mut ToolBox<'_>) -> Result<ReasoningResponse, ReasoningError> {
                Ok(ReasoningResponse {
                    artifact: ArtifactDraft {
                        producer: req.agent.clone(),
                        label: ArtifactLabel::Other,
                        payload: "x".into(),
                    },
                    instructions: InstructionSet {
                        issuer: None,
                        directives: BTreeMap::from([(AgentId::from("stranger"), "hi".into())]),
                    },
                    needs_huddle: false,
                    sufficiency_signal: false,
                })
            }
        }
        let mut rt = Runtime::default();
        rt.register_reasoner("rogue", Arc::new(Rogue)).unwrap();
        let err = rt.invoke(&spec("a", "rogue", &[]), &request("a", "s", 1, vec![])).unwrap_err();
        assert!(matches!(err, InvokeError::Protocol(_)));
        assert!(matches!(
            rt.register_reasoner("mock/echo", Arc::new(EchoAgent)),
            Err(RegistryError::DuplicateReasoner(_))
        ));
    }

    #[test]
    fn tool_registry_round_trip_and_authorization() {
        let mut reg = ToolRegistry::default();
        let desc = ToolDescriptor {
            name: "storyboard-image".into(),
            modality: Modality::Image,
            endpoint: Endpoint::Mock,
        };
        reg.register_tool(desc.clone()).unwrap();
        assert_eq!(reg.resolve_tool("storyboard-image").unwrap(), &desc);
        assert_eq!(
            reg.register_tool(desc),
            Err(RegistryError::DuplicateTool("storyboard-image".into()))
        );
        assert!(matches!(reg.resolve_tool("nope"), Err(RegistryError::UnknownTool(_))));

        let agent = AgentId::from("writer");
        let allowed = BTreeSet::new();
        let mut tb = ToolBox::new(&agent, &allowed, &reg, 0);
        assert!(matches!(
            tb.call("storyboard-image", "p", "{}"),
            Err(TransportError::Unauthorized { .. })
        ));
        assert!(tb.into_calls().is_empty());
    }

    #[test]
    fn mock_video_payload_carries_request_digest() {
        let req = AdapterRequest {
            modality: Modality::Video,
            prompt: "warrior at the bridge".into(),
            params: RawValue::from_string(r#"{ "fps" : 24,"seconds":  60 }"#.into()).unwrap(),
            seed: 7,
        };
        let resp = backend_adapter_call(
            &ToolDescriptor {
                name: "video-gen".into(),
                modality: Modality::Video,
                endpoint: Endpoint::Mock,
            },
            &req,
        )
        .unwrap();
        // Independent recomputation of the digest material.
        let mut material = b"video\0warrior at the bridge\0".to_vec();
        material.extend_from_slice(br#"{ "fps" : 24,"seconds":  60 }"#);
        material.push(0);
        material.extend_from_slice(&7u64.to_le_bytes());
        let expected = hex::encode(&<sha2::Sha256 as sha2::Digest>::digest(&material)[..8]);
        assert_eq!(resp.payload, format!("video:{expected}"));
        assert_eq!(resp.params.unwrap().get(), r#"{ "fps" : 24,"seconds":  60 }"#);
    }

    #[test]
    fn template_is_valid_with_one_reverse_edge() {
        let rt = Runtime::default();
        let doc = film_pipeline_template();
        assert_eq!(validate_spec(&doc, &rt), vec![]);
        let g = build_graph(&doc, &rt).unwrap();
        let reverse: Vec<_> = g.edges().iter().filter(|e| e.is_reverse()).collect();
        assert_eq!(reverse.len(), 1);
        assert_eq!(
            (reverse[0].source.as_str(), reverse[0].target.as_str()),
            ("script_supervisor", "scriptwriter")
        );
        assert_eq!(reverse[0].budget.unwrap().budget, 3);
    }
}
