//! Agent backend contracts and their implementations.
//!
//! Each of the four agents (perception, reasoning, action, evaluation) is a
//! trait. The loop only talks to them through the `call_*` functions in this
//! module, which check every response against its request before it is used.
//! Implementations: [`mock`] for deterministic offline runs and [`http`] for
//! remote model servers speaking the JSON protocol in [`protocol`].

pub mod mock;
pub mod protocol;

#[cfg(feature = "http")]
pub mod http;

use serde::{Deserialize, Serialize};

use crate::objectives::DimensionScores;
use crate::types::{BinaryMask, BoundingBox, FlawDiagnosis, ImageRef, RegionKind, SaliencyMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptionRequest {
    pub source: ImageRef,
    pub edited: ImageRef,
    pub instruction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptionResponse {
    pub artifact_map: SaliencyMap,
    pub failure_map: SaliencyMap,
}

impl PerceptionResponse {
    pub fn map(&self, kind: RegionKind) -> &SaliencyMap {
        match kind {
            RegionKind::Artifact => &self.artifact_map,
            RegionKind::EditingFailure => &self.failure_map,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningRequest {
    pub source: ImageRef,
    pub edited: ImageRef,
    pub instruction: String,
    pub region_kind: RegionKind,
    pub boxes: Vec<BoundingBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningResponse {
    pub diagnoses: Vec<FlawDiagnosis>,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRequest {
    pub source: ImageRef,
    pub previous_edit: ImageRef,
    pub re_edit_instruction: String,
    pub mask: BinaryMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionResponse {
    pub re_edited: ImageRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRequest {
    pub source: ImageRef,
    pub edited: ImageRef,
    pub instruction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResponse {
    pub scores: DimensionScores,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    /// Network-level failure; safe to retry with the same request id.
    #[error("{agent}: transport failure: {message}")]
    Transport { agent: &'static str, message: String },

    #[error("{agent}: protocol violation: {message}")]
    Protocol { agent: &'static str, message: String },

    /// The response parsed but breaks a contract invariant.
    #[error("{agent}: invariant violation: {invariant}")]
    Invariant {
        agent: &'static str,
        invariant: String,
    },

    /// The backend itself reported a failure.
    #[error("{agent}: backend error {code}: {message}")]
    Remote {
        agent: &'static str,
        code: String,
        message: String,
    },
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport { .. })
    }
}

pub type BackendResult<T> = Result<T, BackendError>;

pub trait PerceptionAgent: Send + Sync {
    fn perceive(&self, req: &PerceptionRequest) -> BackendResult<PerceptionResponse>;
}

pub trait ReasoningAgent: Send + Sync {
    fn reason(&self, req: &ReasoningRequest) -> BackendResult<ReasoningResponse>;
}

pub trait ActionAgent: Send + Sync {
    fn act(&self, req: &ActionRequest) -> BackendResult<ActionResponse>;
}

pub trait EvaluationAgent: Send + Sync {
    fn evaluate(&self, req: &EvaluationRequest) -> BackendResult<EvaluationResponse>;
}

/// The four agents serving one session.
pub struct BackendSet {
    pub perception: Box<dyn PerceptionAgent>,
    pub reasoning: Box<dyn ReasoningAgent>,
    pub action: Box<dyn ActionAgent>,
    pub evaluation: Box<dyn EvaluationAgent>,
}

/// Hands out a [`BackendSet`] per session. Stateful backends (such as the
/// scripted mocks) keep their state per session, so concurrent sessions
/// cannot observe each other.
pub trait BackendProvider: Send + Sync {
    fn session(&self, session_id: &str) -> BackendResult<BackendSet>;
}

fn invariant(agent: &'static str, invariant: impl Into<String>) -> BackendError {
    BackendError::Invariant {
        agent,
        invariant: invariant.into(),
    }
}

pub fn check_perception(req: &PerceptionRequest, resp: &PerceptionResponse) -> BackendResult<()> {
    let want = (req.edited.width, req.edited.height);
    for (name, m) in [("artifact_map", &resp.artifact_map), ("failure_map", &resp.failure_map)] {
        if m.dims() != want {
            return Err(invariant(
                "perception",
                format!("{name} is {:?}, edited image is {want:?}", m.dims()),
            ));
        }
    }
    Ok(())
}

pub fn check_reasoning(req: &ReasoningRequest, resp: &ReasoningResponse) -> BackendResult<()> {
    for d in &resp.diagnoses {
        if d.region_kind != req.region_kind {
            return Err(invariant(
                "reasoning",
                format!("diagnosis of kind {} for a {} request", d.region_kind, req.region_kind),
            ));
        }
        if !req.boxes.contains(&d.bbox) {
            return Err(invariant(
                "reasoning",
                format!("diagnosis references box {:?} that was not provided", d.bbox),
            ));
        }
        if let Some(v) = d.validate(req.edited.width, req.edited.height).first() {
            return Err(invariant("reasoning", v.to_string()));
        }
    }
    Ok(())
}

pub fn check_action(req: &ActionRequest, resp: &ActionResponse) -> BackendResult<()> {
    let (want, got) = (
        (req.previous_edit.width, req.previous_edit.height),
        (resp.re_edited.width, resp.re_edited.height),
    );
    if want != got {
        return Err(invariant(
            "action",
            format!("re-edited image is {got:?}, input was {want:?}"),
        ));
    }
    if resp.re_edited.id.is_empty() {
        return Err(invariant("action", "re-edited image has an empty id"));
    }
    Ok(())
}

pub fn check_evaluation(resp: &EvaluationResponse) -> BackendResult<()> {
    for s in resp.scores.as_array() {
        if !(s > 0.0 && s <= 100.0) {
            return Err(invariant("evaluation", format!("score {s} outside (0,100]")));
        }
    }
    Ok(())
}

pub fn call_perception(
    agent: &dyn PerceptionAgent,
    req: &PerceptionRequest,
) -> BackendResult<PerceptionResponse> {
    let resp = agent.perceive(req)?;
    check_perception(req, &resp)?;
    Ok(resp)
}

pub fn call_reasoning(
    agent: &dyn ReasoningAgent,
    req: &ReasoningRequest,
) -> BackendResult<ReasoningResponse> {
    let resp = agent.reason(req)?;
    check_reasoning(req, &resp)?;
    Ok(resp)
}

pub fn call_action(agent: &dyn ActionAgent, req: &ActionRequest) -> BackendResult<ActionResponse> {
    let resp = agent.act(req)?;
    check_action(req, &resp)?;
    Ok(resp)
}

pub fn call_evaluation(
    agent: &dyn EvaluationAgent,
    req: &EvaluationRequest,
) -> BackendResult<EvaluationResponse> {
    let resp = agent.evaluate(req)?;
    check_evaluation(&resp)?;
    Ok(resp)
}
