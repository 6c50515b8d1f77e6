//! The text-generation boundary.
//!
//! Every backend implements [`Generator`]: an HTTP client for
//! OpenAI-compatible completion servers, a deterministic simulated oracle for
//! desk-scale runs, and a replay backend for recorded fixtures.

mod http;
mod replay;
mod simulator;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use http::{HttpBackend, HttpConfig, RetryPolicy, API_KEY_ENV};
pub use replay::{RecordedCompletion, RecordingBackend, ReplayBackend};
pub use simulator::{simulate_generate, Confusion, DrawScope, SimulatedOracle, SimulatedOracleConfig};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("server error {status}: {message}")]
    Server { status: u16, message: String },
    #[error("rate limited")]
    RateLimited,
    #[error("oracle error: {0}")]
    Oracle(String),
    #[error("no recorded completion for {0}")]
    MissingRecording(String),
    #[error("invalid backend configuration: {0}")]
    Config(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) | BackendError::RateLimited => true,
            BackendError::Server { status, .. } => *status == 408 || *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// Which part of the pipeline issued a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Discovery,
    Denoising,
    Prediction,
    Probe,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Discovery => "discovery",
            Phase::Denoising => "denoising",
            Phase::Prediction => "prediction",
            Phase::Probe => "probe",
        })
    }
}

/// Identifies a request independently of its prompt text.
///
/// `attempt` is the discovery attempt (or probe setting), `round` the
/// denoising round (or probe demo count), `step` the batch or tournament
/// step inside it, and `retry` counts re-asks of the same step.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RequestTag {
    pub instance_id: String,
    pub phase: Phase,
    pub attempt: u32,
    pub round: u32,
    pub step: u32,
    pub retry: u32,
}

impl RequestTag {
    pub fn new(instance_id: impl Into<String>, phase: Phase, attempt: u32) -> Self {
        Self { instance_id: instance_id.into(), phase, attempt, round: 0, step: 0, retry: 0 }
    }

    pub fn round(mut self, round: u32) -> Self {
        self.round = round;
        self
    }

    pub fn step(mut self, step: u32) -> Self {
        self.step = step;
        self
    }

    pub fn retry(mut self, retry: u32) -> Self {
        self.retry = retry;
        self
    }
}

impl fmt::Display for RequestTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}|{}|{}|{}|{}", self.instance_id, self.phase, self.attempt, self.round, self.step, self.retry)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f32,
    pub stop: Vec<String>,
    pub tag: RequestTag,
}

/// A text-generation service. Implementations must tolerate concurrent calls.
pub trait Generator: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError>;

    /// Self-description recorded in run manifests.
    fn describe(&self) -> serde_json::Value;
}

impl<G: Generator + ?Sized> Generator for &G {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        (**self).generate(request)
    }

    fn describe(&self) -> serde_json::Value {
        (**self).describe()
    }
}

impl<G: Generator + ?Sized> Generator for Box<G> {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        (**self).generate(request)
    }

    fn describe(&self) -> serde_json::Value {
        (**self).describe()
    }
}

/// Cuts `text` at the first occurrence of any stop sequence.
pub fn apply_stop(text: &str, stop: &[String]) -> String {
    let cut = stop.iter().filter(|s| !s.is_empty()).filter_map(|s| text.find(s.as_str())).min();
    match cut {
        Some(i) => text[..i].to_string(),
        None => text.to_string(),
    }
}
