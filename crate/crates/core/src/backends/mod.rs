//! Client side of the model-serving protocol.
//!
//! Three JSON-over-HTTP endpoints are defined:
//!
//! | endpoint              | request                     | response                     |
//! |-----------------------|-----------------------------|------------------------------|
//! | `POST /v1/vqa/answer`    | [`VqaAnswerRequest`]        | [`VqaAnswerResponse`]        |
//! | `POST /v1/vqa/attention` | [`AttentionArtifactRequest`] | [`AttentionArtifactResponse`] |
//! | `POST /v1/llm/generate`  | [`LlmGenerateRequest`]      | [`LlmGenerateResponse`]      |
//!
//! Errors come back as `{"error": "..."}` with a non-2xx status.
//!
//! Besides the HTTP client this module ships deterministic mocks, fault
//! injection wrappers and a JSONL record/replay pair for hermetic tests.

mod calibrated;
mod http;
mod mock;
mod replay;
mod wire;

use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::attention::{FeatureStack, GradientStack, Grid};

pub use calibrated::{
    calibration_manifest, CalibratedLlm, CalibratedVqa, CalibrationTargets, REPORTED_STEP_PROFILE,
};
pub use http::{HttpBackend, RetryPolicy};
pub use mock::{FaultSet, MockLlm, MockVqa, ScriptedLlm, WithFaults};
pub use replay::{Recorder, Replay, ReplayEntry};
pub use wire::{TensorPayload, WireAttentionResponse};

pub const VQA_ANSWER_PATH: &str = "/v1/vqa/answer";
pub const VQA_ATTENTION_PATH: &str = "/v1/vqa/attention";
pub const LLM_GENERATE_PATH: &str = "/v1/llm/generate";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UnavailableReason {
    Transport(String),
    Timeout,
    Status { code: u16, message: String },
    Protocol(String),
}

impl std::fmt::Display for UnavailableReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            UnavailableReason::Transport(m) => write!(f, "transport error: {m}"),
            UnavailableReason::Timeout => write!(f, "timed out"),
            UnavailableReason::Status { code, message } => write!(f, "HTTP {code}: {message}"),
            UnavailableReason::Protocol(m) => write!(f, "protocol error: {m}"),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    /// Rejected locally, before any network traffic.
    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("{endpoint} unavailable after {attempts} attempt(s): {reason}")]
    Unavailable {
        endpoint: String,
        attempts: u32,
        reason: UnavailableReason,
    },

    #[error("no recorded response for {endpoint} request {hash}")]
    ReplayMiss { endpoint: String, hash: String },
}

impl BackendError {
    pub(crate) fn protocol(endpoint: &str, msg: impl Into<String>) -> Self {
        BackendError::Unavailable {
            endpoint: endpoint.to_string(),
            attempts: 1,
            reason: UnavailableReason::Protocol(msg.into()),
        }
    }

    pub(crate) fn injected(endpoint: &str) -> Self {
        BackendError::Unavailable {
            endpoint: endpoint.to_string(),
            attempts: 1,
            reason: UnavailableReason::Transport("injected fault".into()),
        }
    }
}

fn default_max_answer_tokens() -> u32 {
    64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VqaAnswerRequest {
    /// Base64 PNG or JPEG bytes.
    pub image: String,
    pub question: String,
    #[serde(default = "default_max_answer_tokens")]
    pub max_answer_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VqaAnswerResponse {
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionArtifactRequest {
    pub image: String,
    pub question: String,
}

pub type AttentionArtifactResponse = AttentionArtifacts;

/// Validated attention payload.
#[derive(Debug, Clone, PartialEq)]
pub enum AttentionArtifacts {
    /// Raw target-layer activations and gradients.
    Gradients {
        features: FeatureStack<f64>,
        gradients: GradientStack<f64>,
        target_layer: String,
        metadata: Option<serde_json::Value>,
    },
    /// Server-reduced heatmap in `[0,1]`.
    Heatmap {
        heatmap: Grid<f64>,
        target_layer: Option<String>,
        metadata: Option<serde_json::Value>,
    },
}

fn default_temperature() -> f64 {
    0.2
}
fn default_max_tokens() -> u32 {
    1024
}
fn default_top_p() -> f64 {
    0.95
}
fn default_top_k() -> u32 {
    40
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmGenerateRequest {
    pub prompt: String,
    #[serde(default)]
    pub images: Vec<String>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_top_p")]
    pub top_p: f64,
    #[serde(default = "default_top_k")]
    pub top_k: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmGenerateResponse {
    pub text: String,
}

/// Sampling parameters applied to every LLM request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub top_p: f64,
    pub top_k: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: default_temperature(),
            max_tokens: default_max_tokens(),
            top_p: default_top_p(),
            top_k: default_top_k(),
        }
    }
}

impl LlmGenerateRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self::with_params(prompt, Vec::new(), &GenerationParams::default())
    }

    pub fn with_params(prompt: impl Into<String>, images: Vec<String>, p: &GenerationParams) -> Self {
        Self {
            prompt: prompt.into(),
            images,
            temperature: p.temperature,
            max_tokens: p.max_tokens,
            top_p: p.top_p,
            top_k: p.top_k,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.prompt.trim().is_empty() {
            return Err(BackendError::InvalidRequest("prompt is empty".into()));
        }
        for (i, img) in self.images.iter().enumerate() {
            check_image(img).map_err(|e| BackendError::InvalidRequest(format!("image {i}: {e}")))?;
        }
        Ok(())
    }
}

fn check_image(b64: &str) -> Result<(), String> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(b64)
        .map_err(|e| format!("not base64: {e}"))?;
    match image::guess_format(&bytes) {
        Ok(image::ImageFormat::Png) | Ok(image::ImageFormat::Jpeg) => Ok(()),
        Ok(other) => Err(format!("unsupported image format {other:?}")),
        Err(e) => Err(format!("not an image: {e}")),
    }
}

impl VqaAnswerRequest {
    pub fn new(image_b64: impl Into<String>, question: impl Into<String>) -> Self {
        Self {
            image: image_b64.into(),
            question: question.into(),
            max_answer_tokens: default_max_answer_tokens(),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.question.trim().is_empty() {
            return Err(BackendError::InvalidRequest("question is empty".into()));
        }
        check_image(&self.image).map_err(BackendError::InvalidRequest)
    }
}

impl AttentionArtifactRequest {
    pub fn new(image_b64: impl Into<String>, question: impl Into<String>) -> Self {
        Self {
            image: image_b64.into(),
            question: question.into(),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.question.trim().is_empty() {
            return Err(BackendError::InvalidRequest("question is empty".into()));
        }
        check_image(&self.image).map_err(BackendError::InvalidRequest)
    }
}

/// Vision-language model server: short answers and attention tensors.
pub trait VqaBackend: Send + Sync {
    fn vqa_answer(&self, req: &VqaAnswerRequest) -> Result<VqaAnswerResponse, BackendError>;
    fn attention_artifacts(
        &self,
        req: &AttentionArtifactRequest,
    ) -> Result<AttentionArtifacts, BackendError>;
}

/// Text generation server.
pub trait LlmBackend: Send + Sync {
    fn llm_generate(&self, req: &LlmGenerateRequest) -> Result<LlmGenerateResponse, BackendError>;
}

impl<B: VqaBackend + ?Sized> VqaBackend for std::sync::Arc<B> {
    fn vqa_answer(&self, req: &VqaAnswerRequest) -> Result<VqaAnswerResponse, BackendError> {
        (**self).vqa_answer(req)
    }
    fn attention_artifacts(
        &self,
        req: &AttentionArtifactRequest,
    ) -> Result<AttentionArtifacts, BackendError> {
        (**self).attention_artifacts(req)
    }
}

impl<B: LlmBackend + ?Sized> LlmBackend for std::sync::Arc<B> {
    fn llm_generate(&self, req: &LlmGenerateRequest) -> Result<LlmGenerateResponse, BackendError> {
        (**self).llm_generate(req)
    }
}

impl<B: VqaBackend + ?Sized> VqaBackend for Box<B> {
    fn vqa_answer(&self, req: &VqaAnswerRequest) -> Result<VqaAnswerResponse, BackendError> {
        (**self).vqa_answer(req)
    }
    fn attention_artifacts(
        &self,
        req: &AttentionArtifactRequest,
    ) -> Result<AttentionArtifacts, BackendError> {
        (**self).attention_artifacts(req)
    }
}

impl<B: LlmBackend + ?Sized> LlmBackend for Box<B> {
    fn llm_generate(&self, req: &LlmGenerateRequest) -> Result<LlmGenerateResponse, BackendError> {
        (**self).llm_generate(req)
    }
}

/// The set of model handles a pipeline run needs.
pub struct Backends {
    pub vqa: Box<dyn VqaBackend>,
    /// Rewrites questions.
    pub reformulator: Box<dyn LlmBackend>,
    /// Builds reasoning chains and the final unified answer.
    pub integrator: Box<dyn LlmBackend>,
}

impl Backends {
    /// Seeded mocks for every role.
    pub fn mock(seed: u64) -> Self {
        Self {
            vqa: Box::new(MockVqa::new(seed)),
            reformulator: Box::new(MockLlm::reformulator(seed)),
            integrator: Box::new(MockLlm::integrator(seed)),
        }
    }
}

/// Hex SHA-256 of the canonical JSON encoding of a request.
pub fn request_hash<R: Serialize>(req: &R) -> String {
    let json = serde_json::to_vec(req).expect("request serializes");
    hex::encode(Sha256::digest(&json))
}

pub(crate) fn backoff_delay(base: Duration, attempt: u32) -> Duration {
    base.saturating_mul(1u32 << attempt.min(16))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn llm_request_defaults_on_the_wire() {
        let req: LlmGenerateRequest = serde_json::from_str(r#"{"prompt":"hi"}"#).unwrap();
        assert_eq!(req, LlmGenerateRequest::new("hi"));
        let v = serde_json::to_value(&req).unwrap();
        assert_eq!(v["temperature"], 0.2);
        assert_eq!(v["max_tokens"], 1024);
        assert_eq!(v["top_p"], 0.95);
        assert_eq!(v["top_k"], 40);
        assert_eq!(v["images"], serde_json::json!([]));
    }

    #[test]
    fn vqa_request_defaults() {
        let req: VqaAnswerRequest =
            serde_json::from_str(r#"{"image":"AA==","question":"q"}"#).unwrap();
        assert_eq!(req.max_answer_tokens, 64);
    }

    #[test]
    fn empty_prompt_rejected_locally() {
        assert!(matches!(
            LlmGenerateRequest::new("  ").validate(),
            Err(BackendError::InvalidRequest(_))
        ));
    }

    #[test]
    fn non_image_payload_rejected() {
        let b64 = base64::engine::general_purpose::STANDARD.encode(b"hello world");
        assert!(VqaAnswerRequest::new(b64, "q").validate().is_err());
    }

    #[test]
    fn backoff_doubles() {
        let base = Duration::from_millis(500);
        assert_eq!(backoff_delay(base, 0), Duration::from_millis(500));
        assert_eq!(backoff_delay(base, 1), Duration::from_millis(1000));
        assert_eq!(backoff_delay(base, 2), Duration::from_millis(2000));
    }

    #[test]
    fn request_hash_is_stable() {
        let a = request_hash(&LlmGenerateRequest::new("x"));
        let b = request_hash(&LlmGenerateRequest::new("x"));
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
        assert_ne!(a, request_hash(&LlmGenerateRequest::new("y")));
    }
}
