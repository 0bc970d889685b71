use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::wire::WireAttentionResponse;
use super::{
    backoff_delay, AttentionArtifactRequest, AttentionArtifacts, BackendError, LlmBackend,
    LlmGenerateRequest, LlmGenerateResponse, UnavailableReason, VqaAnswerRequest,
    VqaAnswerResponse, VqaBackend, LLM_GENERATE_PATH, VQA_ANSWER_PATH, VQA_ATTENTION_PATH,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    /// Extra attempts after the first failure.
    pub retries: u32,
    pub backoff_base_ms: u64,
    pub timeout_secs: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 2,
            backoff_base_ms: 500,
            timeout_secs: 60,
        }
    }
}

#[derive(Deserialize)]
struct ErrorBody {
    error: String,
}

/// Blocking JSON client for one model server.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    base_url: String,
    token: Option<String>,
    policy: RetryPolicy,
    agent: ureq::Agent,
}

enum Attempt {
    Retry(UnavailableReason),
    Fatal(UnavailableReason),
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, token: Option<String>, policy: RetryPolicy) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(policy.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            token,
            policy,
            agent,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn attempt(&self, path: &str, body: &str) -> Result<String, Attempt> {
        let mut req = self
            .agent
            .post(format!("{}{}", self.base_url, path))
            .header("Content-Type", "application/json");
        if let Some(t) = &self.token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        let mut resp = match req.send(body) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err(Attempt::Retry(UnavailableReason::Timeout)),
            Err(e) => return Err(Attempt::Retry(UnavailableReason::Transport(e.to_string()))),
        };
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Retry(UnavailableReason::Transport(e.to_string())))?;
        if (200..300).contains(&status) {
            return Ok(text);
        }
        let message = serde_json::from_str::<ErrorBody>(&text)
            .map(|b| b.error)
            .unwrap_or(text);
        let reason = UnavailableReason::Status {
            code: status,
            message,
        };
        if status >= 500 || status == 429 || status == 408 {
            Err(Attempt::Retry(reason))
        } else {
            Err(Attempt::Fatal(reason))
        }
    }

    /// POSTs `body` to `path`, retrying transient failures with exponential backoff.
    pub fn post_json<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        path: &str,
        body: &Req,
    ) -> Result<Resp, BackendError> {
        let payload = serde_json::to_string(body)
            .map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
        let base = Duration::from_millis(self.policy.backoff_base_ms);
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(path, &payload) {
                Ok(text) => {
                    return serde_json::from_str(&text).map_err(|e| BackendError::Unavailable {
                        endpoint: path.to_string(),
                        attempts,
                        reason: UnavailableReason::Protocol(format!("bad response body: {e}")),
                    })
                }
                Err(Attempt::Retry(reason)) if attempts <= self.policy.retries => {
                    tracing::warn!(endpoint = path, attempt = attempts, %reason, "retrying");
                    std::thread::sleep(backoff_delay(base, attempts - 1));
                }
                Err(Attempt::Retry(reason)) | Err(Attempt::Fatal(reason)) => {
                    return Err(BackendError::Unavailable {
                        endpoint: path.to_string(),
                        attempts,
                        reason,
                    })
                }
            }
        }
    }
}

impl VqaBackend for HttpBackend {
    fn vqa_answer(&self, req: &VqaAnswerRequest) -> Result<VqaAnswerResponse, BackendError> {
        req.validate()?;
        let resp: VqaAnswerResponse = self.post_json(VQA_ANSWER_PATH, req)?;
        if resp.answer.trim().is_empty() {
            return Err(BackendError::protocol(VQA_ANSWER_PATH, "empty answer"));
        }
        Ok(resp)
    }

    fn attention_artifacts(
        &self,
        req: &AttentionArtifactRequest,
    ) -> Result<AttentionArtifacts, BackendError> {
        req.validate()?;
        let wire: WireAttentionResponse = self.post_json(VQA_ATTENTION_PATH, req)?;
        wire.into_artifacts()
    }
}

impl LlmBackend for HttpBackend {
    fn llm_generate(&self, req: &LlmGenerateRequest) -> Result<LlmGenerateResponse, BackendError> {
        req.validate()?;
        self.post_json(LLM_GENERATE_PATH, req)
    }
}
