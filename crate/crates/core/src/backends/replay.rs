//! JSONL record/replay of backend traffic.
//!
//! Each line is `{"endpoint": "/v1/...", "request_hash": "<sha256>", "response": {...}}`.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::wire::WireAttentionResponse;
use super::{
    request_hash, AttentionArtifactRequest, AttentionArtifacts, BackendError, LlmBackend,
    LlmGenerateRequest, LlmGenerateResponse, VqaAnswerRequest, VqaAnswerResponse, VqaBackend,
    LLM_GENERATE_PATH, VQA_ANSWER_PATH, VQA_ATTENTION_PATH,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub endpoint: String,
    pub request_hash: String,
    pub response: serde_json::Value,
}

/// Forwards to an inner backend and appends every successful exchange to a
/// JSONL fixture.
pub struct Recorder<B> {
    inner: B,
    sink: Mutex<File>,
}

impl<B> Recorder<B> {
    pub fn create(inner: B, path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            inner,
            sink: Mutex::new(file),
        })
    }

    fn record<R: Serialize, S: Serialize>(&self, endpoint: &str, req: &R, resp: &S) {
        let entry = ReplayEntry {
            endpoint: endpoint.to_string(),
            request_hash: request_hash(req),
            response: serde_json::to_value(resp).expect("response serializes"),
        };
        let mut line = serde_json::to_string(&entry).expect("entry serializes");
        line.push('\n');
        let mut sink = self.sink.lock().unwrap_or_else(|p| p.into_inner());
        if let Err(e) = sink.write_all(line.as_bytes()) {
            tracing::error!(error = %e, "failed to append replay entry");
        }
    }
}

impl<B: VqaBackend> VqaBackend for Recorder<B> {
    fn vqa_answer(&self, req: &VqaAnswerRequest) -> Result<VqaAnswerResponse, BackendError> {
        let resp = self.inner.vqa_answer(req)?;
        self.record(VQA_ANSWER_PATH, req, &resp);
        Ok(resp)
    }

    fn attention_artifacts(
        &self,
        req: &AttentionArtifactRequest,
    ) -> Result<AttentionArtifacts, BackendError> {
        let resp = self.inner.attention_artifacts(req)?;
        self.record(VQA_ATTENTION_PATH, req, &WireAttentionResponse::from_artifacts(&resp));
        Ok(resp)
    }
}

impl<B: LlmBackend> LlmBackend for Recorder<B> {
    fn llm_generate(&self, req: &LlmGenerateRequest) -> Result<LlmGenerateResponse, BackendError> {
        let resp = self.inner.llm_generate(req)?;
        self.record(LLM_GENERATE_PATH, req, &resp);
        Ok(resp)
    }
}

/// Serves responses from a recorded fixture; unknown requests are misses.
#[derive(Debug, Clone, Default)]
pub struct Replay {
    entries: HashMap<(String, String), serde_json::Value>,
}

impl Replay {
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let e: ReplayEntry = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            entries.insert((e.endpoint, e.request_hash), e.response);
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn lookup<R: Serialize, S: serde::de::DeserializeOwned>(
        &self,
        endpoint: &str,
        req: &R,
    ) -> Result<S, BackendError> {
        let hash = request_hash(req);
        let value = self
            .entries
            .get(&(endpoint.to_string(), hash.clone()))
            .ok_or_else(|| BackendError::ReplayMiss {
                endpoint: endpoint.to_string(),
                hash,
            })?;
        serde_json::from_value(value.clone())
            .map_err(|e| BackendError::protocol(endpoint, format!("bad recorded response: {e}")))
    }
}

impl VqaBackend for Replay {
    fn vqa_answer(&self, req: &VqaAnswerRequest) -> Result<VqaAnswerResponse, BackendError> {
        req.validate()?;
        self.lookup(VQA_ANSWER_PATH, req)
    }

    fn attention_artifacts(
        &self,
        req: &AttentionArtifactRequest,
    ) -> Result<AttentionArtifacts, BackendError> {
        req.validate()?;
        let wire: WireAttentionResponse = self.lookup(VQA_ATTENTION_PATH, req)?;
        wire.into_artifacts()
    }
}

impl LlmBackend for Replay {
    fn llm_generate(&self, req: &LlmGenerateRequest) -> Result<LlmGenerateResponse, BackendError> {
        req.validate()?;
        self.lookup(LLM_GENERATE_PATH, req)
    }
}
