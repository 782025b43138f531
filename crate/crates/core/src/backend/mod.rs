//! Completion backends: an OpenAI-compatible HTTP client and a scripted,
//! deterministic stand-in.

mod http;
mod scripted;

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::BotId;
use crate::prompt::AttributedTranscript;

pub use http::{decode_messages, encode_messages, ApiMessage, HttpBackend, HttpBackendConfig, API_KEY_ENV};
pub use scripted::{load_script, parse_script, Script, ScriptError, ScriptRule, ScriptResponse, ScriptTrigger, ScriptedBackend};

pub const DEFAULT_MODEL_ID: &str = "gpt-4-0613";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    /// Persona the request is made for; scripted backends pick the script by it.
    pub bot_id: BotId,
    pub model_id: String,
    pub system_prompt: String,
    pub transcript: AttributedTranscript,
    pub temperature: f32,
    pub max_output_tokens: u32,
    pub request_id: String,
}

impl CompletionRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.model_id.trim().is_empty() {
            return Err(BackendError::InvalidRequest("model_id is empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    /// Empty when `finish_reason` is `Error`.
    pub text: String,
    pub finish_reason: FinishReason,
    pub latency: Duration,
    pub token_usage: Option<TokenUsage>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("timed out after {0:?}")]
    Timeout(Duration),
    #[error("authentication failed: {0}")]
    AuthFailure(String),
    #[error("rate limited (retry after {retry_after:?})")]
    RateLimited { retry_after: Option<Duration> },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("upstream returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no script for persona `{0}`")]
    UnknownPersona(BotId),
}

#[async_trait]
pub trait CompletionBackend: Send + Sync {
    async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, BackendError>;
}

#[async_trait]
impl<B: CompletionBackend + ?Sized> CompletionBackend for Arc<B> {
    async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        (**self).complete(request).await
    }
}

type DelayFn = dyn Fn(&CompletionRequest) -> Duration + Send + Sync;

/// Wraps a backend and sleeps before each completion (tokio time, so a
/// paused test clock makes the delays free).
pub struct DelayedBackend<B> {
    inner: B,
    delay: Box<DelayFn>,
}

impl<B> DelayedBackend<B> {
    pub fn new(inner: B, delay: impl Fn(&CompletionRequest) -> Duration + Send + Sync + 'static) -> Self {
        Self {
            inner,
            delay: Box::new(delay),
        }
    }
}

#[async_trait]
impl<B: CompletionBackend> CompletionBackend for DelayedBackend<B> {
    async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        tokio::time::sleep((self.delay)(request)).await;
        self.inner.complete(request).await
    }
}
