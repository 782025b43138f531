//! Client for OpenAI-compatible `/chat/completions` services.

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Semaphore;
use tokio::time::Instant;

use super::{BackendError, CompletionBackend, CompletionRequest, CompletionResult, FinishReason, TokenUsage};
use crate::prompt::{AttributedTranscript, EntryRole, TranscriptEntry};

/// Environment variable holding the bearer credential.
pub const API_KEY_ENV: &str = "CHAT_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpBackendConfig {
    /// Base URL up to and including the version segment, e.g. `https://api.openai.com/v1`.
    pub api_base_url: String,
    /// Total budget per completion, retry included.
    pub timeout: Duration,
    /// Concurrent requests allowed against the upstream host.
    pub max_in_flight: usize,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        Self {
            api_base_url: "https://api.openai.com/v1".to_owned(),
            timeout: Duration::from_secs(30),
            max_in_flight: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiMessage {
    pub role: String,
    pub content: String,
}

/// System prompt first; the bot's own lines as `assistant`, everyone else
/// as `user` prefixed with `"<Speaker>: "`.
pub fn encode_messages(system_prompt: &str, transcript: &AttributedTranscript) -> Vec<ApiMessage> {
    let mut messages = vec![ApiMessage {
        role: "system".into(),
        content: system_prompt.to_owned(),
    }];
    messages.extend(transcript.entries.iter().map(|e| match e.role {
        EntryRole::OwnMessage => ApiMessage {
            role: "assistant".into(),
            content: e.text.clone(),
        },
        EntryRole::Human | EntryRole::OtherBot => ApiMessage {
            role: "user".into(),
            content: format!("{}: {}", e.speaker_label, e.text),
        },
    }));
    messages
}

/// Inverse of [`encode_messages`] given the labels used when encoding.
pub fn decode_messages(messages: &[ApiMessage], own_label: &str, human_label: &str) -> AttributedTranscript {
    let entries = messages
        .iter()
        .filter(|m| m.role != "system")
        .map(|m| {
            if m.role == "assistant" {
                return TranscriptEntry {
                    speaker_label: own_label.to_owned(),
                    role: EntryRole::OwnMessage,
                    text: m.content.clone(),
                };
            }
            let (label, text) = m.content.split_once(": ").unwrap_or((human_label, m.content.as_str()));
            TranscriptEntry {
                speaker_label: label.to_owned(),
                role: if label == human_label { EntryRole::Human } else { EntryRole::OtherBot },
                text: text.to_owned(),
            }
        })
        .collect();
    AttributedTranscript { entries }
}

enum Attempt {
    Done(Result<CompletionResult, BackendError>),
    Transient(BackendError),
}

pub struct HttpBackend {
    client: reqwest::Client,
    config: HttpBackendConfig,
    api_key: String,
    permits: Arc<Semaphore>,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend").field("config", &self.config).finish_non_exhaustive()
    }
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig, api_key: impl Into<String>) -> Self {
        let permits = Arc::new(Semaphore::new(config.max_in_flight.max(1)));
        Self {
            client: reqwest::Client::new(),
            config,
            api_key: api_key.into(),
            permits,
        }
    }

    /// Reads the credential from `CHAT_API_KEY`.
    pub fn from_env(config: HttpBackendConfig) -> Result<Self, BackendError> {
        match std::env::var(API_KEY_ENV) {
            Ok(key) if !key.trim().is_empty() => Ok(Self::new(config, key)),
            _ => Err(BackendError::AuthFailure(format!("{API_KEY_ENV} is not set"))),
        }
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.api_base_url.trim_end_matches('/'))
    }

    async fn attempt(&self, body: &Value) -> Attempt {
        let response = match self
            .client
            .post(self.endpoint())
            .bearer_auth(&self.api_key)
            .json(body)
            .send()
            .await
        {
            Ok(r) => r,
            Err(e) => return Attempt::Transient(BackendError::Transport(e.to_string())),
        };
        let status = response.status();
        if status.is_success() {
            return Attempt::Done(match response.text().await {
                Ok(text) => parse_completion(&text),
                Err(e) => Err(BackendError::Transport(e.to_string())),
            });
        }
        let retry_after = response
            .headers()
            .get(reqwest::header::RETRY_AFTER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let body = response.text().await.unwrap_or_default();
        let error = match status.as_u16() {
            401 | 403 => BackendError::AuthFailure(body),
            429 => BackendError::RateLimited { retry_after },
            code => BackendError::Status { status: code, body },
        };
        if status.is_server_error() {
            Attempt::Transient(error)
        } else {
            Attempt::Done(Err(error))
        }
    }

    async fn send(&self, body: &Value) -> Result<CompletionResult, BackendError> {
        let _permit = self.permits.acquire().await.expect("semaphore never closed");
        match self.attempt(body).await {
            Attempt::Done(result) => result,
            Attempt::Transient(_) => match self.attempt(body).await {
                Attempt::Done(result) => result,
                Attempt::Transient(err) => Err(err),
            },
        }
    }
}

fn parse_completion(text: &str) -> Result<CompletionResult, BackendError> {
    let malformed = |detail: &str| BackendError::MalformedResponse(detail.to_owned());
    let value: Value = serde_json::from_str(text).map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
    let choice = value
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| malformed("no choices"))?;
    let content = match choice.get("message").and_then(|m| m.get("content")) {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Null) | None => String::new(),
        Some(_) => return Err(malformed("message content is not text")),
    };
    let finish_reason = match choice.get("finish_reason").and_then(Value::as_str) {
        Some("stop") | None => FinishReason::Stop,
        Some("length") => FinishReason::Length,
        Some(_) => FinishReason::Error,
    };
    let token_usage = value.get("usage").and_then(|u| {
        Some(TokenUsage {
            prompt_tokens: u.get("prompt_tokens")?.as_u64()? as u32,
            completion_tokens: u.get("completion_tokens")?.as_u64()? as u32,
        })
    });
    Ok(CompletionResult {
        text: if finish_reason == FinishReason::Error { String::new() } else { content },
        finish_reason,
        latency: Duration::ZERO,
        token_usage,
    })
}

#[async_trait]
impl CompletionBackend for HttpBackend {
    async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        request.validate()?;
        let body = json!({
            "model": request.model_id,
            "messages": encode_messages(&request.system_prompt, &request.transcript),
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        let started = Instant::now();
        let budget = self.config.timeout;
        match tokio::time::timeout(budget, self.send(&body)).await {
            Err(_) => Err(BackendError::Timeout(budget)),
            Ok(result) => result.map(|mut r| {
                r.latency = started.elapsed();
                r
            }),
        }
    }
}
