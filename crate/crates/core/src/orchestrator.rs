//! Turn orchestration: fan a user message out to every persona, gate and
//! trim the answers, and commit the turn through a [`SessionRecorder`].

use std::sync::Arc;
use std::time::Duration;

use futures::stream::{FuturesUnordered, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, CompletionBackend, CompletionRequest, DEFAULT_MODEL_ID};
use crate::clock::Clock;
use crate::model::{
    derive_pattern, AdvanceCause, BotId, BotPersona, ChatMessage, EventPayload, RecordError, SessionPhase,
    SessionRecorder, Speaker, SuppressionReason, Turn, TurnPattern,
};
use crate::prompt::{build_system_prompt, build_transcript, AttributedTranscript, PersonaNotInRoster, PromptPolicy};

/// Decides whether a completion counts as "no response".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlankGate {
    sentinels: Vec<String>,
}

impl Default for BlankGate {
    fn default() -> Self {
        Self::new(["null", "blank", "n/a", "(blank)"])
    }
}

impl BlankGate {
    pub fn new<S: Into<String>>(sentinels: impl IntoIterator<Item = S>) -> Self {
        Self {
            sentinels: sentinels
                .into_iter()
                .map(|s| s.into().trim().to_lowercase())
                .filter(|s| !s.is_empty())
                .collect(),
        }
    }

    pub fn sentinels(&self) -> &[String] {
        &self.sentinels
    }

    /// True for empty text, text of only punctuation and whitespace, and
    /// sentinels compared case-insensitively (with or without surrounding
    /// punctuation, so `"Null."` is blank too).
    pub fn is_blank(&self, text: &str) -> bool {
        let trimmed = text.trim();
        if trimmed.chars().all(|c| c.is_whitespace() || is_punctuation(c)) {
            return true;
        }
        let lower = trimmed.to_lowercase();
        let bare = lower.trim_matches(|c: char| c.is_whitespace() || is_punctuation(c));
        self.sentinels.iter().any(|s| *s == lower || *s == bare)
    }
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2010}'..='\u{2027}' | '\u{2030}'..='\u{205E}' | '\u{3000}'..='\u{303F}' | '\u{00A1}' | '\u{00BF}' | '\u{00AB}' | '\u{00BB}'
        )
}

/// [`BlankGate::is_blank`] with the default sentinels.
pub fn is_blank(text: &str) -> bool {
    BlankGate::default().is_blank(text)
}

/// Whitespace-separated tokens.
pub fn count_words(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WordLimitMode {
    /// Keep the text, flag the violation.
    #[default]
    Warn,
    Truncate,
    /// Ask once more; truncate if the second answer is still too long.
    RetryOnce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WordLimitPolicy {
    pub limit: u32,
    pub mode: WordLimitMode,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Enforced {
    pub text: String,
    pub violated: bool,
}

/// Applies the policy to non-blank text. `RetryOnce` behaves like
/// `Truncate` here; the re-ask happens in the orchestrator.
pub fn enforce_word_limit(text: &str, policy: WordLimitPolicy) -> Enforced {
    let limit = policy.limit as usize;
    let violated = count_words(text) > limit;
    let text = match policy.mode {
        WordLimitMode::Truncate | WordLimitMode::RetryOnce if violated => {
            text.split_whitespace().take(limit).collect::<Vec<_>>().join(" ")
        }
        _ => text.to_owned(),
    };
    Enforced { text, violated }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeStatus {
    Responded,
    Blank,
    TimedOut,
    Failed(String),
}

impl OutcomeStatus {
    fn is_failure(&self) -> bool {
        matches!(self, OutcomeStatus::TimedOut | OutcomeStatus::Failed(_))
    }
}

/// What one persona did with one request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BotOutcome {
    pub bot_id: BotId,
    /// Text exactly as the backend returned it (empty on failure).
    pub raw_text: String,
    pub status: OutcomeStatus,
    pub latency: Duration,
    /// Text to display, present only when `status` is `Responded`.
    pub text: Option<String>,
    pub word_limit_violated: bool,
}

#[derive(Debug, Clone)]
pub struct OrchestratorConfig {
    pub model_id: String,
    pub temperature: f32,
    pub max_output_tokens: u32,
    /// Per-persona budget; a slower persona is treated as silent.
    pub request_timeout: Duration,
    pub word_limit_mode: WordLimitMode,
    pub blank_gate: BlankGate,
    pub prompt_policy: PromptPolicy,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self {
            model_id: DEFAULT_MODEL_ID.to_owned(),
            temperature: 1.0,
            max_output_tokens: 256,
            request_timeout: Duration::from_secs(30),
            word_limit_mode: WordLimitMode::Warn,
            blank_gate: BlankGate::default(),
            prompt_policy: PromptPolicy::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum TurnError {
    #[error("cannot run a turn in phase {0}")]
    WrongPhase(SessionPhase),
    #[error("user message is empty")]
    EmptyMessage,
    #[error("every backend failed: {}", .0.iter().map(|(b, e)| format!("{b}: {e}")).collect::<Vec<_>>().join("; "))]
    AllBackendsFailed(Vec<(BotId, String)>),
    #[error(transparent)]
    Prompt(#[from] PersonaNotInRoster),
    #[error(transparent)]
    Record(#[from] RecordError),
}

/// A committed turn together with the per-persona outcomes behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnReport {
    pub turn: Turn,
    pub outcomes: Vec<BotOutcome>,
    /// The turn used up the last allowed chat turn and the chat closed.
    pub chat_closed: bool,
}

pub struct Orchestrator {
    backend: Arc<dyn CompletionBackend>,
    config: OrchestratorConfig,
}

impl std::fmt::Debug for Orchestrator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Orchestrator").field("config", &self.config).finish_non_exhaustive()
    }
}

struct Prepared {
    persona: BotPersona,
    request: CompletionRequest,
}

impl Orchestrator {
    pub fn new(backend: Arc<dyn CompletionBackend>, config: OrchestratorConfig) -> Self {
        Self { backend, config }
    }

    pub fn config(&self) -> &OrchestratorConfig {
        &self.config
    }

    fn prepare(
        &self,
        recorder: &SessionRecorder,
        user_text: Option<&str>,
    ) -> Result<Vec<Prepared>, PersonaNotInRoster> {
        let session = recorder.session();
        let turn_index = session.next_turn_index();
        session
            .roster
            .personas()
            .iter()
            .map(|persona| {
                let system_prompt = build_system_prompt(persona, &session.roster, &self.config.prompt_policy)?;
                let mut transcript: AttributedTranscript = build_transcript(session, &persona.bot_id);
                if let Some(text) = user_text {
                    transcript.push_human(&session.roster, text);
                }
                Ok(Prepared {
                    persona: persona.clone(),
                    request: CompletionRequest {
                        bot_id: persona.bot_id.clone(),
                        model_id: self.config.model_id.clone(),
                        system_prompt,
                        transcript,
                        temperature: self.config.temperature,
                        max_output_tokens: self.config.max_output_tokens,
                        request_id: format!("{}-t{turn_index}-{}", session.session_id, persona.bot_id),
                    },
                })
            })
            .collect()
    }

    async fn ask(&self, request: &CompletionRequest) -> Result<String, OutcomeStatus> {
        match tokio::time::timeout(self.config.request_timeout, self.backend.complete(request)).await {
            Err(_) | Ok(Err(BackendError::Timeout(_))) => Err(OutcomeStatus::TimedOut),
            Ok(Err(e)) => Err(OutcomeStatus::Failed(e.to_string())),
            Ok(Ok(result)) => Ok(result.text),
        }
    }

    /// One persona's full pipeline: request, gate, word limit (with re-ask).
    async fn outcome(&self, prepared: &Prepared, clock: &Arc<dyn Clock>) -> BotOutcome {
        let started = clock.now_ms();
        let latency = |clock: &Arc<dyn Clock>| Duration::from_millis((clock.now_ms() - started).max(0) as u64);
        let bot_id = prepared.persona.bot_id.clone();
        let raw_text = match self.ask(&prepared.request).await {
            Ok(text) => text,
            Err(status) => {
                return BotOutcome {
                    bot_id,
                    raw_text: String::new(),
                    status,
                    latency: latency(clock),
                    text: None,
                    word_limit_violated: false,
                };
            }
        };
        if self.config.blank_gate.is_blank(&raw_text) {
            return BotOutcome {
                bot_id,
                raw_text,
                status: OutcomeStatus::Blank,
                latency: latency(clock),
                text: None,
                word_limit_violated: false,
            };
        }
        let policy = WordLimitPolicy {
            limit: prepared.persona.word_limit,
            mode: self.config.word_limit_mode,
        };
        let mut enforced = enforce_word_limit(&raw_text, policy);
        if enforced.violated && policy.mode == WordLimitMode::RetryOnce {
            if let Ok(second) = self.ask(&prepared.request).await {
                if !self.config.blank_gate.is_blank(&second) {
                    let retried = enforce_word_limit(&second, policy);
                    enforced.text = retried.text;
                }
            }
        }
        BotOutcome {
            bot_id,
            raw_text,
            status: OutcomeStatus::Responded,
            latency: latency(clock),
            text: Some(enforced.text),
            word_limit_violated: enforced.violated,
        }
    }

    /// Runs every persona concurrently and returns outcomes in display rank.
    async fn fan_out(&self, prepared: &[Prepared], clock: &Arc<dyn Clock>) -> Vec<BotOutcome> {
        let mut pending: FuturesUnordered<_> = prepared
            .iter()
            .map(|p| async move { (p.persona.display_rank, self.outcome(p, clock).await) })
            .collect();
        let mut outcomes = Vec::with_capacity(prepared.len());
        while let Some(done) = pending.next().await {
            outcomes.push(done);
        }
        outcomes.sort_by_key(|(rank, _)| *rank);
        outcomes.into_iter().map(|(_, o)| o).collect()
    }

    /// Produces and commits the introduction turn. A blank or failed
    /// introduction is asked once more, then replaced by the persona's
    /// fallback text.
    pub async fn run_intro(&self, recorder: &mut SessionRecorder) -> Result<TurnReport, TurnError> {
        let phase = recorder.session().phase;
        if phase != SessionPhase::ChatIntro || recorder.session().pending_turn().is_some() {
            return Err(TurnError::WrongPhase(phase));
        }
        let prepared = self.prepare(recorder, None)?;
        let clock = recorder.clock().clone();
        let first = self.fan_out(&prepared, &clock).await;

        let retry: Vec<Prepared> = prepared
            .into_iter()
            .zip(&first)
            .filter(|(_, o)| o.status != OutcomeStatus::Responded)
            .map(|(p, _)| p)
            .collect();
        let second = self.fan_out(&retry, &clock).await;

        let turn_index = recorder.session().next_turn_index();
        let mut outcomes = Vec::with_capacity(first.len());
        for outcome in first {
            let outcome = match outcome.status {
                OutcomeStatus::Responded => outcome,
                _ => {
                    let again = second
                        .iter()
                        .find(|o| o.bot_id == outcome.bot_id)
                        .cloned()
                        .expect("every non-responding persona was retried");
                    for attempt in [&outcome, &again] {
                        record_failure(recorder, attempt, turn_index)?;
                    }
                    if again.status == OutcomeStatus::Responded {
                        again
                    } else {
                        let persona = recorder
                            .session()
                            .roster
                            .persona(&again.bot_id)
                            .expect("outcome for a roster persona");
                        BotOutcome {
                            text: Some(persona.fallback_intro_text()),
                            status: OutcomeStatus::Responded,
                            ..again
                        }
                    }
                }
            };
            record_response(recorder, &outcome, turn_index)?;
            outcomes.push(outcome);
        }
        recorder.record(EventPayload::TurnCommitted {
            turn_index,
            pattern: TurnPattern::Intro,
        })?;
        Ok(TurnReport {
            turn: recorder.session().turns.last().expect("turn committed").clone(),
            outcomes,
            chat_closed: false,
        })
    }

    /// Runs one chat turn for `user_text`. When every persona timed out or
    /// failed nothing but `backend_error` events is recorded, so the
    /// participant's message can be resent.
    pub async fn run_turn(&self, recorder: &mut SessionRecorder, user_text: &str) -> Result<TurnReport, TurnError> {
        let phase = recorder.session().phase;
        if phase != SessionPhase::ChatActive || recorder.session().pending_turn().is_some() {
            return Err(TurnError::WrongPhase(phase));
        }
        if user_text.trim().is_empty() {
            return Err(TurnError::EmptyMessage);
        }
        let prepared = self.prepare(recorder, Some(user_text))?;
        let clock = recorder.clock().clone();
        let outcomes = self.fan_out(&prepared, &clock).await;
        let turn_index = recorder.session().next_turn_index();

        if outcomes.iter().all(|o| o.status.is_failure()) {
            let mut failures = Vec::with_capacity(outcomes.len());
            for outcome in &outcomes {
                record_failure(recorder, outcome, turn_index)?;
                failures.push((outcome.bot_id.clone(), failure_detail(&outcome.status)));
            }
            return Err(TurnError::AllBackendsFailed(failures));
        }

        let message = ChatMessage::new(
            recorder.session().next_message_id(),
            Speaker::Human,
            user_text,
            turn_index,
            clock.now_ms(),
        )
        .map_err(|_| TurnError::EmptyMessage)?;
        recorder.record(EventPayload::UserMessagePosted { message })?;

        for outcome in &outcomes {
            match outcome.status {
                OutcomeStatus::Responded => record_response(recorder, outcome, turn_index)?,
                _ => {
                    recorder.record(EventPayload::BotResponseSuppressed {
                        bot_id: outcome.bot_id.clone(),
                        turn_index,
                        reason: match outcome.status {
                            OutcomeStatus::TimedOut => SuppressionReason::TimedOut,
                            OutcomeStatus::Failed(_) => SuppressionReason::Failed,
                            _ => SuppressionReason::Blank,
                        },
                        raw_text: outcome.raw_text.clone(),
                        latency_ms: outcome.latency.as_millis() as u64,
                    })?;
                    record_failure(recorder, outcome, turn_index)?;
                }
            }
        }

        let pending = recorder.session().pending_turn().expect("user message posted");
        let pattern = derive_pattern(&pending.bot_messages, &recorder.session().roster)
            .expect("responses come from roster personas");
        recorder.record(EventPayload::TurnCommitted { turn_index, pattern })?;
        let turn = recorder.session().turns.last().expect("turn committed").clone();

        let session = recorder.session();
        let chat_closed = session.chat_turn_count() >= session.max_turns() as usize;
        if chat_closed {
            recorder.record(EventPayload::PhaseAdvanced {
                from: SessionPhase::ChatActive,
                to: SessionPhase::DonationChoice,
                cause: AdvanceCause::MaxTurnsReached,
                detail: None,
            })?;
        }
        Ok(TurnReport {
            turn,
            outcomes,
            chat_closed,
        })
    }
}

fn failure_detail(status: &OutcomeStatus) -> String {
    match status {
        OutcomeStatus::TimedOut => "timed out".to_owned(),
        OutcomeStatus::Failed(reason) => reason.clone(),
        OutcomeStatus::Responded | OutcomeStatus::Blank => String::new(),
    }
}

/// Logs a `backend_error` for timed-out or failed outcomes; no-op otherwise.
fn record_failure(recorder: &mut SessionRecorder, outcome: &BotOutcome, turn_index: u32) -> Result<(), RecordError> {
    if outcome.status.is_failure() {
        recorder.record(EventPayload::BackendError {
            bot_id: outcome.bot_id.clone(),
            turn_index,
            detail: failure_detail(&outcome.status),
        })?;
    }
    Ok(())
}

fn record_response(recorder: &mut SessionRecorder, outcome: &BotOutcome, turn_index: u32) -> Result<(), TurnError> {
    let text = outcome.text.clone().unwrap_or_default();
    let message = ChatMessage::new(
        recorder.session().next_message_id(),
        Speaker::Bot(outcome.bot_id.clone()),
        text,
        turn_index,
        recorder.clock().now_ms(),
    )
    .map_err(|_| TurnError::EmptyMessage)?;
    recorder.record(EventPayload::BotResponseRecorded {
        message,
        latency_ms: outcome.latency.as_millis() as u64,
        word_limit_violated: outcome.word_limit_violated,
    })?;
    Ok(())
}
