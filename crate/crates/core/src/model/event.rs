use serde::{Deserialize, Serialize};

use super::{BotId, ChatMessage, MeasureDelta, PhaseTrigger, Roster, SessionId, SessionPhase, TurnPattern};
use crate::analysis::LikertItem;

/// Version written into every log record; replay refuses any other value.
pub const EVENT_SCHEMA_VERSION: u32 = 1;

/// Per-session limits fixed at creation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSettings {
    /// Chat turns (excluding the introduction) before the chat closes.
    pub max_turns: u32,
    pub chat_seconds: u32,
}

impl Default for SessionSettings {
    fn default() -> Self {
        Self {
            max_turns: 10,
            chat_seconds: 600,
        }
    }
}

/// Why a bot response was left out of the transcript.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuppressionReason {
    Blank,
    TimedOut,
    Failed,
}

/// Causes of a `PhaseAdvanced` record. Other phase changes are implied by
/// the event that triggers them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvanceCause {
    MaxTurnsReached,
    ParticipantNext,
    Abort,
}

impl AdvanceCause {
    pub fn trigger(self) -> PhaseTrigger {
        match self {
            AdvanceCause::MaxTurnsReached => PhaseTrigger::MaxTurnsReached,
            AdvanceCause::ParticipantNext => PhaseTrigger::ParticipantNext,
            AdvanceCause::Abort => PhaseTrigger::Abort,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventPayload {
    SessionCreated {
        roster: Roster,
        settings: SessionSettings,
        survey_items: Vec<LikertItem>,
    },
    PhaseAdvanced {
        from: SessionPhase,
        to: SessionPhase,
        cause: AdvanceCause,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        detail: Option<String>,
    },
    UserMessagePosted {
        message: ChatMessage,
    },
    BotResponseRecorded {
        message: ChatMessage,
        latency_ms: u64,
        word_limit_violated: bool,
    },
    BotResponseSuppressed {
        bot_id: BotId,
        turn_index: u32,
        reason: SuppressionReason,
        raw_text: String,
        latency_ms: u64,
    },
    TurnCommitted {
        turn_index: u32,
        pattern: TurnPattern,
    },
    SurveySubmitted {
        delta: MeasureDelta,
    },
    TimerExpired {
        deadline_ms: i64,
    },
    BackendError {
        bot_id: BotId,
        turn_index: u32,
        detail: String,
    },
}

impl EventPayload {
    /// Record `kind` names, as written to the log.
    pub const KINDS: [&'static str; 9] = [
        "session_created",
        "phase_advanced",
        "user_message_posted",
        "bot_response_recorded",
        "bot_response_suppressed",
        "turn_committed",
        "survey_submitted",
        "timer_expired",
        "backend_error",
    ];

    pub fn kind(&self) -> &'static str {
        match self {
            EventPayload::SessionCreated { .. } => Self::KINDS[0],
            EventPayload::PhaseAdvanced { .. } => Self::KINDS[1],
            EventPayload::UserMessagePosted { .. } => Self::KINDS[2],
            EventPayload::BotResponseRecorded { .. } => Self::KINDS[3],
            EventPayload::BotResponseSuppressed { .. } => Self::KINDS[4],
            EventPayload::TurnCommitted { .. } => Self::KINDS[5],
            EventPayload::SurveySubmitted { .. } => Self::KINDS[6],
            EventPayload::TimerExpired { .. } => Self::KINDS[7],
            EventPayload::BackendError { .. } => Self::KINDS[8],
        }
    }

    /// The state-machine input this event represents.
    pub fn trigger(&self) -> PhaseTrigger {
        match self {
            EventPayload::SessionCreated { .. } => PhaseTrigger::SessionCreated,
            EventPayload::PhaseAdvanced { cause, .. } => cause.trigger(),
            EventPayload::UserMessagePosted { .. } => PhaseTrigger::UserMessagePosted,
            EventPayload::BotResponseRecorded { .. } => PhaseTrigger::BotResponseRecorded,
            EventPayload::BotResponseSuppressed { .. } => PhaseTrigger::BotResponseSuppressed,
            EventPayload::TurnCommitted { pattern, .. } => match pattern {
                TurnPattern::Intro => PhaseTrigger::IntroCommitted,
                _ => PhaseTrigger::TurnCommitted,
            },
            EventPayload::SurveySubmitted { delta } => delta.trigger(),
            EventPayload::TimerExpired { .. } => PhaseTrigger::TimerExpired,
            EventPayload::BackendError { .. } => PhaseTrigger::BackendError,
        }
    }
}

/// One append-only log record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub schema: u32,
    pub sequence_no: u64,
    pub session_id: SessionId,
    pub timestamp_ms: i64,
    #[serde(flatten)]
    pub payload: EventPayload,
}

impl SessionEvent {
    pub fn new(sequence_no: u64, session_id: SessionId, timestamp_ms: i64, payload: EventPayload) -> Self {
        Self {
            schema: EVENT_SCHEMA_VERSION,
            sequence_no,
            session_id,
            timestamp_ms,
            payload,
        }
    }
}
