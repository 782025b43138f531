use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    derive_pattern, transition, ChatMessage, EventPayload, IllegalTransition, MeasureSet, Roster, SessionEvent,
    SessionId, SessionPhase, SessionSettings, Speaker, Turn, TurnPattern,
};
use crate::analysis::LikertItem;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ApplyError {
    #[error("event for session `{found}` applied to session `{expected}`")]
    SessionMismatch { expected: SessionId, found: SessionId },
    #[error("expected sequence number {expected}, found {found}")]
    SequenceGap { expected: u64, found: u64 },
    #[error("the first event of a session must be session_created")]
    NotCreated,
    #[error("session already created")]
    AlreadyCreated,
    #[error(transparent)]
    IllegalTransition(#[from] IllegalTransition),
    #[error("inconsistent event: {0}")]
    Inconsistent(String),
}

fn inconsistent<T>(detail: impl Into<String>) -> Result<T, ApplyError> {
    Err(ApplyError::Inconsistent(detail.into()))
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReplayError {
    #[error("no events for session")]
    NoSuchSession,
    #[error("event {sequence_no}: {source}")]
    Apply { sequence_no: u64, source: ApplyError },
}

/// Messages of the turn currently being assembled (user message posted or
/// intro responses recorded, but no `turn_committed` yet).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingTurn {
    pub turn_index: u32,
    pub user_message: Option<ChatMessage>,
    pub bot_messages: Vec<ChatMessage>,
}

/// One participant's run, rebuilt purely from its events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: SessionId,
    pub roster: Roster,
    pub settings: SessionSettings,
    pub survey_items: Vec<LikertItem>,
    pub phase: SessionPhase,
    pub turns: Vec<Turn>,
    pub timer_deadline_ms: Option<i64>,
    pub measures: MeasureSet,
    pending: Option<PendingTurn>,
    next_message_id: u64,
    last_sequence_no: u64,
}

impl Session {
    /// Builds a session from its `session_created` record.
    pub fn create(event: &SessionEvent) -> Result<Self, ApplyError> {
        let EventPayload::SessionCreated {
            roster,
            settings,
            survey_items,
        } = &event.payload
        else {
            return Err(ApplyError::NotCreated);
        };
        if event.sequence_no != 1 {
            return Err(ApplyError::SequenceGap {
                expected: 1,
                found: event.sequence_no,
            });
        }
        Ok(Self {
            session_id: event.session_id.clone(),
            roster: roster.clone(),
            settings: *settings,
            survey_items: survey_items.clone(),
            phase: transition(SessionPhase::Created, event.payload.trigger())?,
            turns: Vec::new(),
            timer_deadline_ms: None,
            measures: MeasureSet::default(),
            pending: None,
            next_message_id: 1,
            last_sequence_no: 1,
        })
    }

    pub fn replay(events: &[SessionEvent]) -> Result<Self, ReplayError> {
        let (first, rest) = events.split_first().ok_or(ReplayError::NoSuchSession)?;
        let mut session = Session::create(first).map_err(|source| ReplayError::Apply {
            sequence_no: first.sequence_no,
            source,
        })?;
        for event in rest {
            session.apply(event).map_err(|source| ReplayError::Apply {
                sequence_no: event.sequence_no,
                source,
            })?;
        }
        Ok(session)
    }

    pub fn max_turns(&self) -> u32 {
        self.settings.max_turns
    }

    pub fn chat_seconds(&self) -> u32 {
        self.settings.chat_seconds
    }

    pub fn pending_turn(&self) -> Option<&PendingTurn> {
        self.pending.as_ref()
    }

    pub fn next_message_id(&self) -> u64 {
        self.next_message_id
    }

    pub fn last_sequence_no(&self) -> u64 {
        self.last_sequence_no
    }

    /// Committed turns other than the introduction.
    pub fn chat_turn_count(&self) -> usize {
        self.turns.iter().filter(|t| t.pattern != TurnPattern::Intro).count()
    }

    /// Index the next turn will receive.
    pub fn next_turn_index(&self) -> u32 {
        self.turns.len() as u32
    }

    pub fn apply(&mut self, event: &SessionEvent) -> Result<(), ApplyError> {
        self.validate(event)?;
        self.apply_validated(event);
        Ok(())
    }

    /// Checks `event` against the current state without changing anything.
    pub fn validate(&self, event: &SessionEvent) -> Result<(), ApplyError> {
        if event.session_id != self.session_id {
            return Err(ApplyError::SessionMismatch {
                expected: self.session_id.clone(),
                found: event.session_id.clone(),
            });
        }
        if event.sequence_no != self.last_sequence_no + 1 {
            return Err(ApplyError::SequenceGap {
                expected: self.last_sequence_no + 1,
                found: event.sequence_no,
            });
        }
        if matches!(event.payload, EventPayload::SessionCreated { .. }) {
            return Err(ApplyError::AlreadyCreated);
        }
        let next_phase = transition(self.phase, event.payload.trigger())?;
        let turn_index = self.next_turn_index();

        match &event.payload {
            EventPayload::SessionCreated { .. } => unreachable!("rejected above"),
            EventPayload::PhaseAdvanced { from, to, .. } => {
                if *from != self.phase || *to != next_phase {
                    return inconsistent(format!("phase_advanced {from}->{to} from phase {}", self.phase));
                }
                if self.pending.is_some() {
                    return inconsistent("phase advanced during an uncommitted turn");
                }
            }
            EventPayload::UserMessagePosted { message } => {
                if self.pending.is_some() {
                    return inconsistent("user message posted while a turn is pending");
                }
                if message.speaker != Speaker::Human {
                    return inconsistent("user_message_posted from a bot speaker");
                }
                self.check_message(message, turn_index)?;
            }
            EventPayload::BotResponseRecorded { message, .. } => {
                let Some(bot_id) = message.speaker.bot_id() else {
                    return inconsistent("bot_response_recorded from the human speaker");
                };
                let Some(rank) = self.roster.rank_of(bot_id) else {
                    return inconsistent(format!("unknown bot `{bot_id}`"));
                };
                self.check_message(message, turn_index)?;
                match (&self.pending, self.phase) {
                    (None, SessionPhase::ChatActive) => {
                        return inconsistent("bot response without a user message");
                    }
                    (Some(pending), _) => {
                        let last_rank = pending
                            .bot_messages
                            .last()
                            .and_then(|m| m.speaker.bot_id())
                            .and_then(|id| self.roster.rank_of(id));
                        if last_rank.is_some_and(|last| last >= rank) {
                            return inconsistent("bot responses must be recorded once each, in display rank order");
                        }
                    }
                    (None, _) => {}
                }
            }
            EventPayload::BotResponseSuppressed {
                bot_id,
                turn_index: idx,
                ..
            }
            | EventPayload::BackendError {
                bot_id,
                turn_index: idx,
                ..
            } => {
                if !self.roster.contains(bot_id) {
                    return inconsistent(format!("unknown bot `{bot_id}`"));
                }
                if *idx != turn_index {
                    return inconsistent(format!("turn index {idx}, expected {turn_index}"));
                }
            }
            EventPayload::TurnCommitted {
                turn_index: idx,
                pattern,
            } => {
                if *idx != turn_index {
                    return inconsistent(format!("turn index {idx}, expected {turn_index}"));
                }
                if *pattern == TurnPattern::Intro {
                    if self.pending.as_ref().is_none_or(|p| p.bot_messages.is_empty()) {
                        return inconsistent("introduction turn without bot messages");
                    }
                } else {
                    let Some(pending) = self.pending.as_ref().filter(|p| p.user_message.is_some()) else {
                        return inconsistent("turn committed without a user message");
                    };
                    let derived = derive_pattern(&pending.bot_messages, &self.roster)
                        .map_err(|e| ApplyError::Inconsistent(e.to_string()))?;
                    if &derived != pattern {
                        return inconsistent(format!("pattern {pattern:?} but responses give {derived:?}"));
                    }
                }
            }
            EventPayload::TimerExpired { .. } => {
                if self.pending.is_some() {
                    return inconsistent("timer expired during an uncommitted turn");
                }
            }
            EventPayload::SurveySubmitted { .. } => {}
        }
        Ok(())
    }

    fn check_message(&self, message: &ChatMessage, turn_index: u32) -> Result<(), ApplyError> {
        if message.message_id != self.next_message_id {
            return inconsistent(format!(
                "message id {}, expected {}",
                message.message_id, self.next_message_id
            ));
        }
        if message.turn_index != turn_index {
            return inconsistent(format!("message turn {}, expected {turn_index}", message.turn_index));
        }
        if message.text.trim().is_empty() {
            return inconsistent("blank chat message");
        }
        Ok(())
    }

    fn apply_validated(&mut self, event: &SessionEvent) {
        let previous = self.phase;
        self.phase = transition(self.phase, event.payload.trigger()).expect("validated transition");
        self.last_sequence_no = event.sequence_no;
        let turn_index = self.next_turn_index();

        match &event.payload {
            EventPayload::UserMessagePosted { message } => {
                self.next_message_id += 1;
                self.pending = Some(PendingTurn {
                    turn_index,
                    user_message: Some(message.clone()),
                    bot_messages: Vec::new(),
                });
            }
            EventPayload::BotResponseRecorded { message, .. } => {
                self.next_message_id += 1;
                self.pending
                    .get_or_insert_with(|| PendingTurn {
                        turn_index,
                        user_message: None,
                        bot_messages: Vec::new(),
                    })
                    .bot_messages
                    .push(message.clone());
            }
            EventPayload::TurnCommitted { pattern, .. } => {
                let pending = self.pending.take().expect("validated pending turn");
                self.turns.push(Turn {
                    turn_index,
                    user_message: pending.user_message,
                    bot_messages: pending.bot_messages,
                    pattern: pattern.clone(),
                });
            }
            EventPayload::SurveySubmitted { delta } => delta.apply_to(&mut self.measures),
            _ => {}
        }

        if previous != SessionPhase::ChatActive && self.phase == SessionPhase::ChatActive {
            self.timer_deadline_ms = Some(event.timestamp_ms + i64::from(self.settings.chat_seconds) * 1000);
        }
    }
}
