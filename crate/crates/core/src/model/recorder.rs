use std::sync::Arc;

use thiserror::Error;

use super::{ApplyError, EventPayload, Session, SessionEvent, SessionId, SessionSettings, Roster};
use crate::analysis::LikertItem;
use crate::clock::Clock;
use crate::persistence::{EventSink, LogError};

#[derive(Debug, Error)]
pub enum RecordError {
    #[error(transparent)]
    Apply(#[from] ApplyError),
    #[error(transparent)]
    Storage(#[from] LogError),
}

/// The single writer of one session: stamps events, validates them against
/// the current state, persists them and only then applies them.
pub struct SessionRecorder {
    session: Session,
    events: Vec<SessionEvent>,
    sink: Box<dyn EventSink>,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for SessionRecorder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionRecorder")
            .field("session_id", &self.session.session_id)
            .field("phase", &self.session.phase)
            .field("events", &self.events.len())
            .finish()
    }
}

impl SessionRecorder {
    pub fn create(
        session_id: SessionId,
        roster: Roster,
        settings: SessionSettings,
        survey_items: Vec<LikertItem>,
        clock: Arc<dyn Clock>,
        mut sink: Box<dyn EventSink>,
    ) -> Result<Self, RecordError> {
        let event = SessionEvent::new(
            1,
            session_id,
            clock.now_ms(),
            EventPayload::SessionCreated {
                roster,
                settings,
                survey_items,
            },
        );
        let session = Session::create(&event)?;
        sink.append(&event)?;
        Ok(Self {
            session,
            events: vec![event],
            sink,
            clock,
        })
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn record(&mut self, payload: EventPayload) -> Result<&SessionEvent, RecordError> {
        let event = SessionEvent::new(
            self.session.last_sequence_no() + 1,
            self.session.session_id.clone(),
            self.clock.now_ms(),
            payload,
        );
        self.session.validate(&event)?;
        self.sink.append(&event)?;
        self.session.apply(&event)?;
        self.events.push(event);
        Ok(self.events.last().expect("just pushed"))
    }

    /// Records events in order, stopping at the first failure.
    pub fn record_all(&mut self, payloads: impl IntoIterator<Item = EventPayload>) -> Result<(), RecordError> {
        for payload in payloads {
            self.record(payload)?;
        }
        Ok(())
    }
}
