//! Live sessions: creation, surveys, chat frames and the chat timer. All
//! work on one session runs under that session's lock, so frames and timer
//! ticks for a session never interleave.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use chatroom_core::analysis::{validate_submission, LikertItem, SurveyContext, SurveyError, SurveyKind};
use chatroom_core::backend::CompletionBackend;
use chatroom_core::model::{
    AdvanceCause, EventPayload, IllegalTransition, PhaseTrigger, RecordError, Roster, Session, SessionId,
    SessionPhase, SessionRecorder, SessionSettings,
};
use chatroom_core::orchestrator::TurnError;
use chatroom_core::persistence::{export_table, EventLog, EventSink, ExportFormat, LogError, NullSink};
use chatroom_core::{Clock, Orchestrator, OrchestratorConfig};
use thiserror::Error;
use tokio::sync::Mutex as AsyncMutex;
use tracing::{info, warn};

use crate::config::ExperimentConfig;
use crate::wire::{ClientFrame, FormDefinition, ServerFrame};

#[derive(Debug, Error)]
pub enum HubError {
    #[error("no such session `{0}`")]
    NotFound(SessionId),
    #[error("session capacity of {0} reached")]
    CapacityExceeded(usize),
    #[error("session `{0}` already has a chat connection")]
    AlreadyAttached(SessionId),
    #[error(transparent)]
    Survey(#[from] SurveyError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Storage(#[from] LogError),
    #[error(transparent)]
    Turn(#[from] TurnError),
}

/// Per-study values every session is created with.
#[derive(Debug, Clone)]
pub struct HubSettings {
    pub roster: Roster,
    pub settings: SessionSettings,
    pub survey_items: Vec<LikertItem>,
    pub instruction_text: String,
    /// Logs go to `<log_dir>/sessions/`; `None` keeps events in memory only.
    pub log_dir: Option<PathBuf>,
    pub fsync: bool,
    pub capacity: usize,
}

impl From<&ExperimentConfig> for HubSettings {
    fn from(c: &ExperimentConfig) -> Self {
        Self {
            roster: c.roster.clone(),
            settings: c.settings,
            survey_items: c.survey_items.clone(),
            instruction_text: c.instruction_text.clone(),
            log_dir: Some(c.log_dir.clone()),
            fsync: c.fsync,
            capacity: c.capacity,
        }
    }
}

type IdSource = dyn Fn() -> SessionId + Send + Sync;

/// Random (UUID v4) session ids.
pub fn random_ids() -> Box<IdSource> {
    Box::new(|| SessionId::new(uuid::Uuid::new_v4().to_string()))
}

/// `<prefix>-0001`, `<prefix>-0002`, ...
pub fn sequential_ids(prefix: &str) -> Box<IdSource> {
    let prefix = prefix.to_owned();
    let next = AtomicU64::new(1);
    Box::new(move || SessionId::new(format!("{prefix}-{:04}", next.fetch_add(1, Ordering::SeqCst))))
}

struct Slot {
    recorder: AsyncMutex<SessionRecorder>,
    attached: AtomicBool,
    finished: AtomicBool,
}

impl Slot {
    fn note_phase(&self, phase: SessionPhase) {
        self.finished.store(phase.is_terminal(), Ordering::SeqCst);
    }
}

/// Releases the session's chat connection slot when dropped.
pub struct Attachment {
    slot: Arc<Slot>,
}

impl Drop for Attachment {
    fn drop(&mut self) {
        self.slot.attached.store(false, Ordering::SeqCst);
    }
}

/// Result of creating a session.
#[derive(Debug, Clone, PartialEq)]
pub struct Created {
    pub session_id: SessionId,
    pub frame: ServerFrame,
}

pub struct SessionHub {
    settings: HubSettings,
    orchestrator: Orchestrator,
    clock: Arc<dyn Clock>,
    ids: Box<IdSource>,
    sessions: Mutex<HashMap<SessionId, Arc<Slot>>>,
}

impl std::fmt::Debug for SessionHub {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionHub")
            .field("settings", &self.settings)
            .field("sessions", &self.sessions.lock().map(|s| s.len()).unwrap_or_default())
            .finish_non_exhaustive()
    }
}

impl SessionHub {
    pub fn new(
        settings: HubSettings,
        backend: Arc<dyn CompletionBackend>,
        orchestrator: OrchestratorConfig,
        clock: Arc<dyn Clock>,
        ids: Box<IdSource>,
    ) -> Self {
        Self {
            settings,
            orchestrator: Orchestrator::new(backend, orchestrator),
            clock,
            ids,
            sessions: Mutex::new(HashMap::new()),
        }
    }

    pub fn settings(&self) -> &HubSettings {
        &self.settings
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    fn slot(&self, id: &SessionId) -> Result<Arc<Slot>, HubError> {
        self.sessions
            .lock()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| HubError::NotFound(id.clone()))
    }

    fn phase_frame(&self, session: &Session) -> ServerFrame {
        let chatting = matches!(session.phase, SessionPhase::ChatIntro | SessionPhase::ChatActive);
        ServerFrame::Phase {
            phase: session.phase,
            form: FormDefinition::for_phase(session.phase, &session.roster, &session.survey_items),
            instruction_text: chatting.then(|| self.settings.instruction_text.clone()),
        }
    }

    pub async fn create_session(&self) -> Result<Created, HubError> {
        let mut sessions = self.sessions.lock().expect("session map poisoned");
        let active = sessions.values().filter(|s| !s.finished.load(Ordering::SeqCst)).count();
        if active >= self.settings.capacity {
            return Err(HubError::CapacityExceeded(self.settings.capacity));
        }
        let mut id = (self.ids)();
        while sessions.contains_key(&id) {
            id = (self.ids)();
        }
        let sink: Box<dyn EventSink> = match &self.settings.log_dir {
            Some(dir) => Box::new(EventLog::create(dir, &id, self.settings.fsync)?),
            None => Box::new(NullSink),
        };
        let recorder = SessionRecorder::create(
            id.clone(),
            self.settings.roster.clone(),
            self.settings.settings,
            self.settings.survey_items.clone(),
            self.clock.clone(),
            sink,
        )?;
        let frame = self.phase_frame(recorder.session());
        sessions.insert(
            id.clone(),
            Arc::new(Slot {
                recorder: AsyncMutex::new(recorder),
                attached: AtomicBool::new(false),
                finished: AtomicBool::new(false),
            }),
        );
        info!(session = %id, "session created");
        Ok(Created { session_id: id, frame })
    }

    /// Validates and records a survey. Returns the `phase` frame for the
    /// phase the session moved into.
    pub async fn submit_survey(
        &self,
        id: &SessionId,
        survey: SurveyKind,
        payload: &serde_json::Value,
    ) -> Result<ServerFrame, HubError> {
        let slot = self.slot(id)?;
        let mut rec = slot.recorder.lock().await;
        let session = rec.session();
        let organizations = session.roster.organizations();
        let ctx = SurveyContext {
            items: &session.survey_items,
            organizations: &organizations,
        };
        let delta = validate_submission(session.phase, survey, payload, ctx)?;
        rec.record(EventPayload::SurveySubmitted { delta })?;
        slot.note_phase(rec.session().phase);
        Ok(self.phase_frame(rec.session()))
    }

    /// Claims the session's single chat connection.
    pub fn attach(&self, id: &SessionId) -> Result<Attachment, HubError> {
        let slot = self.slot(id)?;
        slot.attached
            .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
            .map_err(|_| HubError::AlreadyAttached(id.clone()))?;
        Ok(Attachment { slot })
    }

    /// Frames for a freshly attached chat connection. Runs the introduction
    /// turn when the session is waiting for it; on reconnect, resends the
    /// committed turns.
    pub async fn open_chat(&self, id: &SessionId) -> Result<Vec<ServerFrame>, HubError> {
        let slot = self.slot(id)?;
        let mut rec = slot.recorder.lock().await;
        if rec.session().phase == SessionPhase::ChatIntro {
            self.orchestrator.run_intro(&mut rec).await?;
        }
        tick_timer(&mut rec, self.clock.now_ms())?;
        slot.note_phase(rec.session().phase);
        let session = rec.session();
        let mut frames = vec![self.phase_frame(session)];
        if session.phase == SessionPhase::ChatActive {
            frames.extend(session.turns.iter().map(|t| ServerFrame::turn(t, &session.roster)));
        }
        Ok(frames)
    }

    pub async fn handle_client_frame(&self, id: &SessionId, frame: ClientFrame) -> Result<Vec<ServerFrame>, HubError> {
        let slot = self.slot(id)?;
        let mut rec = slot.recorder.lock().await;
        let frames = match frame {
            ClientFrame::UserMessage { text } => {
                if tick_timer(&mut rec, self.clock.now_ms())?.is_some() {
                    vec![self.phase_frame(rec.session())]
                } else if rec.session().phase != SessionPhase::ChatActive {
                    vec![illegal(rec.session().phase, PhaseTrigger::UserMessagePosted)]
                } else {
                    match self.orchestrator.run_turn(&mut rec, &text).await {
                        Ok(report) => {
                            let session = rec.session();
                            let mut frames = vec![ServerFrame::turn(&report.turn, &session.roster)];
                            if report.chat_closed {
                                frames.push(self.phase_frame(session));
                            }
                            frames
                        }
                        Err(TurnError::AllBackendsFailed(failures)) => {
                            warn!(session = %id, ?failures, "no backend answered");
                            vec![ServerFrame::protocol_error(
                                "none of the chatbots could be reached; please send your message again",
                            )]
                        }
                        Err(TurnError::EmptyMessage) => {
                            vec![ServerFrame::protocol_error("user_message text must not be blank")]
                        }
                        Err(TurnError::WrongPhase(phase)) => vec![illegal(phase, PhaseTrigger::UserMessagePosted)],
                        Err(other) => return Err(other.into()),
                    }
                }
            }
            ClientFrame::Next => {
                let phase = rec.session().phase;
                if phase == SessionPhase::ChatActive && rec.session().pending_turn().is_none() {
                    rec.record(EventPayload::PhaseAdvanced {
                        from: phase,
                        to: SessionPhase::DonationChoice,
                        cause: AdvanceCause::ParticipantNext,
                        detail: None,
                    })?;
                    vec![self.phase_frame(rec.session())]
                } else {
                    vec![illegal(phase, PhaseTrigger::ParticipantNext)]
                }
            }
            ClientFrame::Heartbeat => {
                let now = self.clock.now_ms();
                if tick_timer(&mut rec, now)?.is_some() {
                    vec![self.phase_frame(rec.session())]
                } else {
                    vec![ServerFrame::Timer {
                        seconds_remaining: seconds_remaining(rec.session(), now),
                    }]
                }
            }
        };
        slot.note_phase(rec.session().phase);
        Ok(frames)
    }

    /// Fires the chat timer if due; returns the resulting `phase` frame.
    pub async fn tick(&self, id: &SessionId) -> Result<Option<ServerFrame>, HubError> {
        let slot = self.slot(id)?;
        let mut rec = slot.recorder.lock().await;
        let fired = tick_timer(&mut rec, self.clock.now_ms())?;
        Ok(fired.map(|_| self.phase_frame(rec.session())))
    }

    /// Moves an unfinished session to `Aborted`. No-op for finished ones.
    pub async fn abort(&self, id: &SessionId, detail: &str) -> Result<(), HubError> {
        let slot = self.slot(id)?;
        let mut rec = slot.recorder.lock().await;
        let phase = rec.session().phase;
        if !phase.is_terminal() && rec.session().pending_turn().is_none() {
            rec.record(EventPayload::PhaseAdvanced {
                from: phase,
                to: SessionPhase::Aborted,
                cause: AdvanceCause::Abort,
                detail: Some(detail.to_owned()),
            })?;
        }
        slot.note_phase(rec.session().phase);
        Ok(())
    }

    /// The `phase` frame for the session's current phase.
    pub async fn phase(&self, id: &SessionId) -> Result<ServerFrame, HubError> {
        let slot = self.slot(id)?;
        let rec = slot.recorder.lock().await;
        Ok(self.phase_frame(rec.session()))
    }

    /// Ids of sessions that have not finished.
    pub fn active_sessions(&self) -> Vec<SessionId> {
        let sessions = self.sessions.lock().expect("session map poisoned");
        let mut ids: Vec<SessionId> = sessions
            .iter()
            .filter(|(_, s)| !s.finished.load(Ordering::SeqCst))
            .map(|(id, _)| id.clone())
            .collect();
        ids.sort();
        ids
    }

    pub async fn session(&self, id: &SessionId) -> Result<Session, HubError> {
        Ok(self.slot(id)?.recorder.lock().await.session().clone())
    }

    pub async fn events(&self, id: &SessionId) -> Result<Vec<chatroom_core::model::SessionEvent>, HubError> {
        Ok(self.slot(id)?.recorder.lock().await.events().to_vec())
    }

    /// The export rendering for one session (header plus its row once completed).
    pub async fn export(&self, id: &SessionId, format: ExportFormat) -> Result<String, HubError> {
        let session = self.session(id).await?;
        Ok(export_table(&[session], format))
    }
}

fn illegal(phase: SessionPhase, trigger: PhaseTrigger) -> ServerFrame {
    ServerFrame::phase_error(IllegalTransition { phase, trigger }.to_string())
}

/// Whole seconds left on the chat timer, rounded up; 0 outside the chat.
pub fn seconds_remaining(session: &Session, now_ms: i64) -> u64 {
    match (session.phase, session.timer_deadline_ms) {
        (SessionPhase::ChatActive, Some(deadline)) => ((deadline - now_ms).max(0) as u64).div_ceil(1000),
        _ => 0,
    }
}

/// Records `timer_expired` once the chat deadline has been reached. Returns
/// the deadline when it fired; later calls find the chat closed and do nothing.
pub fn tick_timer(rec: &mut SessionRecorder, now_ms: i64) -> Result<Option<i64>, RecordError> {
    let session = rec.session();
    match session.timer_deadline_ms {
        Some(deadline)
            if session.phase == SessionPhase::ChatActive && session.pending_turn().is_none() && now_ms >= deadline =>
        {
            rec.record(EventPayload::TimerExpired { deadline_ms: deadline })?;
            Ok(Some(deadline))
        }
        _ => Ok(None),
    }
}
