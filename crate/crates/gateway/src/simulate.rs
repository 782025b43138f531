//! Headless runs: scripted participants driven through the same hub the
//! server uses, on a manual clock, so the output is byte-for-byte repeatable.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chatroom_core::analysis::SurveyKind;
use chatroom_core::backend::CompletionBackend;
use chatroom_core::model::{Session, SessionId, SessionPhase, Speaker, TurnPattern};
use chatroom_core::{Clock, ManualClock};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::config::ExperimentConfig;
use crate::hub::{sequential_ids, HubError, HubSettings, SessionHub};
use crate::wire::{ClientFrame, ServerFrame};

/// Fixed epoch of the simulated clock (2024-01-01T00:00:00Z).
pub const SIM_EPOCH_MS: i64 = 1_704_067_200_000;
/// Simulated time between participant actions.
pub const SIM_STEP_MS: i64 = 1_000;

/// One scripted participant.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticipantScript {
    pub demographics: Value,
    pub chat: Vec<String>,
    pub donation: Value,
    pub post_survey: Value,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TranscriptFile {
    One(ParticipantScript),
    Many(Vec<ParticipantScript>),
}

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad transcript {path}: {source}")]
    Transcript { path: PathBuf, source: serde_json::Error },
    #[error("participant {participant}: {step} rejected: {detail}")]
    ScriptMismatch {
        participant: usize,
        step: &'static str,
        detail: String,
    },
    #[error(transparent)]
    Hub(#[from] HubError),
}

/// Reads a transcript holding one participant object or an array of them.
pub fn load_transcript(path: &Path) -> Result<Vec<ParticipantScript>, SimulateError> {
    let text = std::fs::read_to_string(path).map_err(|source| SimulateError::Io {
        path: path.to_owned(),
        source,
    })?;
    let file: TranscriptFile = serde_json::from_str(&text).map_err(|source| SimulateError::Transcript {
        path: path.to_owned(),
        source,
    })?;
    Ok(match file {
        TranscriptFile::One(p) => vec![p],
        TranscriptFile::Many(ps) => ps,
    })
}

/// A server frame as it went to one participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedFrame {
    pub session_id: SessionId,
    pub frame: ServerFrame,
}

#[derive(Debug, Clone)]
pub struct ParticipantRun {
    pub session: Session,
    pub patterns: Vec<TurnPattern>,
    pub frames: Vec<ServerFrame>,
    /// Chat messages left unsent because the chat had already closed.
    pub skipped_messages: usize,
}

#[derive(Debug, Clone, Default)]
pub struct SimulationReport {
    pub runs: Vec<ParticipantRun>,
}

impl SimulationReport {
    pub fn sessions(&self) -> Vec<Session> {
        self.runs.iter().map(|r| r.session.clone()).collect()
    }

    pub fn frames_jsonl(&self) -> String {
        let mut out = String::new();
        for run in &self.runs {
            for frame in &run.frames {
                let line = RecordedFrame {
                    session_id: run.session.session_id.clone(),
                    frame: frame.clone(),
                };
                out.push_str(&serde_json::to_string(&line).expect("frames serialize"));
                out.push('\n');
            }
        }
        out
    }

    /// The chats as plain text, one block per participant.
    pub fn transcript_text(&self) -> String {
        let mut out = String::new();
        for run in &self.runs {
            let s = &run.session;
            let _ = writeln!(out, "== {} ==", s.session_id);
            for turn in &s.turns {
                let _ = writeln!(out, "-- turn {} ({})", turn.turn_index, pattern_label(&turn.pattern));
                let messages = turn.user_message.iter().chain(&turn.bot_messages);
                for m in messages {
                    let name = match &m.speaker {
                        Speaker::Human => s.roster.human_speaker().to_owned(),
                        Speaker::Bot(id) => s
                            .roster
                            .persona(id)
                            .map_or_else(|| id.to_string(), |p| p.organization_name.clone()),
                    };
                    let _ = writeln!(out, "{name}: {}", m.text);
                }
            }
            if run.skipped_messages > 0 {
                let _ = writeln!(out, "-- {} message(s) not sent: chat closed", run.skipped_messages);
            }
            out.push('\n');
        }
        out
    }
}

/// `single stc`, `partial a,b`, or the plain wire name.
pub fn pattern_label(pattern: &TurnPattern) -> String {
    match pattern {
        TurnPattern::Single(id) => format!("single {id}"),
        TurnPattern::Partial(ids) => {
            let ids: Vec<&str> = ids.iter().map(|i| i.as_str()).collect();
            format!("partial {}", ids.join(","))
        }
        other => other.wire_name().to_owned(),
    }
}

/// Runs every participant in order. With `out`, session logs go to
/// `out/sessions/` and `frames.jsonl` plus `transcript.txt` are written to `out`.
pub async fn simulate(
    config: &ExperimentConfig,
    backend: Arc<dyn CompletionBackend>,
    participants: &[ParticipantScript],
    out: Option<&Path>,
) -> Result<SimulationReport, SimulateError> {
    let clock = Arc::new(ManualClock::new(SIM_EPOCH_MS));
    let mut settings = HubSettings::from(config);
    settings.log_dir = out.map(Path::to_owned);
    settings.capacity = usize::MAX;
    let hub = SessionHub::new(
        settings,
        backend,
        config.orchestrator.clone(),
        clock.clone() as Arc<dyn Clock>,
        sequential_ids("sim"),
    );

    let mut report = SimulationReport::default();
    for (index, participant) in participants.iter().enumerate() {
        report.runs.push(run_participant(&hub, &clock, index + 1, participant).await?);
    }

    if let Some(out) = out {
        write(&out.join("frames.jsonl"), &report.frames_jsonl())?;
        write(&out.join("transcript.txt"), &report.transcript_text())?;
    }
    Ok(report)
}

fn write(path: &Path, text: &str) -> Result<(), SimulateError> {
    std::fs::write(path, text).map_err(|source| SimulateError::Io {
        path: path.to_owned(),
        source,
    })
}

async fn run_participant(
    hub: &SessionHub,
    clock: &ManualClock,
    participant: usize,
    script: &ParticipantScript,
) -> Result<ParticipantRun, SimulateError> {
    let created = hub.create_session().await?;
    let id = created.session_id;
    let mut frames = vec![created.frame];

    let step = Step { hub, clock, id: &id, participant };
    frames.push(step.survey(SurveyKind::Demographics, &script.demographics).await?);

    clock.advance_ms(SIM_STEP_MS);
    frames.extend(hub.open_chat(&id).await?);

    let mut skipped_messages = 0;
    for text in &script.chat {
        clock.advance_ms(SIM_STEP_MS);
        if hub.session(&id).await?.phase != SessionPhase::ChatActive {
            skipped_messages += 1;
            continue;
        }
        let frame = ClientFrame::UserMessage { text: text.clone() };
        frames.extend(hub.handle_client_frame(&id, frame).await?);
    }
    if hub.session(&id).await?.phase == SessionPhase::ChatActive {
        clock.advance_ms(SIM_STEP_MS);
        frames.extend(hub.handle_client_frame(&id, ClientFrame::Next).await?);
    }

    frames.push(step.survey(SurveyKind::Donation, &script.donation).await?);
    frames.push(step.survey(SurveyKind::PostSurvey, &script.post_survey).await?);

    let session = hub.session(&id).await?;
    Ok(ParticipantRun {
        patterns: session.turns.iter().map(|t| t.pattern.clone()).collect(),
        session,
        frames,
        skipped_messages,
    })
}

struct Step<'a> {
    hub: &'a SessionHub,
    clock: &'a ManualClock,
    id: &'a SessionId,
    participant: usize,
}

impl Step<'_> {
    async fn survey(&self, kind: SurveyKind, payload: &Value) -> Result<ServerFrame, SimulateError> {
        self.clock.advance_ms(SIM_STEP_MS);
        self.hub.submit_survey(self.id, kind, payload).await.map_err(|e| match e {
            HubError::Survey(e) => SimulateError::ScriptMismatch {
                participant: self.participant,
                step: kind.as_str(),
                detail: e.to_string(),
            },
            other => other.into(),
        })
    }
}
