//! JSON frames exchanged over the chat WebSocket, and the survey form
//! definitions carried by `phase` frames.

use chatroom_core::analysis::{LikertItem, SurveyKind};
use chatroom_core::model::{BotId, Roster, SessionPhase, Turn};
use serde::{Deserialize, Serialize};

/// JSON Schema every server frame satisfies.
pub const SERVER_FRAME_SCHEMA: &str = include_str!("../schema/server_frames.schema.json");
/// JSON Schema for frames the server accepts.
pub const CLIENT_FRAME_SCHEMA: &str = include_str!("../schema/client_frames.schema.json");

/// WebSocket close code sent when a session already has a live chat connection.
pub const CLOSE_ALREADY_ATTACHED: u16 = 4409;
/// WebSocket close code sent for an unknown session id.
pub const CLOSE_UNKNOWN_SESSION: u16 = 4404;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientFrame {
    UserMessage { text: String },
    Next,
    Heartbeat,
}

/// Parses a client frame; the error string becomes a `protocol_error`.
pub fn parse_client_frame(text: &str) -> Result<ClientFrame, String> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| format!("invalid frame: {e}"))?;
    // serde ignores extra keys on unit variants, so check them here.
    let allowed: &[&str] = match value.get("type").and_then(|t| t.as_str()) {
        Some("user_message") => &["type", "text"],
        _ => &["type"],
    };
    if let Some(key) = value.as_object().and_then(|o| o.keys().find(|k| !allowed.contains(&k.as_str()))) {
        return Err(format!("invalid frame: unknown field `{key}`"));
    }
    let frame: ClientFrame = serde_json::from_value(value).map_err(|e| format!("invalid frame: {e}"))?;
    if let ClientFrame::UserMessage { text } = &frame {
        if text.trim().is_empty() {
            return Err("user_message text must not be blank".into());
        }
    }
    Ok(frame)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireBotMessage {
    pub bot_id: BotId,
    pub organization_name: String,
    pub display_color: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerFrame {
    Turn {
        turn_index: u32,
        pattern: String,
        messages: Vec<WireBotMessage>,
    },
    Phase {
        phase: SessionPhase,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        form: Option<FormDefinition>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        instruction_text: Option<String>,
    },
    Timer {
        seconds_remaining: u64,
    },
    ProtocolError {
        detail: String,
    },
    PhaseError {
        detail: String,
    },
}

impl ServerFrame {
    pub fn turn(turn: &Turn, roster: &Roster) -> Self {
        let messages = turn
            .bot_messages
            .iter()
            .filter_map(|m| {
                let persona = roster.persona(m.speaker.bot_id()?)?;
                Some(WireBotMessage {
                    bot_id: persona.bot_id.clone(),
                    organization_name: persona.organization_name.clone(),
                    display_color: persona.display_color.clone(),
                    text: m.text.clone(),
                })
            })
            .collect();
        ServerFrame::Turn {
            turn_index: turn.turn_index,
            pattern: turn.pattern.wire_name().to_owned(),
            messages,
        }
    }

    pub fn protocol_error(detail: impl Into<String>) -> Self {
        ServerFrame::ProtocolError { detail: detail.into() }
    }

    pub fn phase_error(detail: impl Into<String>) -> Self {
        ServerFrame::PhaseError { detail: detail.into() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("frames serialize")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Text,
    Integer,
    YesNo,
    Choice,
    /// Non-negative currency amount.
    Amount,
    Likert,
    LongText,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormField {
    pub name: String,
    pub label: String,
    pub kind: FieldKind,
    pub required: bool,
    /// Submitted nested under this key (`likert` for Likert items).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

impl FormField {
    fn new(name: &str, label: &str, kind: FieldKind) -> Self {
        Self {
            name: name.to_owned(),
            label: label.to_owned(),
            kind,
            required: true,
            group: None,
            options: None,
            min: None,
            max: None,
        }
    }
}

/// What the client should render for a survey step, and where to POST it
/// (`/sessions/{id}/survey/{survey}`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormDefinition {
    pub survey: SurveyKind,
    pub fields: Vec<FormField>,
}

impl FormDefinition {
    pub fn for_survey(survey: SurveyKind, roster: &Roster, items: &[LikertItem]) -> Self {
        let fields = match survey {
            SurveyKind::Demographics => vec![
                FormField::new("sex", "Sex", FieldKind::Text),
                FormField {
                    min: Some(0.0),
                    max: Some(130.0),
                    ..FormField::new("age", "Age", FieldKind::Integer)
                },
                FormField::new("us_born", "Were you born in the US?", FieldKind::YesNo),
                FormField::new("ethnicity", "Ethnicity", FieldKind::Text),
                FormField::new("education", "Education", FieldKind::Text),
            ],
            SurveyKind::Donation => vec![
                FormField {
                    options: Some(roster.organizations()),
                    ..FormField::new("choice", "Which charity would you prefer to donate to?", FieldKind::Choice)
                },
                FormField {
                    min: Some(0.0),
                    ..FormField::new("amount", "How much would you donate?", FieldKind::Amount)
                },
            ],
            SurveyKind::PostSurvey => items
                .iter()
                .map(|item| FormField {
                    group: Some("likert".to_owned()),
                    min: Some(f64::from(item.scale_min)),
                    max: Some(f64::from(item.scale_max)),
                    ..FormField::new(&item.item_id, &item.wording, FieldKind::Likert)
                })
                .chain(std::iter::once(FormField {
                    required: false,
                    ..FormField::new("feedback", "Any other comments?", FieldKind::LongText)
                }))
                .collect(),
        };
        Self { survey, fields }
    }

    /// The form to show on entering `phase`, if it has one.
    pub fn for_phase(phase: SessionPhase, roster: &Roster, items: &[LikertItem]) -> Option<Self> {
        SurveyKind::for_phase(phase).map(|kind| Self::for_survey(kind, roster, items))
    }
}
