use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{BotId, Roster};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Human,
    Bot(BotId),
}

impl Speaker {
    pub fn bot_id(&self) -> Option<&BotId> {
        match self {
            Speaker::Human => None,
            Speaker::Bot(id) => Some(id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("chat messages cannot be blank")]
pub struct BlankMessage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub message_id: u64,
    pub speaker: Speaker,
    pub text: String,
    pub turn_index: u32,
    pub timestamp_ms: i64,
}

impl ChatMessage {
    pub fn new(
        message_id: u64,
        speaker: Speaker,
        text: impl Into<String>,
        turn_index: u32,
        timestamp_ms: i64,
    ) -> Result<Self, BlankMessage> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(BlankMessage);
        }
        Ok(Self {
            message_id,
            speaker,
            text,
            turn_index,
            timestamp_ms,
        })
    }
}

/// Which bots answered a turn.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnPattern {
    Intro,
    Both,
    Single(BotId),
    /// More than one but not every bot answered (rosters of three or more).
    Partial(Vec<BotId>),
    Neither,
}

impl TurnPattern {
    /// Wire name used in `turn` frames.
    pub fn wire_name(&self) -> &'static str {
        match self {
            TurnPattern::Intro => "intro",
            TurnPattern::Both => "both",
            TurnPattern::Single(_) => "single",
            TurnPattern::Partial(_) => "partial",
            TurnPattern::Neither => "neither",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PatternError {
    #[error("speaker `{0:?}` is not a bot of this roster")]
    UnknownSpeaker(Speaker),
}

/// Classifies a turn from the bots that contributed to it.
pub fn derive_pattern(bot_messages: &[ChatMessage], roster: &Roster) -> Result<TurnPattern, PatternError> {
    let mut responders = BTreeSet::new();
    for message in bot_messages {
        match &message.speaker {
            Speaker::Bot(id) if roster.contains(id) => {
                responders.insert(id.clone());
            }
            other => return Err(PatternError::UnknownSpeaker(other.clone())),
        }
    }
    Ok(match responders.len() {
        0 => TurnPattern::Neither,
        n if n == roster.personas().len() => TurnPattern::Both,
        1 => TurnPattern::Single(responders.into_iter().next().expect("one responder")),
        _ => TurnPattern::Partial(
            roster
                .bot_ids()
                .into_iter()
                .filter(|id| responders.contains(id))
                .collect(),
        ),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub turn_index: u32,
    /// Absent for the introduction turn.
    pub user_message: Option<ChatMessage>,
    /// Ordered by the speakers' display rank.
    pub bot_messages: Vec<ChatMessage>,
    pub pattern: TurnPattern,
}
