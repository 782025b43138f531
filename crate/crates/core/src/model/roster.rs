use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::BotId;

/// Identity and prompt ingredients of one chatbot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BotPersona {
    pub bot_id: BotId,
    pub organization_name: String,
    /// Completes "You are a highly reliable and excellent ...".
    pub role_description: String,
    pub persuasion_goal: String,
    pub appeal_instructions: Vec<String>,
    pub word_limit: u32,
    pub display_color: String,
    pub display_rank: u32,
    /// Introduction used when the bot stays blank for its intro twice.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_intro: Option<String>,
}

impl BotPersona {
    /// A charity representative persona with the stock wording, appeals and
    /// a 50-word limit.
    pub fn charity_representative(
        bot_id: impl Into<BotId>,
        organization: &str,
        display_color: &str,
        display_rank: u32,
    ) -> Self {
        Self {
            bot_id: bot_id.into(),
            organization_name: organization.to_owned(),
            role_description: format!("representative from the {organization} organization"),
            persuasion_goal: format!(
                "Your primary goal is to persuade and make the person that talks to you to donate to your organization, {organization}."
            ),
            appeal_instructions: vec![
                format!("talking about the history of {organization} charity"),
                format!("talk about the mission of {organization}"),
                format!("talk about ways to donate to the {organization} charity"),
            ],
            word_limit: 50,
            display_color: display_color.to_owned(),
            display_rank,
            fallback_intro: None,
        }
    }

    pub fn fallback_intro_text(&self) -> String {
        self.fallback_intro.clone().unwrap_or_else(|| {
            format!(
                "Hello! I am a representative of {}. I'd be glad to answer your questions.",
                self.organization_name
            )
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RosterError {
    #[error("roster must contain at least one persona")]
    Empty,
    #[error("duplicate bot_id `{0}`")]
    DuplicateBot(BotId),
    #[error("bot_id `{0}` is reserved")]
    ReservedBotId(BotId),
    #[error("display ranks must be unique and contiguous from 1, got {0:?}")]
    BadRanks(Vec<u32>),
    #[error("persona `{0}` has a word limit of zero")]
    ZeroWordLimit(BotId),
}

fn default_human_speaker() -> String {
    "User".to_owned()
}

#[derive(Debug, Clone, Deserialize)]
struct RosterFields {
    personas: Vec<BotPersona>,
    human_label: String,
    #[serde(default = "default_human_speaker")]
    human_speaker: String,
}

/// The chatbots sharing one chatroom with a single human, in display order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RosterFields")]
pub struct Roster {
    personas: Vec<BotPersona>,
    /// Describes the human in system prompts.
    human_label: String,
    /// Label for the human's lines in transcripts sent to the bots.
    human_speaker: String,
}

impl TryFrom<RosterFields> for Roster {
    type Error = RosterError;

    fn try_from(fields: RosterFields) -> Result<Self, Self::Error> {
        Roster::new(fields.personas, fields.human_label).map(|r| r.with_human_speaker(fields.human_speaker))
    }
}

impl Roster {
    pub fn new(mut personas: Vec<BotPersona>, human_label: impl Into<String>) -> Result<Self, RosterError> {
        if personas.is_empty() {
            return Err(RosterError::Empty);
        }
        let mut seen = HashSet::new();
        for p in &personas {
            if p.bot_id.as_str() == "human" || p.bot_id.as_str().is_empty() {
                return Err(RosterError::ReservedBotId(p.bot_id.clone()));
            }
            if !seen.insert(p.bot_id.clone()) {
                return Err(RosterError::DuplicateBot(p.bot_id.clone()));
            }
            if p.word_limit == 0 {
                return Err(RosterError::ZeroWordLimit(p.bot_id.clone()));
            }
        }
        personas.sort_by_key(|p| p.display_rank);
        let ranks: Vec<u32> = personas.iter().map(|p| p.display_rank).collect();
        if ranks.iter().enumerate().any(|(i, &r)| r as usize != i + 1) {
            return Err(RosterError::BadRanks(ranks));
        }
        Ok(Self {
            personas,
            human_label: human_label.into(),
            human_speaker: default_human_speaker(),
        })
    }

    pub fn with_human_speaker(mut self, label: impl Into<String>) -> Self {
        self.human_speaker = label.into();
        self
    }

    /// Save the Children (rank 1) and UNICEF (rank 2) with a potential-donor human.
    pub fn charity_default() -> Self {
        Self::new(
            vec![
                BotPersona::charity_representative("stc", "Save the Children", "#d7263d", 1),
                BotPersona::charity_representative("unicef", "UNICEF", "#1c7ed6", 2),
            ],
            "a human user who could be a potential donor",
        )
        .expect("default roster is valid")
    }

    pub fn personas(&self) -> &[BotPersona] {
        &self.personas
    }

    pub fn human_label(&self) -> &str {
        &self.human_label
    }

    pub fn human_speaker(&self) -> &str {
        &self.human_speaker
    }

    /// Bots plus the one human.
    pub fn agent_count(&self) -> usize {
        self.personas.len() + 1
    }

    pub fn persona(&self, bot_id: &BotId) -> Option<&BotPersona> {
        self.personas.iter().find(|p| &p.bot_id == bot_id)
    }

    pub fn contains(&self, bot_id: &BotId) -> bool {
        self.persona(bot_id).is_some()
    }

    pub fn rank_of(&self, bot_id: &BotId) -> Option<u32> {
        self.persona(bot_id).map(|p| p.display_rank)
    }

    pub fn organizations(&self) -> Vec<String> {
        self.personas.iter().map(|p| p.organization_name.clone()).collect()
    }

    pub fn bot_ids(&self) -> Vec<BotId> {
        self.personas.iter().map(|p| p.bot_id.clone()).collect()
    }
}
