//! System prompts and the multi-party transcript each bot is shown.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BotId, BotPersona, Roster, Session, Speaker};

/// Stock system prompt. Placeholders are `{name}`; see [`Placeholder`].
pub const DEFAULT_TEMPLATE: &str = "\
You are a highly reliable and excellent {role_description}. {persuasion_goal}

There are a total of {agent_count} agents in a chat room: {agent_roster}. Your goal is to persuade the human user to donate to your organization. On average, you are expected to chat with the human user for {turn_expectation} turns.

During the chat, please follow the instructions:

- Limit the response to {word_limit} words.
- Wait for the user's response before moving on.
- When you initiate the conversation, introduce yourself as a representative of {organization}.
- Whenever necessary, use the following appeals to promote donation to {organization}: {appeals}. Feel free to use statistics, narratives, as well as emotional appeals.
{extra_bullets}- {gating_instruction}
";

pub const DEFAULT_GATING_INSTRUCTION: &str = "If the user's question is not relevant to {organization} charity, respond with null/blank. For example, if the user asks about how to make donations to {example_organization}, do not respond because it is not relevant to {organization} charity.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placeholder {
    RoleDescription,
    PersuasionGoal,
    AgentCount,
    /// "one is you, one is another representative chatbot from X, and one is <human>"
    AgentRoster,
    HumanLabel,
    TurnExpectation,
    WordLimit,
    Organization,
    /// Numbered appeals: "1) ..., 2) ..."
    Appeals,
    /// Extra policy bullets, each rendered as "- text\n".
    ExtraBullets,
    GatingInstruction,
    /// First other organization by rank (gating example).
    ExampleOrganization,
}

impl Placeholder {
    const ALL: [Placeholder; 12] = [
        Placeholder::RoleDescription,
        Placeholder::PersuasionGoal,
        Placeholder::AgentCount,
        Placeholder::AgentRoster,
        Placeholder::HumanLabel,
        Placeholder::TurnExpectation,
        Placeholder::WordLimit,
        Placeholder::Organization,
        Placeholder::Appeals,
        Placeholder::ExtraBullets,
        Placeholder::GatingInstruction,
        Placeholder::ExampleOrganization,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Placeholder::RoleDescription => "role_description",
            Placeholder::PersuasionGoal => "persuasion_goal",
            Placeholder::AgentCount => "agent_count",
            Placeholder::AgentRoster => "agent_roster",
            Placeholder::HumanLabel => "human_label",
            Placeholder::TurnExpectation => "turn_expectation",
            Placeholder::WordLimit => "word_limit",
            Placeholder::Organization => "organization",
            Placeholder::Appeals => "appeals",
            Placeholder::ExtraBullets => "extra_bullets",
            Placeholder::GatingInstruction => "gating_instruction",
            Placeholder::ExampleOrganization => "example_organization",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("line {line}: unknown placeholder `{{{name}}}`")]
    UnknownPlaceholder { line: usize, name: String },
    #[error("line {line}: unclosed `{{`")]
    Unclosed { line: usize },
    #[error("placeholder `{{{0}}}` is not allowed here")]
    NotAllowed(&'static str),
    #[error("cannot read template: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq)]
enum Segment {
    Literal(String),
    Slot(Placeholder),
}

/// Plain text with `{name}` placeholders. A `{` not followed by a known
/// lowercase name and `}` is an error; there is no escaping.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    segments: Vec<Segment>,
}

impl PromptTemplate {
    pub fn parse(source: &str) -> Result<Self, TemplateError> {
        let mut segments = Vec::new();
        let mut rest = source;
        let mut line = 1;
        while let Some(open) = rest.find('{') {
            let (literal, after) = rest.split_at(open);
            line += literal.matches('\n').count();
            if !literal.is_empty() {
                segments.push(Segment::Literal(literal.to_owned()));
            }
            let close = after.find('}').ok_or(TemplateError::Unclosed { line })?;
            let name = &after[1..close];
            let slot = Placeholder::from_name(name).ok_or_else(|| TemplateError::UnknownPlaceholder {
                line,
                name: name.to_owned(),
            })?;
            segments.push(Segment::Slot(slot));
            rest = &after[close + 1..];
        }
        if !rest.is_empty() {
            segments.push(Segment::Literal(rest.to_owned()));
        }
        Ok(Self { segments })
    }

    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        let text = fs::read_to_string(path).map_err(|e| TemplateError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn placeholders(&self) -> impl Iterator<Item = Placeholder> + '_ {
        self.segments.iter().filter_map(|s| match s {
            Segment::Slot(p) => Some(*p),
            Segment::Literal(_) => None,
        })
    }

    fn render(&self, value: &dyn Fn(Placeholder) -> String) -> String {
        self.segments
            .iter()
            .map(|s| match s {
                Segment::Literal(text) => text.clone(),
                Segment::Slot(p) => value(*p),
            })
            .collect()
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATE).expect("default template parses")
    }
}

/// Shared prompt settings. The word limit comes from each persona.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptPolicy {
    template: PromptTemplate,
    gating: PromptTemplate,
    pub turn_expectation: u32,
    pub appeal_bullets: Vec<String>,
    /// Gating example when the roster has no other organization.
    pub fallback_example_organization: String,
}

impl Default for PromptPolicy {
    fn default() -> Self {
        Self {
            template: PromptTemplate::default(),
            gating: PromptTemplate::parse(DEFAULT_GATING_INSTRUCTION).expect("default gating parses"),
            turn_expectation: 10,
            appeal_bullets: Vec::new(),
            fallback_example_organization: "another organization".to_owned(),
        }
    }
}

impl PromptPolicy {
    pub fn new(
        template: PromptTemplate,
        gating_instruction: &str,
        turn_expectation: u32,
        appeal_bullets: Vec<String>,
    ) -> Result<Self, TemplateError> {
        let gating = PromptTemplate::parse(gating_instruction)?;
        if let Some(p) = gating
            .placeholders()
            .find(|p| matches!(p, Placeholder::GatingInstruction | Placeholder::ExtraBullets))
        {
            return Err(TemplateError::NotAllowed(p.name()));
        }
        Ok(Self {
            template,
            gating,
            turn_expectation,
            appeal_bullets,
            ..Self::default()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("persona `{0}` is not in the roster")]
pub struct PersonaNotInRoster(pub BotId);

/// Renders `persona`'s system prompt. Pure in its three inputs.
pub fn build_system_prompt(
    persona: &BotPersona,
    roster: &Roster,
    policy: &PromptPolicy,
) -> Result<String, PersonaNotInRoster> {
    if roster.persona(&persona.bot_id) != Some(persona) {
        return Err(PersonaNotInRoster(persona.bot_id.clone()));
    }
    let others: Vec<&BotPersona> = roster.personas().iter().filter(|p| p.bot_id != persona.bot_id).collect();
    let example_organization = others
        .first()
        .map(|p| p.organization_name.clone())
        .unwrap_or_else(|| policy.fallback_example_organization.clone());

    let mut agents = vec!["one is you".to_owned()];
    agents.extend(
        others
            .iter()
            .map(|p| format!("one is another representative chatbot from {}", p.organization_name)),
    );
    agents.push(format!("and one is {}", roster.human_label()));
    let agent_roster = agents.join(", ");

    let appeals = persona
        .appeal_instructions
        .iter()
        .enumerate()
        .map(|(i, a)| format!("{}) {a}", i + 1))
        .collect::<Vec<_>>()
        .join(", ");
    let extra_bullets: String = policy.appeal_bullets.iter().map(|b| format!("- {b}\n")).collect();

    let simple = |p: Placeholder| -> String {
        match p {
            Placeholder::RoleDescription => persona.role_description.clone(),
            Placeholder::PersuasionGoal => persona.persuasion_goal.clone(),
            Placeholder::AgentCount => roster.agent_count().to_string(),
            Placeholder::AgentRoster => agent_roster.clone(),
            Placeholder::HumanLabel => roster.human_label().to_owned(),
            Placeholder::TurnExpectation => policy.turn_expectation.to_string(),
            Placeholder::WordLimit => persona.word_limit.to_string(),
            Placeholder::Organization => persona.organization_name.clone(),
            Placeholder::Appeals => appeals.clone(),
            Placeholder::ExampleOrganization => example_organization.clone(),
            Placeholder::ExtraBullets | Placeholder::GatingInstruction => String::new(),
        }
    };
    let gating = policy.gating.render(&simple);
    Ok(policy.template.render(&|p| match p {
        Placeholder::GatingInstruction => gating.clone(),
        Placeholder::ExtraBullets => extra_bullets.clone(),
        other => simple(other),
    }))
}

/// How a transcript entry relates to the bot receiving it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryRole {
    Human,
    /// The receiving bot's own earlier message.
    OwnMessage,
    OtherBot,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub speaker_label: String,
    pub role: EntryRole,
    pub text: String,
}

/// The shared chat history, labeled from one bot's point of view.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributedTranscript {
    pub entries: Vec<TranscriptEntry>,
}

impl AttributedTranscript {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// Text of the most recent human entry, if any.
    pub fn latest_human_text(&self) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|e| e.role == EntryRole::Human)
            .map(|e| e.text.as_str())
    }

    pub fn push_human(&mut self, roster: &Roster, text: impl Into<String>) {
        self.entries.push(TranscriptEntry {
            speaker_label: roster.human_speaker().to_owned(),
            role: EntryRole::Human,
            text: text.into(),
        });
    }
}

/// Every committed message, plus the user message of a turn in progress.
/// Bot responses of the turn in progress are never included.
pub fn build_transcript(session: &Session, for_bot: &BotId) -> AttributedTranscript {
    let roster = &session.roster;
    let committed = session
        .turns
        .iter()
        .flat_map(|t| t.user_message.iter().chain(t.bot_messages.iter()));
    let in_flight = session.pending_turn().and_then(|p| p.user_message.as_ref());

    let entries = committed
        .chain(in_flight)
        .filter(|m| !m.text.trim().is_empty())
        .map(|m| match &m.speaker {
            Speaker::Human => TranscriptEntry {
                speaker_label: roster.human_speaker().to_owned(),
                role: EntryRole::Human,
                text: m.text.clone(),
            },
            Speaker::Bot(id) => TranscriptEntry {
                speaker_label: roster
                    .persona(id)
                    .map_or_else(|| id.to_string(), |p| p.organization_name.clone()),
                role: if id == for_bot { EntryRole::OwnMessage } else { EntryRole::OtherBot },
                text: m.text.clone(),
            },
        })
        .collect();
    AttributedTranscript { entries }
}
