//! Experiment configuration, read from TOML.
//!
//! Every section is optional; an empty file yields the default two-charity
//! study on the HTTP backend, with the API key read from the environment.
//! Relative paths resolve against the config file's directory.

use std::path::{Path, PathBuf};
use std::time::Duration;

use chatroom_core::analysis::LikertItem;
use std::sync::Arc;

use chatroom_core::backend::{
    load_script, CompletionBackend, HttpBackend, HttpBackendConfig, ScriptedBackend, DEFAULT_MODEL_ID,
};
use chatroom_core::model::{BotPersona, Roster, RosterError, SessionSettings};
use chatroom_core::orchestrator::{BlankGate, WordLimitMode};
use chatroom_core::prompt::{PromptPolicy, PromptTemplate, TemplateError, DEFAULT_GATING_INSTRUCTION};
use chatroom_core::OrchestratorConfig;
use serde::Deserialize;
use thiserror::Error;

pub const DEFAULT_INSTRUCTION_TEXT: &str = "You are in a chat room with two charity representative chatbots. \
Ask them anything about their organizations. A chatbot only answers when your message is relevant to it, \
so some messages may get one answer or none. Press Next when you are ready to continue.";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Roster(#[from] RosterError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("backend: {0}")]
    Backend(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub chat_seconds: u32,
    pub max_turns: u32,
    /// Copy for the chat instruction box.
    pub instruction_text: String,
    pub log_dir: PathBuf,
    pub fsync: bool,
    /// Concurrent unfinished sessions allowed.
    pub capacity: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        let settings = SessionSettings::default();
        Self {
            chat_seconds: settings.chat_seconds,
            max_turns: settings.max_turns,
            instruction_text: DEFAULT_INSTRUCTION_TEXT.to_owned(),
            log_dir: PathBuf::from("data"),
            fsync: true,
            capacity: 100,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptSection {
    pub template_file: Option<PathBuf>,
    pub gating_instruction: String,
    pub turn_expectation: u32,
    pub appeal_bullets: Vec<String>,
}

impl Default for PromptSection {
    fn default() -> Self {
        Self {
            template_file: None,
            gating_instruction: DEFAULT_GATING_INSTRUCTION.to_owned(),
            turn_expectation: 10,
            appeal_bullets: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrchestratorSection {
    pub word_limit_mode: WordLimitMode,
    pub temperature: f32,
    pub max_output_tokens: u32,
    pub request_timeout_seconds: u64,
    pub blank_sentinels: Vec<String>,
}

impl Default for OrchestratorSection {
    fn default() -> Self {
        let defaults = OrchestratorConfig::default();
        Self {
            word_limit_mode: defaults.word_limit_mode,
            temperature: defaults.temperature,
            max_output_tokens: defaults.max_output_tokens,
            request_timeout_seconds: defaults.request_timeout.as_secs(),
            blank_sentinels: defaults.blank_gate.sentinels().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSection {
    Http {
        #[serde(default = "default_api_base")]
        api_base_url: String,
        #[serde(default = "default_model")]
        model_id: String,
        #[serde(default = "default_in_flight")]
        max_in_flight: usize,
    },
    Scripted {
        script: PathBuf,
    },
}

fn default_api_base() -> String {
    HttpBackendConfig::default().api_base_url
}

fn default_model() -> String {
    DEFAULT_MODEL_ID.to_owned()
}

fn default_in_flight() -> usize {
    HttpBackendConfig::default().max_in_flight
}

impl Default for BackendSection {
    fn default() -> Self {
        BackendSection::Http {
            api_base_url: default_api_base(),
            model_id: default_model(),
            max_in_flight: default_in_flight(),
        }
    }
}

/// A persona entry; omitted wording falls back to the stock charity text.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonaEntry {
    pub bot_id: String,
    pub organization_name: String,
    pub display_color: String,
    pub display_rank: u32,
    pub role_description: Option<String>,
    pub persuasion_goal: Option<String>,
    pub appeal_instructions: Option<Vec<String>>,
    pub word_limit: Option<u32>,
    pub fallback_intro: Option<String>,
}

impl PersonaEntry {
    fn into_persona(self) -> BotPersona {
        let mut p = BotPersona::charity_representative(
            self.bot_id.as_str(),
            &self.organization_name,
            &self.display_color,
            self.display_rank,
        );
        if let Some(v) = self.role_description {
            p.role_description = v;
        }
        if let Some(v) = self.persuasion_goal {
            p.persuasion_goal = v;
        }
        if let Some(v) = self.appeal_instructions {
            p.appeal_instructions = v;
        }
        if let Some(v) = self.word_limit {
            p.word_limit = v;
        }
        p.fallback_intro = self.fallback_intro;
        p
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RosterSection {
    pub human_label: Option<String>,
    pub human_speaker: Option<String>,
    pub personas: Vec<PersonaEntry>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurveySection {
    /// Replaces the generated item set when non-empty.
    pub items: Vec<LikertItem>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawConfig {
    experiment: ExperimentSection,
    prompt: PromptSection,
    orchestrator: OrchestratorSection,
    backend: BackendSection,
    roster: RosterSection,
    survey: SurveySection,
}

/// A validated experiment setup.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub roster: Roster,
    pub settings: SessionSettings,
    pub survey_items: Vec<LikertItem>,
    pub instruction_text: String,
    pub log_dir: PathBuf,
    pub fsync: bool,
    pub capacity: usize,
    pub backend: BackendSection,
    pub orchestrator: OrchestratorConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::parse("", Path::new(".")).expect("empty config is valid")
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses TOML, resolving relative paths against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text)?;
        let resolve = |p: &Path| if p.is_absolute() { p.to_owned() } else { base_dir.join(p) };

        let roster = if raw.roster.personas.is_empty() {
            Roster::charity_default()
        } else {
            let label = raw
                .roster
                .human_label
                .clone()
                .unwrap_or_else(|| Roster::charity_default().human_label().to_owned());
            Roster::new(raw.roster.personas.into_iter().map(PersonaEntry::into_persona).collect(), label)?
        };
        let roster = match raw.roster.human_speaker {
            Some(speaker) => roster.with_human_speaker(speaker),
            None => roster,
        };

        let survey_items = if raw.survey.items.is_empty() {
            LikertItem::default_set(&roster)
        } else {
            raw.survey.items
        };
        let mut ids = std::collections::HashSet::new();
        for item in &survey_items {
            if !roster.contains(&item.bot_id) {
                return Err(ConfigError::Invalid(format!(
                    "survey item `{}` refers to unknown bot `{}`",
                    item.item_id, item.bot_id
                )));
            }
            if !ids.insert(item.item_id.as_str()) {
                return Err(ConfigError::Invalid(format!("duplicate survey item `{}`", item.item_id)));
            }
            if item.scale_min != 1 || item.scale_max != 5 {
                return Err(ConfigError::Invalid(format!("survey item `{}` must use a 1-5 scale", item.item_id)));
            }
        }

        let e = raw.experiment;
        if e.max_turns == 0 || e.chat_seconds == 0 {
            return Err(ConfigError::Invalid("max_turns and chat_seconds must be positive".into()));
        }
        if e.capacity == 0 {
            return Err(ConfigError::Invalid("capacity must be positive".into()));
        }

        let template = match &raw.prompt.template_file {
            Some(path) => PromptTemplate::load(&resolve(path))?,
            None => PromptTemplate::default(),
        };
        let prompt_policy = PromptPolicy::new(
            template,
            &raw.prompt.gating_instruction,
            raw.prompt.turn_expectation,
            raw.prompt.appeal_bullets,
        )?;

        let o = raw.orchestrator;
        if !(0.0..=2.0).contains(&o.temperature) {
            return Err(ConfigError::Invalid(format!("temperature {} outside [0, 2]", o.temperature)));
        }
        let backend = match raw.backend {
            BackendSection::Scripted { script } => BackendSection::Scripted {
                script: resolve(&script),
            },
            http => http,
        };
        let model_id = match &backend {
            BackendSection::Http { model_id, .. } => model_id.clone(),
            BackendSection::Scripted { .. } => "scripted".to_owned(),
        };

        Ok(Self {
            roster,
            settings: SessionSettings {
                max_turns: e.max_turns,
                chat_seconds: e.chat_seconds,
            },
            survey_items,
            instruction_text: e.instruction_text,
            log_dir: resolve(&e.log_dir),
            fsync: e.fsync,
            capacity: e.capacity,
            backend,
            orchestrator: OrchestratorConfig {
                model_id,
                temperature: o.temperature,
                max_output_tokens: o.max_output_tokens,
                request_timeout: Duration::from_secs(o.request_timeout_seconds),
                word_limit_mode: o.word_limit_mode,
                blank_gate: BlankGate::new(o.blank_sentinels),
                prompt_policy,
            },
        })
    }
}

impl ExperimentConfig {
    /// Builds the configured backend. The HTTP backend reads its key from
    /// the environment; a scripted backend must cover every roster bot.
    pub fn build_backend(&self) -> Result<Arc<dyn CompletionBackend>, ConfigError> {
        match &self.backend {
            BackendSection::Http {
                api_base_url,
                max_in_flight,
                ..
            } => {
                let config = HttpBackendConfig {
                    api_base_url: api_base_url.clone(),
                    timeout: self.orchestrator.request_timeout,
                    max_in_flight: *max_in_flight,
                };
                let backend = HttpBackend::from_env(config).map_err(|e| ConfigError::Backend(e.to_string()))?;
                Ok(Arc::new(backend))
            }
            BackendSection::Scripted { script } => {
                let script = load_script(script).map_err(|e| ConfigError::Backend(e.to_string()))?;
                if let Some(missing) = self.roster.bot_ids().into_iter().find(|b| script.rules(b).is_none()) {
                    return Err(ConfigError::Backend(format!("script has no PERSONA block for `{missing}`")));
                }
                Ok(Arc::new(ScriptedBackend::new(script)))
            }
        }
    }
}
