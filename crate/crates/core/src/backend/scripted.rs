//! Keyword-scripted personas.
//!
//! Line grammar (one directive per line, UTF-8):
//!
//! ```text
//! file     = { line "\n" }
//! line     = blank | comment | persona | rule
//! comment  = [spaces] "#" text
//! persona  = "PERSONA" " " bot_id
//! rule     = "PRIORITY" " " uint " WHEN " trigger " SAY " response
//! trigger  = "*" | "<START>" | keyword { "," keyword }
//! response = "<BLANK>" | text
//! ```
//!
//! Rules belong to the preceding `PERSONA`. Lower priority numbers are tried
//! first and the first matching rule wins. Keywords are trimmed and matched
//! case-insensitively as substrings of the latest human message. `*` matches
//! everything; `<START>` matches only the introduction request (no human
//! message yet). Every persona needs a `*` rule and unique priorities.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Duration;

use async_trait::async_trait;
use thiserror::Error;

use super::{BackendError, CompletionBackend, CompletionRequest, CompletionResult, FinishReason};
use crate::model::BotId;
use crate::prompt::AttributedTranscript;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptTrigger {
    Start,
    Any,
    Keywords(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptResponse {
    Say(String),
    Blank,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptRule {
    pub priority: u32,
    pub trigger: ScriptTrigger,
    pub response: ScriptResponse,
}

impl ScriptRule {
    fn matches(&self, transcript: &AttributedTranscript) -> bool {
        let latest = transcript.latest_human_text();
        match &self.trigger {
            ScriptTrigger::Any => true,
            ScriptTrigger::Start => latest.is_none(),
            ScriptTrigger::Keywords(keywords) => latest.is_some_and(|text| {
                let text = text.to_lowercase();
                keywords.iter().any(|k| text.contains(k.as_str()))
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScriptError {
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("invalid script: {0}")]
    Validation(String),
    #[error("cannot read script: {0}")]
    Io(String),
}

/// Per-persona rule lists, each sorted by priority.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Script {
    personas: BTreeMap<BotId, Vec<ScriptRule>>,
}

impl Script {
    pub fn rules(&self, bot_id: &BotId) -> Option<&[ScriptRule]> {
        self.personas.get(bot_id).map(Vec::as_slice)
    }

    pub fn personas(&self) -> impl Iterator<Item = &BotId> {
        self.personas.keys()
    }

    /// The response the persona gives to `transcript`.
    pub fn respond(&self, bot_id: &BotId, transcript: &AttributedTranscript) -> Option<&ScriptResponse> {
        self.rules(bot_id)?
            .iter()
            .find(|rule| rule.matches(transcript))
            .map(|rule| &rule.response)
    }
}

fn parse_rule(line_no: usize, line: &str) -> Result<ScriptRule, ScriptError> {
    let err = |detail: &str| ScriptError::Parse {
        line: line_no,
        detail: detail.to_owned(),
    };
    let rest = line.strip_prefix("PRIORITY ").ok_or_else(|| err("expected PERSONA or PRIORITY"))?;
    let (priority, rest) = rest.split_once(" WHEN ").ok_or_else(|| err("missing WHEN"))?;
    let priority: u32 = priority
        .trim()
        .parse()
        .map_err(|_| err("priority must be a non-negative integer"))?;
    let (trigger, response) = rest.split_once(" SAY ").ok_or_else(|| err("missing SAY"))?;
    let trigger = match trigger.trim() {
        "*" => ScriptTrigger::Any,
        "<START>" => ScriptTrigger::Start,
        keywords => {
            let keywords: Vec<String> = keywords
                .split(',')
                .map(|k| k.trim().to_lowercase())
                .filter(|k| !k.is_empty())
                .collect();
            if keywords.is_empty() {
                return Err(err("empty keyword list"));
            }
            ScriptTrigger::Keywords(keywords)
        }
    };
    let response = match response.trim() {
        "<BLANK>" => ScriptResponse::Blank,
        "" => return Err(err("empty response; use <BLANK>")),
        text => ScriptResponse::Say(text.to_owned()),
    };
    Ok(ScriptRule {
        priority,
        trigger,
        response,
    })
}

pub fn parse_script(text: &str) -> Result<Script, ScriptError> {
    let mut personas: Vec<(BotId, Vec<ScriptRule>)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        if let Some(id) = line.strip_prefix("PERSONA ") {
            let id = id.trim();
            if id.is_empty() || id.contains(char::is_whitespace) {
                return Err(ScriptError::Parse {
                    line: line_no,
                    detail: "bad persona id".into(),
                });
            }
            if personas.iter().any(|(b, _)| b.as_str() == id) {
                return Err(ScriptError::Validation(format!("persona `{id}` declared twice")));
            }
            personas.push((BotId::from(id), Vec::new()));
            continue;
        }
        let rule = parse_rule(line_no, line)?;
        let (_, rules) = personas.last_mut().ok_or_else(|| ScriptError::Parse {
            line: line_no,
            detail: "rule before any PERSONA".into(),
        })?;
        rules.push(rule);
    }

    if personas.is_empty() {
        return Err(ScriptError::Validation("no personas (a catch-all rule is required)".into()));
    }
    let mut script = Script::default();
    for (bot, mut rules) in personas {
        rules.sort_by_key(|r| r.priority);
        if let Some(pair) = rules.windows(2).find(|w| w[0].priority == w[1].priority) {
            return Err(ScriptError::Validation(format!(
                "persona `{bot}` has duplicate priority {}",
                pair[0].priority
            )));
        }
        if !rules.iter().any(|r| r.trigger == ScriptTrigger::Any) {
            return Err(ScriptError::Validation(format!("persona `{bot}` has no catch-all (WHEN *) rule")));
        }
        script.personas.insert(bot, rules);
    }
    Ok(script)
}

pub fn load_script(path: &Path) -> Result<Script, ScriptError> {
    let text = fs::read_to_string(path).map_err(|e| ScriptError::Io(format!("{}: {e}", path.display())))?;
    parse_script(&text)
}

/// Answers from a [`Script`]; a pure function of the script and the latest
/// human message. Temperature and model are ignored.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    script: Script,
}

impl ScriptedBackend {
    pub fn new(script: Script) -> Self {
        Self { script }
    }

    pub fn script(&self) -> &Script {
        &self.script
    }
}

#[async_trait]
impl CompletionBackend for ScriptedBackend {
    async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        let response = self
            .script
            .respond(&request.bot_id, &request.transcript)
            .ok_or_else(|| BackendError::UnknownPersona(request.bot_id.clone()))?;
        let text = match response {
            ScriptResponse::Say(text) => text.clone(),
            ScriptResponse::Blank => String::new(),
        };
        Ok(CompletionResult {
            text,
            finish_reason: FinishReason::Stop,
            latency: Duration::ZERO,
            token_usage: None,
        })
    }
}
