//! Survey item definitions and submission validation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::model::{BotId, Demographics, MeasureDelta, Roster, SessionPhase};

/// What a Likert item measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Construct {
    /// Personal relevance of the bot's messages.
    Relevance,
    Convincing,
    Persuasive,
    Compelling,
    Other,
}

fn scale_min() -> u8 {
    1
}

fn scale_max() -> u8 {
    5
}

/// A 5-point agreement item about one bot (1 = strongly disagree,
/// 5 = strongly agree).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LikertItem {
    pub item_id: String,
    pub bot_id: BotId,
    pub construct: Construct,
    pub wording: String,
    #[serde(default = "scale_min")]
    pub scale_min: u8,
    #[serde(default = "scale_max")]
    pub scale_max: u8,
}

impl LikertItem {
    pub fn new(item_id: impl Into<String>, bot_id: BotId, construct: Construct, wording: impl Into<String>) -> Self {
        Self {
            item_id: item_id.into(),
            bot_id,
            construct,
            wording: wording.into(),
            scale_min: scale_min(),
            scale_max: scale_max(),
        }
    }

    /// Personal relevance plus convincing/persuasive/compelling for every bot.
    pub fn default_set(roster: &Roster) -> Vec<LikertItem> {
        roster
            .personas()
            .iter()
            .flat_map(|p| {
                let org = &p.organization_name;
                let id = p.bot_id.as_str();
                [
                    (
                        "personal",
                        Construct::Relevance,
                        format!("The {org} chatbot's messages seemed to be written personally for me."),
                    ),
                    (
                        "convincing",
                        Construct::Convincing,
                        format!("The {org} chatbot's messages were convincing."),
                    ),
                    (
                        "persuasive",
                        Construct::Persuasive,
                        format!("The {org} chatbot's messages were persuasive."),
                    ),
                    (
                        "compelling",
                        Construct::Compelling,
                        format!("The {org} chatbot's messages were compelling."),
                    ),
                ]
                .into_iter()
                .map(move |(suffix, construct, wording)| {
                    LikertItem::new(format!("{id}_{suffix}"), BotId::from(id), construct, wording)
                })
            })
            .collect()
    }
}

/// The three survey forms of a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurveyKind {
    Demographics,
    Donation,
    PostSurvey,
}

impl SurveyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SurveyKind::Demographics => "demographics",
            SurveyKind::Donation => "donation",
            SurveyKind::PostSurvey => "post_survey",
        }
    }

    /// The phase in which this form is accepted.
    pub fn phase(self) -> SessionPhase {
        match self {
            SurveyKind::Demographics => SessionPhase::PreSurvey,
            SurveyKind::Donation => SessionPhase::DonationChoice,
            SurveyKind::PostSurvey => SessionPhase::PostSurvey,
        }
    }

    pub fn for_phase(phase: SessionPhase) -> Option<Self> {
        [SurveyKind::Demographics, SurveyKind::Donation, SurveyKind::PostSurvey]
            .into_iter()
            .find(|k| k.phase() == phase)
    }
}

impl fmt::Display for SurveyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SurveyKind {
    type Err = SurveyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "demographics" => Ok(SurveyKind::Demographics),
            "donation" => Ok(SurveyKind::Donation),
            "post_survey" => Ok(SurveyKind::PostSurvey),
            other => Err(SurveyError::UnknownSurvey(other.to_owned())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SurveyError {
    #[error("unknown survey `{0}`")]
    UnknownSurvey(String),
    #[error("`{survey}` survey is not accepted in phase `{phase}`")]
    WrongPhase { phase: SessionPhase, survey: SurveyKind },
    #[error("payload must be a JSON object")]
    NotAnObject,
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("unknown survey item `{0}`")]
    UnknownItem(String),
    #[error("`{field}` value {value} is out of range")]
    OutOfRange { field: String, value: String },
    #[error("`{field}`: {detail}")]
    InvalidValue { field: String, detail: String },
    #[error("unknown organization `{0}`")]
    UnknownOrganization(String),
}

/// What a submission is checked against.
#[derive(Debug, Clone, Copy)]
pub struct SurveyContext<'a> {
    pub items: &'a [LikertItem],
    pub organizations: &'a [String],
}

const DEMOGRAPHIC_FIELDS: [&str; 5] = ["sex", "age", "us_born", "ethnicity", "education"];
const DONATION_FIELDS: [&str; 2] = ["choice", "amount"];
const POST_SURVEY_FIELDS: [&str; 2] = ["likert", "feedback"];
const MAX_AGE: u64 = 130;

/// Types and range-checks a survey payload submitted in `phase`.
pub fn validate_submission(
    phase: SessionPhase,
    survey: SurveyKind,
    payload: &Value,
    ctx: SurveyContext<'_>,
) -> Result<MeasureDelta, SurveyError> {
    if survey.phase() != phase {
        return Err(SurveyError::WrongPhase { phase, survey });
    }
    let object = payload.as_object().ok_or(SurveyError::NotAnObject)?;
    match survey {
        SurveyKind::Demographics => {
            reject_unknown(object, &DEMOGRAPHIC_FIELDS)?;
            let age = integer_field(object, "age")?;
            if age > MAX_AGE {
                return Err(SurveyError::OutOfRange {
                    field: "age".into(),
                    value: age.to_string(),
                });
            }
            Ok(MeasureDelta::Demographics(Demographics {
                sex: text_field(object, "sex")?,
                age: age as u32,
                us_born: yes_no_field(object, "us_born")?,
                ethnicity: text_field(object, "ethnicity")?,
                education: text_field(object, "education")?,
            }))
        }
        SurveyKind::Donation => {
            reject_unknown(object, &DONATION_FIELDS)?;
            let organization = text_field(object, "choice")?;
            if !ctx.organizations.contains(&organization) {
                return Err(SurveyError::UnknownOrganization(organization));
            }
            let amount = amount_field(object, "amount")?;
            Ok(MeasureDelta::Donation { organization, amount })
        }
        SurveyKind::PostSurvey => {
            reject_unknown(object, &POST_SURVEY_FIELDS)?;
            let answers = object
                .get("likert")
                .ok_or_else(|| SurveyError::MissingField("likert".into()))?
                .as_object()
                .ok_or_else(|| SurveyError::InvalidValue {
                    field: "likert".into(),
                    detail: "expected an object of item scores".into(),
                })?;
            if let Some(unknown) = answers.keys().find(|k| !ctx.items.iter().any(|i| &i.item_id == *k)) {
                return Err(SurveyError::UnknownItem(unknown.clone()));
            }
            let mut likert = BTreeMap::new();
            for item in ctx.items {
                let field = format!("likert.{}", item.item_id);
                let value = answers
                    .get(&item.item_id)
                    .ok_or_else(|| SurveyError::MissingField(field.clone()))?;
                likert.insert(item.item_id.clone(), likert_score(item, &field, value)?);
            }
            let free_feedback = match object.get("feedback") {
                None | Some(Value::Null) => None,
                Some(Value::String(s)) if s.trim().is_empty() => None,
                Some(Value::String(s)) => Some(s.clone()),
                Some(_) => {
                    return Err(SurveyError::InvalidValue {
                        field: "feedback".into(),
                        detail: "expected text".into(),
                    })
                }
            };
            Ok(MeasureDelta::PostSurvey { likert, free_feedback })
        }
    }
}

fn reject_unknown(object: &Map<String, Value>, known: &[&str]) -> Result<(), SurveyError> {
    match object.keys().find(|k| !known.contains(&k.as_str())) {
        Some(k) => Err(SurveyError::UnknownField(k.clone())),
        None => Ok(()),
    }
}

fn required<'a>(object: &'a Map<String, Value>, field: &str) -> Result<&'a Value, SurveyError> {
    match object.get(field) {
        None | Some(Value::Null) => Err(SurveyError::MissingField(field.to_owned())),
        Some(v) => Ok(v),
    }
}

fn invalid(field: &str, detail: &str) -> SurveyError {
    SurveyError::InvalidValue {
        field: field.to_owned(),
        detail: detail.to_owned(),
    }
}

fn text_field(object: &Map<String, Value>, field: &str) -> Result<String, SurveyError> {
    match required(object, field)? {
        Value::String(s) if s.trim().is_empty() => Err(SurveyError::MissingField(field.to_owned())),
        Value::String(s) => Ok(s.trim().to_owned()),
        _ => Err(invalid(field, "expected text")),
    }
}

fn number_or_numeric_text(field: &str, value: &Value) -> Result<f64, SurveyError> {
    match value {
        Value::Number(n) => n.as_f64().ok_or_else(|| invalid(field, "not a number")),
        Value::String(s) => s.trim().parse::<f64>().map_err(|_| invalid(field, "not a number")),
        _ => Err(invalid(field, "expected a number")),
    }
}

fn integer_field(object: &Map<String, Value>, field: &str) -> Result<u64, SurveyError> {
    let value = required(object, field)?;
    let n = number_or_numeric_text(field, value)?;
    if n.fract() != 0.0 || !n.is_finite() {
        return Err(invalid(field, "expected a whole number"));
    }
    if n < 0.0 {
        return Err(SurveyError::OutOfRange {
            field: field.to_owned(),
            value: n.to_string(),
        });
    }
    Ok(n as u64)
}

fn yes_no_field(object: &Map<String, Value>, field: &str) -> Result<bool, SurveyError> {
    match required(object, field)? {
        Value::Bool(b) => Ok(*b),
        Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "yes" | "y" | "true" => Ok(true),
            "no" | "n" | "false" => Ok(false),
            _ => Err(invalid(field, "expected yes or no")),
        },
        _ => Err(invalid(field, "expected yes or no")),
    }
}

fn amount_field(object: &Map<String, Value>, field: &str) -> Result<f64, SurveyError> {
    let amount = number_or_numeric_text(field, required(object, field)?)?;
    if !amount.is_finite() {
        return Err(invalid(field, "expected a finite amount"));
    }
    if amount < 0.0 {
        return Err(SurveyError::OutOfRange {
            field: field.to_owned(),
            value: amount.to_string(),
        });
    }
    Ok(amount)
}

fn likert_score(item: &LikertItem, field: &str, value: &Value) -> Result<u8, SurveyError> {
    let Some(n) = value.as_f64() else {
        return Err(invalid(field, "expected an integer score"));
    };
    if n.fract() != 0.0 {
        return Err(invalid(field, "expected an integer score"));
    }
    if n < f64::from(item.scale_min) || n > f64::from(item.scale_max) {
        return Err(SurveyError::OutOfRange {
            field: field.to_owned(),
            value: value.to_string(),
        });
    }
    Ok(n as u8)
}
