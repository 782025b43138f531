use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use serde_json::json;

use super::stats::{
    donation_range, mean_sd_with, preference_proportions, EffectivenessScores, SdEstimator, StatSummary, StatsError,
};
use super::survey::Construct;
use crate::model::{BotId, Session};

/// Derived per-participant values every report is computed from. Both the
/// log route and the exported-table route produce these.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParticipantScores {
    pub session_id: String,
    pub donation_choice: Option<String>,
    pub donation_amount: Option<f64>,
    /// Mean of the bot's relevance items.
    pub relevance: BTreeMap<BotId, f64>,
    /// Mean of the bot's convincing/persuasive/compelling items.
    pub composite: BTreeMap<BotId, f64>,
}

pub fn participant_scores(session: &Session) -> Result<ParticipantScores, StatsError> {
    let answers = &session.measures.likert_items;
    let score = |item_id: &str| answers.get(item_id).map(|&v| f64::from(v));
    let mut relevance = BTreeMap::new();
    let mut composite = BTreeMap::new();

    for bot in session.roster.bot_ids() {
        let items: Vec<_> = session.survey_items.iter().filter(|i| i.bot_id == bot).collect();

        let relevance_scores: Vec<f64> = items
            .iter()
            .filter(|i| i.construct == Construct::Relevance)
            .map(|i| {
                score(&i.item_id).ok_or_else(|| StatsError::MissingItem {
                    participant: session.session_id.to_string(),
                    item: i.item_id.clone(),
                })
            })
            .collect::<Result<_, _>>()?;
        if !relevance_scores.is_empty() {
            relevance.insert(bot.clone(), relevance_scores.iter().sum::<f64>() / relevance_scores.len() as f64);
        }

        let find = |construct: Construct| {
            items
                .iter()
                .find(|i| i.construct == construct)
                .and_then(|i| score(&i.item_id))
        };
        let rated = items.iter().any(|i| {
            matches!(
                i.construct,
                Construct::Convincing | Construct::Persuasive | Construct::Compelling
            )
        });
        if rated {
            let scores = EffectivenessScores {
                participant: session.session_id.to_string(),
                convincing: find(Construct::Convincing),
                persuasive: find(Construct::Persuasive),
                compelling: find(Construct::Compelling),
            };
            composite.insert(bot, scores.composite()?);
        }
    }

    Ok(ParticipantScores {
        session_id: session.session_id.to_string(),
        donation_choice: session.measures.donation_choice.clone(),
        donation_amount: session.measures.donation_amount,
        relevance,
        composite,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BotReport {
    pub bot_id: BotId,
    pub relevance: Option<StatSummary<f64>>,
    pub composite: Option<StatSummary<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PreferenceShare {
    pub organization: String,
    pub count: usize,
    pub proportion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DonationRange {
    pub organization: String,
    pub range: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub participants: usize,
    pub sd_estimator: SdEstimator,
    pub bots: Vec<BotReport>,
    pub preferences: Vec<PreferenceShare>,
    pub donation_ranges: Vec<DonationRange>,
}

fn summarize(values: Vec<f64>, estimator: SdEstimator) -> Result<Option<StatSummary<f64>>, StatsError> {
    if values.is_empty() {
        return Ok(None);
    }
    mean_sd_with(&values, estimator).map(Some)
}

pub fn analyze(
    participants: &[ParticipantScores],
    bots: &[BotId],
    organizations: &[String],
    estimator: SdEstimator,
) -> Result<AnalysisReport, StatsError> {
    let bot_reports = bots
        .iter()
        .map(|bot| {
            let relevance = participants.iter().filter_map(|p| p.relevance.get(bot).copied()).collect();
            let composite = participants.iter().filter_map(|p| p.composite.get(bot).copied()).collect();
            Ok(BotReport {
                bot_id: bot.clone(),
                relevance: summarize(relevance, estimator)?,
                composite: summarize(composite, estimator)?,
            })
        })
        .collect::<Result<Vec<_>, StatsError>>()?;

    let choices: Vec<&str> = participants.iter().filter_map(|p| p.donation_choice.as_deref()).collect();
    let preferences = match preference_proportions::<f64, _, _>(&choices, organizations) {
        Ok(shares) => shares
            .into_iter()
            .map(|(organization, count, proportion)| PreferenceShare {
                organization,
                count,
                proportion,
            })
            .collect(),
        Err(StatsError::EmptyInput) => Vec::new(),
        Err(err) => return Err(err),
    };

    let donation_ranges = organizations
        .iter()
        .map(|org| {
            let amounts: Vec<f64> = participants
                .iter()
                .filter(|p| p.donation_choice.as_deref() == Some(org.as_str()))
                .filter_map(|p| p.donation_amount)
                .collect();
            Ok(DonationRange {
                organization: org.clone(),
                range: donation_range(&amounts)?,
            })
        })
        .collect::<Result<Vec<_>, StatsError>>()?;

    Ok(AnalysisReport {
        participants: participants.len(),
        sd_estimator: estimator,
        bots: bot_reports,
        preferences,
        donation_ranges,
    })
}

fn fmt_summary(summary: &Option<StatSummary<f64>>) -> String {
    match summary {
        None => "no data".to_owned(),
        Some(s) => {
            let sd = s.sd.map_or_else(|| "n/a".to_owned(), |sd| format!("{sd:.2}"));
            format!("M = {:.2}, SD = {sd} (n = {}, range {:.2}-{:.2})", s.mean, s.n, s.min, s.max)
        }
    }
}

impl AnalysisReport {
    /// Human-readable report, rounded to two decimals.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let estimator = match self.sd_estimator {
            SdEstimator::Sample => "sample",
            SdEstimator::Population => "population",
        };
        let _ = writeln!(out, "participants: {} (SD estimator: {estimator})", self.participants);
        let _ = writeln!(out, "\npersonal relevance");
        for bot in &self.bots {
            let _ = writeln!(out, "  {}: {}", bot.bot_id, fmt_summary(&bot.relevance));
        }
        let _ = writeln!(out, "\ncomposite effectiveness (convincing, persuasive, compelling)");
        for bot in &self.bots {
            let _ = writeln!(out, "  {}: {}", bot.bot_id, fmt_summary(&bot.composite));
        }
        let _ = writeln!(out, "\ndonation preference");
        for share in &self.preferences {
            let _ = writeln!(
                out,
                "  {}: {:.2} ({} of {})",
                share.organization, share.proportion, share.count, self.participants
            );
        }
        let _ = writeln!(out, "\ndonation range");
        for range in &self.donation_ranges {
            match range.range {
                Some((lo, hi)) => {
                    let _ = writeln!(out, "  {}: {lo:.2} to {hi:.2}", range.organization);
                }
                None => {
                    let _ = writeln!(out, "  {}: no donors", range.organization);
                }
            }
        }
        out
    }

    /// One JSON object per line, full precision.
    pub fn to_jsonl(&self) -> String {
        let mut lines = vec![json!({"record": "participants", "n": self.participants, "sd_estimator": self.sd_estimator})];
        for (measure, pick) in [
            ("relevance", (|b: &BotReport| b.relevance) as fn(&BotReport) -> Option<StatSummary<f64>>),
            ("composite", |b: &BotReport| b.composite),
        ] {
            for bot in &self.bots {
                let mut record = json!({"record": measure, "bot_id": bot.bot_id});
                if let Some(s) = pick(bot) {
                    record["n"] = json!(s.n);
                    record["mean"] = json!(s.mean);
                    record["sd"] = json!(s.sd);
                    record["min"] = json!(s.min);
                    record["max"] = json!(s.max);
                }
                lines.push(record);
            }
        }
        for share in &self.preferences {
            lines.push(json!({
                "record": "preference",
                "organization": share.organization,
                "count": share.count,
                "proportion": share.proportion,
            }));
        }
        for range in &self.donation_ranges {
            lines.push(json!({
                "record": "donation_range",
                "organization": range.organization,
                "min": range.range.map(|r| r.0),
                "max": range.range.map(|r| r.1),
            }));
        }
        lines.iter().map(|l| format!("{l}\n")).collect()
    }
}

/// Bots and organizations of the given sessions in first-seen roster order.
pub fn roster_union<'a>(sessions: impl IntoIterator<Item = &'a Session>) -> (Vec<BotId>, Vec<String>) {
    let mut bots = Vec::new();
    let mut orgs = Vec::new();
    for session in sessions {
        for persona in session.roster.personas() {
            if !bots.contains(&persona.bot_id) {
                bots.push(persona.bot_id.clone());
            }
            if !orgs.contains(&persona.organization_name) {
                orgs.push(persona.organization_name.clone());
            }
        }
    }
    (bots, orgs)
}

/// Analyzes the completed sessions among `sessions`.
pub fn analyze_sessions(sessions: &[Session], estimator: SdEstimator) -> Result<AnalysisReport, StatsError> {
    let completed: Vec<&Session> = sessions
        .iter()
        .filter(|s| s.phase == crate::model::SessionPhase::Completed)
        .collect();
    let (bots, orgs) = roster_union(completed.iter().copied());
    let participants = completed
        .iter()
        .map(|s| participant_scores(s))
        .collect::<Result<Vec<_>, _>>()?;
    analyze(&participants, &bots, &orgs, estimator)
}
