//! Analysis-ready tables: one row per completed session.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde_json::{json, Map, Value};
use thiserror::Error;
use tracing::warn;

use super::log::{list_logs, read_complete_events, LogError};
use crate::analysis::{participant_scores, ParticipantScores};
use crate::model::{BotId, Session, SessionPhase};

/// Leading columns of every export, in order.
pub const BASE_COLUMNS: [&str; 8] = [
    "session_id",
    "sex",
    "age",
    "us_born",
    "ethnicity",
    "education",
    "donation_choice",
    "donation_amount",
];
pub const FEEDBACK_COLUMN: &str = "free_feedback";

pub fn relevance_column(bot: &BotId) -> String {
    format!("score_{bot}_relevance")
}

pub fn composite_column(bot: &BotId) -> String {
    format!("score_{bot}_composite")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Jsonl,
}

impl FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "jsonl" => Ok(ExportFormat::Jsonl),
            other => Err(format!("unknown export format `{other}`")),
        }
    }
}

impl fmt::Display for ExportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExportFormat::Csv => "csv",
            ExportFormat::Jsonl => "jsonl",
        })
    }
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: bad value `{value}`")]
    BadValue { row: usize, column: String, value: String },
}

/// Sessions replayed from a log directory, plus logs that could not be used.
#[derive(Debug, Default)]
pub struct LoadedSessions {
    pub sessions: Vec<Session>,
    pub skipped: Vec<(PathBuf, String)>,
}

/// Replays every log under `dir`, reading each up to its last complete
/// record. Unreadable sessions are skipped with a warning.
pub fn load_sessions(dir: &Path) -> Result<LoadedSessions, LogError> {
    let mut loaded = LoadedSessions::default();
    for path in list_logs(dir)? {
        let result = read_complete_events(&path).and_then(|(events, torn)| {
            if let Some(err) = torn {
                warn!(path = %path.display(), %err, "ignoring records after the last complete one");
            }
            Session::replay(&events).map_err(LogError::from)
        });
        match result {
            Ok(session) => loaded.sessions.push(session),
            Err(err) => {
                warn!(path = %path.display(), %err, "skipping unreadable session log");
                loaded.skipped.push((path, err.to_string()));
            }
        }
    }
    loaded.sessions.sort_by(|a, b| a.session_id.cmp(&b.session_id));
    Ok(loaded)
}

/// The export as typed cells; `rows[i][j]` belongs to `columns[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExportTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    /// Sessions not (yet) completed, or completed but unusable.
    pub excluded: usize,
}

pub fn build_table(sessions: &[Session]) -> ExportTable {
    let mut sorted: Vec<&Session> = sessions.iter().collect();
    sorted.sort_by(|a, b| a.session_id.cmp(&b.session_id));

    let mut completed = Vec::new();
    let mut excluded = 0;
    for session in sorted {
        if session.phase != SessionPhase::Completed {
            excluded += 1;
            continue;
        }
        match participant_scores(session) {
            Ok(scores) => completed.push((session, scores)),
            Err(err) => {
                warn!(session = %session.session_id, %err, "excluding session from export");
                excluded += 1;
            }
        }
    }

    let mut item_ids: Vec<String> = Vec::new();
    let mut bots: Vec<BotId> = Vec::new();
    for (session, _) in &completed {
        for item in &session.survey_items {
            if !item_ids.contains(&item.item_id) {
                item_ids.push(item.item_id.clone());
            }
        }
        for bot in session.roster.bot_ids() {
            if !bots.contains(&bot) {
                bots.push(bot);
            }
        }
    }

    let mut columns: Vec<String> = BASE_COLUMNS.iter().map(|c| c.to_string()).collect();
    columns.extend(item_ids.iter().cloned());
    for bot in &bots {
        columns.push(relevance_column(bot));
        columns.push(composite_column(bot));
    }
    columns.push(FEEDBACK_COLUMN.to_owned());

    let rows = completed
        .iter()
        .map(|(session, scores)| {
            let m = &session.measures;
            let d = m.demographics.as_ref();
            let mut row = vec![
                json!(session.session_id),
                json!(d.map(|d| &d.sex)),
                json!(d.map(|d| d.age)),
                json!(d.map(|d| if d.us_born { "Yes" } else { "No" })),
                json!(d.map(|d| &d.ethnicity)),
                json!(d.map(|d| &d.education)),
                json!(m.donation_choice),
                json!(m.donation_amount),
            ];
            row.extend(item_ids.iter().map(|id| json!(m.likert_items.get(id))));
            for bot in &bots {
                row.push(json!(scores.relevance.get(bot)));
                row.push(json!(scores.composite.get(bot)));
            }
            row.push(json!(m.free_feedback));
            row
        })
        .collect();

    ExportTable {
        columns,
        rows,
        excluded,
    }
}

fn csv_cell(value: &Value) -> String {
    match value {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl ExportTable {
    /// Comma separated, double-quote escaping, LF line endings.
    pub fn to_csv(&self) -> String {
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        writer.write_record(&self.columns).expect("writing to memory");
        for row in &self.rows {
            writer.write_record(row.iter().map(csv_cell)).expect("writing to memory");
        }
        let mut out = String::from_utf8(writer.into_inner().expect("flush to memory")).expect("utf-8 input");
        if self.excluded > 0 {
            out.push_str(&format!("# summary: completed={} excluded={}\n", self.rows.len(), self.excluded));
        }
        out
    }

    /// One object per row with keys in column order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            let object: Map<String, Value> = self.columns.iter().cloned().zip(row.iter().cloned()).collect();
            out.push_str(&ordered_json(&self.columns, &object));
            out.push('\n');
        }
        if self.excluded > 0 {
            out.push_str(
                &json!({"summary": {"completed": self.rows.len(), "excluded": self.excluded}}).to_string(),
            );
            out.push('\n');
        }
        out
    }

    pub fn render(&self, format: ExportFormat) -> String {
        match format {
            ExportFormat::Csv => self.to_csv(),
            ExportFormat::Jsonl => self.to_jsonl(),
        }
    }
}

fn ordered_json(columns: &[String], object: &Map<String, Value>) -> String {
    let fields: Vec<String> = columns
        .iter()
        .map(|c| format!("{}:{}", Value::String(c.clone()), object.get(c).unwrap_or(&Value::Null)))
        .collect();
    format!("{{{}}}", fields.join(","))
}

pub fn export_table(sessions: &[Session], format: ExportFormat) -> String {
    build_table(sessions).render(format)
}

/// Loads every log in `dir` and renders the export.
pub fn export_dir(dir: &Path, format: ExportFormat) -> Result<String, LogError> {
    Ok(export_table(&load_sessions(dir)?.sessions, format))
}

/// Reads the per-participant values back out of a CSV export. Returns the
/// bots found in the score columns (column order) and one record per row.
pub fn scores_from_csv(text: &str) -> Result<(Vec<BotId>, Vec<ParticipantScores>), ExportError> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ExportError::MissingColumn(name.to_owned()))
    };
    let session_col = column("session_id")?;
    let choice_col = column("donation_choice")?;
    let amount_col = column("donation_amount")?;

    let mut bots: Vec<BotId> = Vec::new();
    for header in headers.iter() {
        if let Some(bot) = header
            .strip_prefix("score_")
            .and_then(|h| h.strip_suffix("_relevance").or_else(|| h.strip_suffix("_composite")))
        {
            let bot = BotId::from(bot);
            if !bots.contains(&bot) {
                bots.push(bot);
            }
        }
    }

    let mut records = Vec::new();
    for (row_index, record) in reader.records().enumerate() {
        let record = record?;
        let cell = |i: usize| record.get(i).unwrap_or_default();
        let parse = |name: &str, value: &str| -> Result<Option<f64>, ExportError> {
            if value.is_empty() {
                return Ok(None);
            }
            value.parse::<f64>().map(Some).map_err(|_| ExportError::BadValue {
                row: row_index + 1,
                column: name.to_owned(),
                value: value.to_owned(),
            })
        };
        let mut scores = ParticipantScores {
            session_id: cell(session_col).to_owned(),
            donation_choice: Some(cell(choice_col).to_owned()).filter(|c| !c.is_empty()),
            donation_amount: parse("donation_amount", cell(amount_col))?,
            relevance: Default::default(),
            composite: Default::default(),
        };
        for bot in &bots {
            for (name, target) in [
                (relevance_column(bot), &mut scores.relevance),
                (composite_column(bot), &mut scores.composite),
            ] {
                if let Some(i) = headers.iter().position(|h| h == name) {
                    if let Some(v) = parse(&name, cell(i))? {
                        target.insert(bot.clone(), v);
                    }
                }
            }
        }
        records.push(scores);
    }
    Ok((bots, records))
}
