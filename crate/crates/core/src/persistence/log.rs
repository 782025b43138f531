//! Line-delimited JSON event log, one file per session.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::model::{EventPayload, ReplayError, Session, SessionEvent, SessionId, EVENT_SCHEMA_VERSION};

#[derive(Debug, Error)]
pub enum LogError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("storage full")]
    StorageFull,
    #[error("sequence gap: expected {expected}, got {found}")]
    SequenceGap { expected: u64, found: u64 },
    #[error("record for session `{found}` in log of `{expected}`")]
    SessionMismatch { expected: SessionId, found: SessionId },
    #[error("corrupt record at line {line}: {detail}")]
    CorruptRecord { line: usize, detail: String },
    #[error("unknown schema version {found} at line {line}")]
    UnknownSchemaVersion { line: usize, found: u64 },
    #[error("unknown event kind `{kind}` at line {line}")]
    UnknownEventKind { line: usize, kind: String },
    #[error("no such session `{0}`")]
    NoSuchSession(SessionId),
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

fn io_error(err: io::Error) -> LogError {
    if err.kind() == io::ErrorKind::StorageFull {
        LogError::StorageFull
    } else {
        LogError::Io(err)
    }
}

/// Destination for freshly recorded events.
pub trait EventSink: Send {
    fn append(&mut self, event: &SessionEvent) -> Result<(), LogError>;
}

/// Discards events; the recorder still keeps them in memory.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl EventSink for NullSink {
    fn append(&mut self, _event: &SessionEvent) -> Result<(), LogError> {
        Ok(())
    }
}

/// Append-only log file for one session.
#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    session_id: SessionId,
    file: File,
    last_sequence_no: u64,
    fsync: bool,
}

impl EventLog {
    /// `<dir>/sessions/<session_id>.log`
    pub fn session_path(dir: &Path, session_id: &SessionId) -> PathBuf {
        dir.join("sessions").join(format!("{session_id}.log"))
    }

    /// Creates a new, empty log. Fails if one already exists.
    pub fn create(dir: &Path, session_id: &SessionId, fsync: bool) -> Result<Self, LogError> {
        let path = Self::session_path(dir, session_id);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_error)?;
        }
        let file = OpenOptions::new()
            .create_new(true)
            .append(true)
            .open(&path)
            .map_err(io_error)?;
        Ok(Self {
            path,
            session_id: session_id.clone(),
            file,
            last_sequence_no: 0,
            fsync,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn last_sequence_no(&self) -> u64 {
        self.last_sequence_no
    }

    pub fn append_event(&mut self, event: &SessionEvent) -> Result<u64, LogError> {
        if event.session_id != self.session_id {
            return Err(LogError::SessionMismatch {
                expected: self.session_id.clone(),
                found: event.session_id.clone(),
            });
        }
        let expected = self.last_sequence_no + 1;
        if event.sequence_no != expected {
            return Err(LogError::SequenceGap {
                expected,
                found: event.sequence_no,
            });
        }
        let mut line = serde_json::to_string(event).map_err(|e| LogError::Io(io::Error::other(e)))?;
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(io_error)?;
        if self.fsync {
            self.file.sync_data().map_err(io_error)?;
        }
        self.last_sequence_no = expected;
        Ok(expected)
    }
}

impl EventSink for EventLog {
    fn append(&mut self, event: &SessionEvent) -> Result<(), LogError> {
        self.append_event(event).map(|_| ())
    }
}

fn parse_record(line_no: usize, line: &str) -> Result<SessionEvent, LogError> {
    let corrupt = |detail: String| LogError::CorruptRecord { line: line_no, detail };
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| corrupt(e.to_string()))?;
    let schema = value.get("schema").and_then(|v| v.as_u64()).ok_or_else(|| corrupt("missing schema".into()))?;
    if schema != u64::from(EVENT_SCHEMA_VERSION) {
        return Err(LogError::UnknownSchemaVersion {
            line: line_no,
            found: schema,
        });
    }
    let kind = value.get("kind").and_then(|v| v.as_str()).unwrap_or_default();
    if !EventPayload::KINDS.contains(&kind) {
        return Err(LogError::UnknownEventKind {
            line: line_no,
            kind: kind.to_owned(),
        });
    }
    serde_json::from_value(value).map_err(|e| corrupt(e.to_string()))
}

/// Parses log text, returning the events read before the first bad record
/// together with that record's error. A final line without a newline is
/// accepted only if it parses.
pub fn parse_complete_events(text: &str) -> (Vec<SessionEvent>, Option<LogError>) {
    let mut events = Vec::new();
    for (i, line) in text.split_terminator('\n').enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_record(i + 1, line) {
            Ok(event) => events.push(event),
            Err(err) => return (events, Some(err)),
        }
    }
    (events, None)
}

pub fn parse_events(text: &str) -> Result<Vec<SessionEvent>, LogError> {
    match parse_complete_events(text) {
        (events, None) => Ok(events),
        (_, Some(err)) => Err(err),
    }
}

pub fn read_events(path: &Path) -> Result<Vec<SessionEvent>, LogError> {
    parse_events(&fs::read_to_string(path)?)
}

/// Reads up to the last complete record. Used by readers that may race a
/// writer or face a torn final write.
pub fn read_complete_events(path: &Path) -> Result<(Vec<SessionEvent>, Option<LogError>), LogError> {
    Ok(parse_complete_events(&fs::read_to_string(path)?))
}

/// Rebuilds `session_id` from a list of records.
pub fn replay(events: &[SessionEvent], session_id: &SessionId) -> Result<Session, LogError> {
    let own: Vec<SessionEvent> = events.iter().filter(|e| &e.session_id == session_id).cloned().collect();
    if own.is_empty() {
        return Err(LogError::NoSuchSession(session_id.clone()));
    }
    Ok(Session::replay(&own)?)
}

pub fn replay_file(path: &Path, session_id: &SessionId) -> Result<Session, LogError> {
    replay(&read_events(path)?, session_id)
}

/// Every `*.log` under `<dir>/sessions/`, or directly under `dir` when it
/// has no `sessions` subdirectory. Sorted by file name.
pub fn list_logs(dir: &Path) -> Result<Vec<PathBuf>, LogError> {
    let sessions = dir.join("sessions");
    let root = if sessions.is_dir() { sessions } else { dir.to_path_buf() };
    let mut paths: Vec<PathBuf> = fs::read_dir(&root)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "log"))
        .collect();
    paths.sort();
    Ok(paths)
}
