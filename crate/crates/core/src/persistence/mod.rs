//! Append-only session logs and tabular exports.

mod export;
mod log;

pub use export::{
    build_table, composite_column, export_dir, export_table, load_sessions, relevance_column, scores_from_csv,
    ExportError, ExportFormat, ExportTable, LoadedSessions, BASE_COLUMNS, FEEDBACK_COLUMN,
};
pub use log::{
    list_logs, parse_complete_events, parse_events, read_complete_events, read_events, replay, replay_file, EventLog,
    EventSink, LogError, NullSink,
};
