//! Core of the multi-chatbot persuasion experiment: session model and
//! event log, prompt construction, completion backends, turn orchestration,
//! export and survey statistics.

pub mod analysis;
pub mod backend;
pub mod clock;
pub mod model;
pub mod orchestrator;
pub mod persistence;
pub mod prompt;

pub use clock::{Clock, ManualClock, SystemClock};
pub use orchestrator::{Orchestrator, OrchestratorConfig};

/// Scalar used by the statistics layer unless a caller picks another.
pub type Scalar = f64;
/// Mean/SD summary at the default precision.
pub type Summary = analysis::StatSummary<Scalar>;
/// Single-precision summary, for callers that keep scores as `f32`.
pub type Summary32 = analysis::StatSummary<f32>;
