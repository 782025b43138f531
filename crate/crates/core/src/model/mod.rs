//! Experiment entities and the session state machine.

mod event;
mod ids;
mod measures;
mod phase;
mod recorder;
mod roster;
mod session;
mod turn;

pub use event::{AdvanceCause, EventPayload, SessionEvent, SessionSettings, SuppressionReason, EVENT_SCHEMA_VERSION};
pub use ids::{BotId, SessionId};
pub use measures::{Demographics, MeasureDelta, MeasureSet};
pub use phase::{transition, IllegalTransition, PhaseTrigger, SessionPhase};
pub use recorder::{RecordError, SessionRecorder};
pub use roster::{BotPersona, Roster, RosterError};
pub use session::{ApplyError, PendingTurn, ReplayError, Session};
pub use turn::{derive_pattern, BlankMessage, ChatMessage, PatternError, Speaker, Turn, TurnPattern};
