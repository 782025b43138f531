use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Where a session stands in the pre-survey, chatroom, post-survey flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionPhase {
    Created,
    PreSurvey,
    ChatIntro,
    ChatActive,
    DonationChoice,
    PostSurvey,
    Completed,
    Aborted,
}

impl SessionPhase {
    pub const ALL: [SessionPhase; 8] = [
        SessionPhase::Created,
        SessionPhase::PreSurvey,
        SessionPhase::ChatIntro,
        SessionPhase::ChatActive,
        SessionPhase::DonationChoice,
        SessionPhase::PostSurvey,
        SessionPhase::Completed,
        SessionPhase::Aborted,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, SessionPhase::Completed | SessionPhase::Aborted)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SessionPhase::Created => "created",
            SessionPhase::PreSurvey => "pre_survey",
            SessionPhase::ChatIntro => "chat_intro",
            SessionPhase::ChatActive => "chat_active",
            SessionPhase::DonationChoice => "donation_choice",
            SessionPhase::PostSurvey => "post_survey",
            SessionPhase::Completed => "completed",
            SessionPhase::Aborted => "aborted",
        }
    }
}

impl fmt::Display for SessionPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Everything that can be offered to the state machine: the session event
/// kinds, with survey submissions and turn commits split by sub-kind, plus
/// the causes recorded on `PhaseAdvanced`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseTrigger {
    SessionCreated,
    DemographicsSubmitted,
    DonationSubmitted,
    PostSurveySubmitted,
    UserMessagePosted,
    BotResponseRecorded,
    BotResponseSuppressed,
    BackendError,
    IntroCommitted,
    TurnCommitted,
    TimerExpired,
    MaxTurnsReached,
    ParticipantNext,
    Abort,
}

impl PhaseTrigger {
    pub const ALL: [PhaseTrigger; 14] = [
        PhaseTrigger::SessionCreated,
        PhaseTrigger::DemographicsSubmitted,
        PhaseTrigger::DonationSubmitted,
        PhaseTrigger::PostSurveySubmitted,
        PhaseTrigger::UserMessagePosted,
        PhaseTrigger::BotResponseRecorded,
        PhaseTrigger::BotResponseSuppressed,
        PhaseTrigger::BackendError,
        PhaseTrigger::IntroCommitted,
        PhaseTrigger::TurnCommitted,
        PhaseTrigger::TimerExpired,
        PhaseTrigger::MaxTurnsReached,
        PhaseTrigger::ParticipantNext,
        PhaseTrigger::Abort,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("`{trigger:?}` is not allowed in phase `{phase}`")]
pub struct IllegalTransition {
    pub phase: SessionPhase,
    pub trigger: PhaseTrigger,
}

/// The session edge table.
///
/// | from           | trigger                                   | to             |
/// |----------------|-------------------------------------------|----------------|
/// | Created        | SessionCreated                            | PreSurvey      |
/// | PreSurvey      | DemographicsSubmitted                     | ChatIntro      |
/// | ChatIntro      | BotResponseRecorded/Suppressed, BackendError | ChatIntro   |
/// | ChatIntro      | IntroCommitted                            | ChatActive     |
/// | ChatActive     | UserMessagePosted, BotResponse*, BackendError, TurnCommitted | ChatActive |
/// | ChatActive     | TimerExpired, MaxTurnsReached, ParticipantNext | DonationChoice |
/// | DonationChoice | DonationSubmitted                         | PostSurvey     |
/// | PostSurvey     | PostSurveySubmitted                       | Completed      |
/// | any non-terminal | Abort                                   | Aborted        |
pub fn transition(phase: SessionPhase, trigger: PhaseTrigger) -> Result<SessionPhase, IllegalTransition> {
    use PhaseTrigger as T;
    use SessionPhase as P;

    let next = match (phase, trigger) {
        (P::Completed | P::Aborted, _) => None,
        (_, T::Abort) => Some(P::Aborted),
        (P::Created, T::SessionCreated) => Some(P::PreSurvey),
        (P::PreSurvey, T::DemographicsSubmitted) => Some(P::ChatIntro),
        (P::ChatIntro, T::BotResponseRecorded | T::BotResponseSuppressed | T::BackendError) => Some(P::ChatIntro),
        (P::ChatIntro, T::IntroCommitted) => Some(P::ChatActive),
        (
            P::ChatActive,
            T::UserMessagePosted | T::BotResponseRecorded | T::BotResponseSuppressed | T::BackendError | T::TurnCommitted,
        ) => Some(P::ChatActive),
        (P::ChatActive, T::TimerExpired | T::MaxTurnsReached | T::ParticipantNext) => Some(P::DonationChoice),
        (P::DonationChoice, T::DonationSubmitted) => Some(P::PostSurvey),
        (P::PostSurvey, T::PostSurveySubmitted) => Some(P::Completed),
        _ => None,
    };
    next.ok_or(IllegalTransition { phase, trigger })
}
