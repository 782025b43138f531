//! Survey validation and descriptive statistics.

mod report;
mod stats;
mod survey;

pub use report::{analyze, analyze_sessions, participant_scores, roster_union, AnalysisReport, BotReport, DonationRange, ParticipantScores, PreferenceShare};
pub use stats::{
    composite_effectiveness, donation_range, mean_sd, mean_sd_with, preference_proportions, EffectivenessItem,
    EffectivenessScores, SdEstimator, StatSummary, StatsError,
};
pub use survey::{validate_submission, Construct, LikertItem, SurveyContext, SurveyError, SurveyKind};
