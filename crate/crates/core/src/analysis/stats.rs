//! Descriptive statistics, generic over the floating-point scalar.

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("empty input")]
    EmptyInput,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("participant `{participant}` is missing item `{item}`")]
    MissingItem { participant: String, item: String },
    #[error("unknown organization `{0}`")]
    UnknownOrganization(String),
    #[error("negative donation amount")]
    NegativeAmount,
}

/// Denominator of the variance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdEstimator {
    /// n - 1
    #[default]
    Sample,
    /// n
    Population,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StatSummary<T> {
    pub n: usize,
    pub mean: T,
    /// Absent when the estimator is undefined (sample SD with n < 2).
    pub sd: Option<T>,
    pub min: T,
    pub max: T,
}

fn cast<T: Float>(n: usize) -> T {
    T::from(n).expect("count representable as float")
}

/// Mean and sample standard deviation.
pub fn mean_sd<T: Float>(values: &[T]) -> Result<StatSummary<T>, StatsError> {
    mean_sd_with(values, SdEstimator::Sample)
}

/// Single pass (Welford) mean and standard deviation.
pub fn mean_sd_with<T: Float>(values: &[T], estimator: SdEstimator) -> Result<StatSummary<T>, StatsError> {
    let (&first, _) = values.split_first().ok_or(StatsError::EmptyInput)?;
    let mut mean = T::zero();
    let mut m2 = T::zero();
    let (mut min, mut max) = (first, first);
    for (i, &x) in values.iter().enumerate() {
        if !x.is_finite() {
            return Err(StatsError::NonFinite);
        }
        let delta = x - mean;
        mean = mean + delta / cast(i + 1);
        m2 = m2 + delta * (x - mean);
        min = min.min(x);
        max = max.max(x);
    }
    let n = values.len();
    let denominator = match estimator {
        SdEstimator::Sample if n < 2 => None,
        SdEstimator::Sample => Some(n - 1),
        SdEstimator::Population => Some(n),
    };
    let sd = denominator.map(|d| (m2.max(T::zero()) / cast(d)).sqrt());
    Ok(StatSummary { n, mean, sd, min, max })
}

/// The three message-effectiveness items rated per bot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectivenessItem {
    Convincing,
    Persuasive,
    Compelling,
}

impl EffectivenessItem {
    pub fn as_str(self) -> &'static str {
        match self {
            EffectivenessItem::Convincing => "convincing",
            EffectivenessItem::Persuasive => "persuasive",
            EffectivenessItem::Compelling => "compelling",
        }
    }
}

/// One participant's effectiveness ratings of one bot.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectivenessScores<T> {
    pub participant: String,
    pub convincing: Option<T>,
    pub persuasive: Option<T>,
    pub compelling: Option<T>,
}

impl<T: Float> EffectivenessScores<T> {
    /// Unweighted mean of the three items.
    pub fn composite(&self) -> Result<T, StatsError> {
        let get = |value: Option<T>, item: EffectivenessItem| {
            value.ok_or_else(|| StatsError::MissingItem {
                participant: self.participant.clone(),
                item: item.as_str().to_owned(),
            })
        };
        let sum = get(self.convincing, EffectivenessItem::Convincing)?
            + get(self.persuasive, EffectivenessItem::Persuasive)?
            + get(self.compelling, EffectivenessItem::Compelling)?;
        Ok(sum / cast(3))
    }
}

/// Per-participant composites and their summary.
pub fn composite_effectiveness<T: Float>(
    participants: &[EffectivenessScores<T>],
    estimator: SdEstimator,
) -> Result<(Vec<T>, StatSummary<T>), StatsError> {
    let composites = participants
        .iter()
        .map(EffectivenessScores::composite)
        .collect::<Result<Vec<T>, _>>()?;
    let summary = mean_sd_with(&composites, estimator)?;
    Ok((composites, summary))
}

/// Share of participants choosing each organization, in `organizations`
/// order (zero shares included).
pub fn preference_proportions<T: Float, S: AsRef<str>, O: AsRef<str>>(
    choices: &[S],
    organizations: &[O],
) -> Result<Vec<(String, usize, T)>, StatsError> {
    if choices.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let mut counts = vec![0usize; organizations.len()];
    for choice in choices {
        let choice = choice.as_ref();
        let index = organizations
            .iter()
            .position(|o| o.as_ref() == choice)
            .ok_or_else(|| StatsError::UnknownOrganization(choice.to_owned()))?;
        counts[index] += 1;
    }
    let total: T = cast(choices.len());
    Ok(organizations
        .iter()
        .zip(counts)
        .map(|(org, count)| (org.as_ref().to_owned(), count, cast::<T>(count) / total))
        .collect())
}

/// `(min, max)` of a group, or `None` for an empty group.
pub fn donation_range<T: Float>(amounts: &[T]) -> Result<Option<(T, T)>, StatsError> {
    let mut range: Option<(T, T)> = None;
    for &amount in amounts {
        if !amount.is_finite() {
            return Err(StatsError::NonFinite);
        }
        if amount < T::zero() {
            return Err(StatsError::NegativeAmount);
        }
        range = Some(match range {
            None => (amount, amount),
            Some((lo, hi)) => (lo.min(amount), hi.max(amount)),
        });
    }
    Ok(range)
}
