use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::PhaseTrigger;

/// Pre-survey answers. Categorical fields are kept verbatim as entered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demographics {
    pub sex: String,
    pub age: u32,
    pub us_born: bool,
    pub ethnicity: String,
    pub education: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MeasureSet {
    pub demographics: Option<Demographics>,
    pub donation_choice: Option<String>,
    pub donation_amount: Option<f64>,
    pub likert_items: BTreeMap<String, u8>,
    pub free_feedback: Option<String>,
}

/// A validated survey submission, applied to a [`MeasureSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "survey", rename_all = "snake_case")]
pub enum MeasureDelta {
    Demographics(Demographics),
    Donation {
        organization: String,
        amount: f64,
    },
    PostSurvey {
        likert: BTreeMap<String, u8>,
        free_feedback: Option<String>,
    },
}

impl MeasureDelta {
    pub fn trigger(&self) -> PhaseTrigger {
        match self {
            MeasureDelta::Demographics(_) => PhaseTrigger::DemographicsSubmitted,
            MeasureDelta::Donation { .. } => PhaseTrigger::DonationSubmitted,
            MeasureDelta::PostSurvey { .. } => PhaseTrigger::PostSurveySubmitted,
        }
    }

    pub(crate) fn apply_to(&self, measures: &mut MeasureSet) {
        match self {
            MeasureDelta::Demographics(d) => measures.demographics = Some(d.clone()),
            MeasureDelta::Donation { organization, amount } => {
                measures.donation_choice = Some(organization.clone());
                measures.donation_amount = Some(*amount);
            }
            MeasureDelta::PostSurvey { likert, free_feedback } => {
                measures.likert_items.extend(likert.iter().map(|(k, v)| (k.clone(), *v)));
                measures.free_feedback = free_feedback.clone();
            }
        }
    }
}
