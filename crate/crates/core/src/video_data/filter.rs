use serde::{Deserialize, Serialize};

use super::DataError;

/// Scaling factor used when screening candidate source datasets.
pub const DEFAULT_THETA: f64 = 0.4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    #[default]
    Natural,
    Two,
    Ten,
}

impl LogBase {
    pub fn log(self, x: f64) -> f64 {
        match self {
            LogBase::Natural => x.ln(),
            LogBase::Two => x.log2(),
            LogBase::Ten => x.log10(),
        }
    }
}

impl std::str::FromStr for LogBase {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "e" | "ln" | "natural" => Ok(LogBase::Natural),
            "2" => Ok(LogBase::Two),
            "10" => Ok(LogBase::Ten),
            other => Err(DataError::Validation(format!("unknown log base {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub accuracy: f64,
    pub num_classes: usize,
    pub theta: f64,
    pub log_base: LogBase,
    pub threshold: f64,
    pub accepted: bool,
}

/// A candidate dataset is accepted when a baseline classifier's top-1
/// accuracy reaches `1 - theta * log(num_classes)`.
pub fn evaluate_dataset_acceptance(
    accuracy: f64,
    num_classes: usize,
    theta: f64,
    log_base: LogBase,
) -> Result<FilterDecision, DataError> {
    if !accuracy.is_finite() || !theta.is_finite() {
        return Err(DataError::Validation("accuracy and theta must be finite".into()));
    }
    if !(0.0..=1.0).contains(&accuracy) {
        return Err(DataError::Validation(format!("accuracy {accuracy} outside [0, 1]")));
    }
    if num_classes == 0 {
        return Err(DataError::Validation("num_classes must be at least 1".into()));
    }
    if theta <= 0.0 {
        return Err(DataError::Validation(format!("theta must be positive, got {theta}")));
    }
    let threshold = 1.0 - theta * log_base.log(num_classes as f64);
    Ok(FilterDecision {
        accuracy,
        num_classes,
        theta,
        log_base,
        threshold,
        accepted: accuracy >= threshold,
    })
}
