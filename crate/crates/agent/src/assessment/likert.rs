use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::meteor::{meteor_detail, MeteorParams, MeteorScore};
use super::AssessmentError;
use crate::diagnosis::DiagnosisReport;

pub const AMATEUR_WEIGHT: f64 = 0.2;
pub const EXPERT_WEIGHT: f64 = 0.6;
pub const METEOR_WEIGHT: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Amateur,
    Expert,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Amateur => "amateur",
            Role::Expert => "expert",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = AssessmentError;

    /// "physician" is accepted for `Expert`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "amateur" => Ok(Role::Amateur),
            "expert" | "physician" => Ok(Role::Expert),
            other => Err(AssessmentError::Validation(format!("unknown rater role {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grade {
    pub rater_id: String,
    pub role: Role,
    pub score: u8,
}

impl Grade {
    pub fn new(rater_id: impl Into<String>, role: Role, score: u8) -> Result<Self, AssessmentError> {
        let g = Self {
            rater_id: rater_id.into(),
            role,
            score,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), AssessmentError> {
        if self.rater_id.trim().is_empty() {
            return Err(AssessmentError::Validation("rater_id must not be empty".into()));
        }
        if !(1..=5).contains(&self.score) {
            return Err(AssessmentError::Validation(format!(
                "score {} from {} is outside 1..=5",
                self.score, self.rater_id
            )));
        }
        Ok(())
    }
}

fn check_grades(grades: &[Grade]) -> Result<(), AssessmentError> {
    for (k, g) in grades.iter().enumerate() {
        g.validate()?;
        if grades[..k].iter().any(|o| o.rater_id == g.rater_id) {
            return Err(AssessmentError::Validation(format!("rater {} graded twice", g.rater_id)));
        }
    }
    Ok(())
}

/// Mean Likert score per role, `(S_amateur, S_expert)`.
pub fn aggregate_likert(grades: &[Grade]) -> Result<(f64, f64), AssessmentError> {
    check_grades(grades)?;
    let mean = |role: Role| {
        let s: Vec<f64> = grades.iter().filter(|g| g.role == role).map(|g| g.score as f64).collect();
        if s.is_empty() {
            Err(AssessmentError::MissingRole(role))
        } else {
            Ok(s.iter().sum::<f64>() / s.len() as f64)
        }
    };
    Ok((mean(Role::Amateur)?, mean(Role::Expert)?))
}

/// `0.2 * S_amateur + 0.6 * S_expert + 0.2 * 5 * M` on a 0..5 scale.
pub fn final_score(s_amateur: f64, s_expert: f64, meteor: f64) -> Result<f64, AssessmentError> {
    for (name, v, lo, hi) in [
        ("S_amateur", s_amateur, 1.0, 5.0),
        ("S_expert", s_expert, 1.0, 5.0),
        ("meteor", meteor, 0.0, 1.0),
    ] {
        if !(v.is_finite() && (lo..=hi).contains(&v)) {
            return Err(AssessmentError::OutOfRange { name, value: v, lo, hi });
        }
    }
    Ok(AMATEUR_WEIGHT * s_amateur + EXPERT_WEIGHT * s_expert + METEOR_WEIGHT * 5.0 * meteor)
}

/// Two-decimal rendering, rounded half away from zero.
pub fn format_score(v: f64) -> String {
    format!("{:.2}", (v * 100.0).round() / 100.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradeSheet {
    pub grades: Vec<Grade>,
    pub meteor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    #[serde(rename = "S_amateur")]
    pub s_amateur: f64,
    #[serde(rename = "S_expert")]
    pub s_expert: f64,
    pub meteor: f64,
    #[serde(rename = "final")]
    pub final_score: f64,
    pub final_display: String,
}

impl GradeSheet {
    pub fn new(grades: Vec<Grade>, meteor: f64) -> Result<Self, AssessmentError> {
        check_grades(&grades)?;
        if !(0.0..=1.0).contains(&meteor) {
            return Err(AssessmentError::OutOfRange {
                name: "meteor",
                value: meteor,
                lo: 0.0,
                hi: 1.0,
            });
        }
        Ok(Self { grades, meteor })
    }

    pub fn summary(&self) -> Result<ScoreSummary, AssessmentError> {
        let (s_amateur, s_expert) = aggregate_likert(&self.grades)?;
        let f = final_score(s_amateur, s_expert, self.meteor)?;
        Ok(ScoreSummary {
            s_amateur,
            s_expert,
            meteor: self.meteor,
            final_score: f,
            final_display: format_score(f),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredCase {
    pub sheet: GradeSheet,
    pub summary: ScoreSummary,
    pub meteor_detail: MeteorScore,
}

/// METEOR of the report's sections (joined by spaces) against `reference`,
/// then the weighted final score.
pub fn score_case(
    report: &DiagnosisReport,
    reference: &str,
    grades: &[Grade],
    params: &MeteorParams,
) -> Result<ScoredCase, AssessmentError> {
    if reference.trim().is_empty() {
        return Err(AssessmentError::Validation("reference text must not be empty".into()));
    }
    if grades.is_empty() {
        return Err(AssessmentError::Validation("no grades recorded; grading is incomplete".into()));
    }
    let detail = meteor_detail(&report.scoring_text(), reference, params)?;
    let sheet = GradeSheet::new(grades.to_vec(), detail.score)?;
    let summary = sheet.summary()?;
    Ok(ScoredCase {
        sheet,
        summary,
        meteor_detail: detail,
    })
}
