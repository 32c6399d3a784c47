//! Classifier output to diagnosis opinion, prompt rendering, chat backends
//! and report parsing.

mod backend;
mod parse;
mod prompt;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use backend::{
    generate_report, AttemptFailure, BackendKind, ChatBackend, CompletionParams, HttpChatBackend, LlmBackendSpec,
    MockBackend, DEFAULT_MODEL_NAME,
};
pub use parse::{parse_report, parse_report_with, render_sections, ParseMode, ReportSections, Section};
pub use prompt::{build_prompt, EMPTY_SLOT, PROMPT_TEMPLATE};

#[derive(Debug, thiserror::Error)]
pub enum DiagnosisError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("attempt timed out after {ms} ms")]
    Timeout { ms: u64 },
    #[error("backend error: {0}")]
    Backend(String),
    #[error("backend unavailable after {attempts} attempts: {}", failures.last().map(|f| f.to_string()).unwrap_or_default())]
    BackendUnavailable {
        attempts: usize,
        failures: Vec<AttemptFailure>,
    },
    #[error("malformed report: {reason}")]
    Malformed { reason: String, raw: String },
}

impl DiagnosisError {
    /// True for errors another attempt may fix.
    pub fn is_retriable(&self) -> bool {
        matches!(self, DiagnosisError::Timeout { .. } | DiagnosisError::Backend(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GuidelineTag {
    #[serde(rename = "BI-RADS-5th")]
    BiRads5th,
    #[serde(rename = "ACG-2022")]
    Acg2022,
    #[serde(rename = "IDSA-ATS-2019")]
    IdsaAts2019,
}

impl GuidelineTag {
    pub fn as_str(self) -> &'static str {
        match self {
            GuidelineTag::BiRads5th => "BI-RADS-5th",
            GuidelineTag::Acg2022 => "ACG-2022",
            GuidelineTag::IdsaAts2019 => "IDSA-ATS-2019",
        }
    }
}

impl fmt::Display for GuidelineTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GuidelineTag {
    type Err = DiagnosisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [GuidelineTag::BiRads5th, GuidelineTag::Acg2022, GuidelineTag::IdsaAts2019]
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| DiagnosisError::Validation(format!("unknown guideline tag {s:?}")))
    }
}

/// Short class name, clinical phrase and guideline family of one category.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassProfile {
    pub short_name: &'static str,
    pub phrase: &'static str,
    pub guideline: GuidelineTag,
}

pub const CLASS_PROFILES: [ClassProfile; 5] = [
    ClassProfile {
        short_name: "Benign",
        phrase: "Benign breast lesion",
        guideline: GuidelineTag::BiRads5th,
    },
    ClassProfile {
        short_name: "Malignant",
        phrase: "Malignant breast lesion",
        guideline: GuidelineTag::BiRads5th,
    },
    ClassProfile {
        short_name: "Gall.",
        phrase: "Gallbladder disease",
        guideline: GuidelineTag::Acg2022,
    },
    ClassProfile {
        short_name: "COVID",
        phrase: "COVID-19 pneumonia",
        guideline: GuidelineTag::IdsaAts2019,
    },
    ClassProfile {
        short_name: "Pneu.",
        phrase: "Bacterial pneumonia",
        guideline: GuidelineTag::IdsaAts2019,
    },
];

/// Looks a class up by its short name or its phrase, ignoring case.
pub fn class_profile(name: &str) -> Option<&'static ClassProfile> {
    let name = name.trim();
    CLASS_PROFILES
        .iter()
        .find(|p| p.short_name.eq_ignore_ascii_case(name) || p.phrase.eq_ignore_ascii_case(name))
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalContext {
    pub chief_complaint: String,
    #[serde(default)]
    pub physical_exam: String,
    #[serde(default)]
    pub additional_info: String,
}

impl ClinicalContext {
    pub fn new(
        chief_complaint: impl Into<String>,
        physical_exam: impl Into<String>,
        additional_info: impl Into<String>,
    ) -> Result<Self, DiagnosisError> {
        let ctx = Self {
            chief_complaint: chief_complaint.into(),
            physical_exam: physical_exam.into(),
            additional_info: additional_info.into(),
        };
        ctx.validate()?;
        Ok(ctx)
    }

    pub fn validate(&self) -> Result<(), DiagnosisError> {
        if self.chief_complaint.trim().is_empty() {
            return Err(DiagnosisError::Validation("chief complaint must not be empty".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisOpinion {
    pub class_id: usize,
    pub label_text: String,
    pub confidence: f64,
    pub guideline_tag: GuidelineTag,
    /// Other classes sharing the top probability, if any.
    #[serde(default)]
    pub tied_with: Vec<usize>,
}

/// Arg-max over `probs` (lowest index on ties) mapped to its clinical phrase.
pub fn opinion_from_prediction(probs: &[f64], class_names: &[String]) -> Result<DiagnosisOpinion, DiagnosisError> {
    if probs.is_empty() || probs.len() != class_names.len() {
        return Err(DiagnosisError::Validation(format!(
            "{} probabilities for {} class names",
            probs.len(),
            class_names.len()
        )));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
        return Err(DiagnosisError::Validation("probabilities must lie in [0, 1]".into()));
    }
    let mut best = 0;
    for (j, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = j;
        }
    }
    let tied_with = (0..probs.len()).filter(|&j| j != best && probs[j] == probs[best]).collect();
    let profile = class_profile(&class_names[best])
        .ok_or_else(|| DiagnosisError::Validation(format!("no clinical profile for class {:?}", class_names[best])))?;
    Ok(DiagnosisOpinion {
        class_id: best,
        label_text: profile.phrase.to_string(),
        confidence: probs[best],
        guideline_tag: profile.guideline,
        tied_with,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisReport {
    pub preliminary_diagnosis: String,
    pub justification: String,
    pub follow_up: String,
    pub raw_response: String,
    pub model_id: String,
    pub latency_ms: u64,
}

impl DiagnosisReport {
    pub fn sections(&self) -> ReportSections {
        ReportSections {
            preliminary_diagnosis: self.preliminary_diagnosis.clone(),
            justification: self.justification.clone(),
            follow_up: self.follow_up.clone(),
        }
    }

    /// The three sections joined by single spaces, headers excluded.
    pub fn scoring_text(&self) -> String {
        [&self.preliminary_diagnosis, &self.justification, &self.follow_up]
            .map(|s| s.as_str())
            .join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> Vec<String> {
        CLASS_PROFILES.iter().map(|p| p.short_name.to_string()).collect()
    }

    #[test]
    fn malignant_opinion() {
        let o = opinion_from_prediction(&[0.1, 0.6, 0.1, 0.1, 0.1], &names()).unwrap();
        assert_eq!(o.class_id, 1);
        assert_eq!(o.label_text, "Malignant breast lesion");
        assert_eq!(o.confidence, 0.6);
        assert_eq!(o.guideline_tag, GuidelineTag::BiRads5th);
        assert!(o.tied_with.is_empty());
    }

    #[test]
    fn gallbladder_opinion() {
        let o = opinion_from_prediction(&[0.1, 0.1, 0.6, 0.1, 0.1], &names()).unwrap();
        assert_eq!(o.label_text, "Gallbladder disease");
        assert_eq!(o.guideline_tag, GuidelineTag::Acg2022);
    }

    #[test]
    fn tie_takes_lowest_and_is_recorded() {
        let o = opinion_from_prediction(&[0.1, 0.35, 0.1, 0.35, 0.1], &names()).unwrap();
        assert_eq!(o.class_id, 1);
        assert_eq!(o.tied_with, vec![3]);
    }

    #[test]
    fn guideline_map_is_total() {
        let expected = [
            GuidelineTag::BiRads5th,
            GuidelineTag::BiRads5th,
            GuidelineTag::Acg2022,
            GuidelineTag::IdsaAts2019,
            GuidelineTag::IdsaAts2019,
        ];
        for (k, tag) in expected.into_iter().enumerate() {
            let mut probs = vec![0.0; 5];
            probs[k] = 1.0;
            assert_eq!(opinion_from_prediction(&probs, &names()).unwrap().guideline_tag, tag);
        }
        for p in &CLASS_PROFILES {
            assert_eq!(class_profile(p.phrase), Some(p));
            assert_eq!(class_profile(&p.short_name.to_lowercase()), Some(p));
        }
    }

    #[test]
    fn bad_inputs() {
        assert!(opinion_from_prediction(&[0.5, 0.5], &names()).is_err());
        assert!(opinion_from_prediction(&[1.0], &["Cyst".to_string()]).is_err());
        assert!(opinion_from_prediction(&[f64::NAN, 0.0, 0.0, 0.0, 0.0], &names()).is_err());
        assert!(ClinicalContext::new("  ", "", "").is_err());
    }

    #[test]
    fn tag_round_trip() {
        for t in [GuidelineTag::BiRads5th, GuidelineTag::Acg2022, GuidelineTag::IdsaAts2019] {
            assert_eq!(t.as_str().parse::<GuidelineTag>().unwrap(), t);
            assert_eq!(serde_json::to_string(&t).unwrap(), format!("\"{t}\""));
        }
    }
}
