//! Case records and the forward-only status machine
//! created → classified → reported → graded → scored.

use std::collections::BTreeMap;
use std::fmt;
use std::time::{SystemTime, UNIX_EPOCH};

use autous_agent::assessment::{Grade, GradeSheet, Role, ScoreSummary};
use autous_agent::diagnosis::{ClinicalContext, DiagnosisOpinion, DiagnosisReport};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseStatus {
    Created,
    Classified,
    Reported,
    Graded,
    Scored,
}

impl CaseStatus {
    pub const ALL: [CaseStatus; 5] = [
        CaseStatus::Created,
        CaseStatus::Classified,
        CaseStatus::Reported,
        CaseStatus::Graded,
        CaseStatus::Scored,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CaseStatus::Created => "created",
            CaseStatus::Classified => "classified",
            CaseStatus::Reported => "reported",
            CaseStatus::Graded => "graded",
            CaseStatus::Scored => "scored",
        }
    }
}

impl fmt::Display for CaseStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub class_id: usize,
    /// Short class name.
    pub label: String,
    pub confidence: f64,
    pub probs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisCase {
    pub case_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_key: Option<String>,
    pub status: CaseStatus,
    pub context: ClinicalContext,
    pub video_ref: Option<String>,
    pub classification: Option<Classification>,
    pub opinion: Option<DiagnosisOpinion>,
    pub report: Option<DiagnosisReport>,
    #[serde(default)]
    pub grades: Vec<Grade>,
    pub reference_text: Option<String>,
    pub grade_sheet: Option<GradeSheet>,
    pub score: Option<ScoreSummary>,
    /// Unix milliseconds at which each status was reached.
    pub timestamps: BTreeMap<CaseStatus, u64>,
    pub updated_at: u64,
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl DiagnosisCase {
    pub fn new(case_id: impl Into<String>, context: ClinicalContext, now: u64) -> Self {
        Self {
            case_id: case_id.into(),
            idempotency_key: None,
            status: CaseStatus::Created,
            context,
            video_ref: None,
            classification: None,
            opinion: None,
            report: None,
            grades: Vec::new(),
            reference_text: None,
            grade_sheet: None,
            score: None,
            timestamps: BTreeMap::from([(CaseStatus::Created, now)]),
            updated_at: now,
        }
    }

    pub fn has_role(&self, role: Role) -> bool {
        self.grades.iter().any(|g| g.role == role)
    }

    /// Structural rules every stored case satisfies.
    pub fn check_invariants(&self) -> Result<(), String> {
        let reached = |s: CaseStatus| self.status >= s;
        if reached(CaseStatus::Classified) != (self.classification.is_some() && self.opinion.is_some()) {
            return Err("classification present iff status >= classified".into());
        }
        if reached(CaseStatus::Classified) && self.video_ref.is_none() {
            return Err("classified without a video".into());
        }
        if reached(CaseStatus::Reported) != self.report.is_some() {
            return Err("report present iff status >= reported".into());
        }
        if reached(CaseStatus::Graded) != !self.grades.is_empty() {
            return Err("grades present iff status >= graded".into());
        }
        if reached(CaseStatus::Scored) != (self.score.is_some() && self.grade_sheet.is_some()) {
            return Err("score present iff status scored".into());
        }
        if reached(CaseStatus::Scored) && !(self.has_role(Role::Amateur) && self.has_role(Role::Expert)) {
            return Err("scored without both rater roles".into());
        }
        for s in CaseStatus::ALL {
            if self.timestamps.contains_key(&s) != reached(s) {
                return Err(format!("timestamp for {s} inconsistent with status {}", self.status));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    SetContext(ClinicalContext),
    AttachVideo(String),
    Classify {
        classification: Classification,
        opinion: DiagnosisOpinion,
    },
    Report(DiagnosisReport),
    AddGrade(Grade),
    Score {
        reference_text: String,
        sheet: GradeSheet,
        summary: ScoreSummary,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionKind {
    SetContext,
    AttachVideo,
    Classify,
    Report,
    AddGrade,
    Score,
}

impl ActionKind {
    pub fn name(self) -> &'static str {
        match self {
            ActionKind::SetContext => "update context",
            ActionKind::AttachVideo => "upload video",
            ActionKind::Classify => "classify",
            ActionKind::Report => "report",
            ActionKind::AddGrade => "grade",
            ActionKind::Score => "score",
        }
    }
}

impl Action {
    pub fn kind(&self) -> ActionKind {
        match self {
            Action::SetContext(_) => ActionKind::SetContext,
            Action::AttachVideo(_) => ActionKind::AttachVideo,
            Action::Classify { .. } => ActionKind::Classify,
            Action::Report(_) => ActionKind::Report,
            Action::AddGrade(_) => ActionKind::AddGrade,
            Action::Score { .. } => ActionKind::Score,
        }
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum WorkflowError {
    #[error("cannot {action} a case in status {status}: {reason}")]
    IllegalTransition {
        action: &'static str,
        status: CaseStatus,
        reason: String,
    },
    #[error("validation error: {0}")]
    Validation(String),
}

/// What the caller should do about an action.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Readiness {
    /// Compute the payload and apply it.
    Proceed,
    /// Already done; the stored result stands.
    AlreadyDone,
}

fn illegal(kind: ActionKind, status: CaseStatus, reason: impl Into<String>) -> WorkflowError {
    WorkflowError::IllegalTransition {
        action: kind.name(),
        status,
        reason: reason.into(),
    }
}

/// Status-only check, made before any expensive work.
pub fn readiness(case: &DiagnosisCase, kind: ActionKind) -> Result<Readiness, WorkflowError> {
    use CaseStatus::*;
    let s = case.status;
    match kind {
        ActionKind::SetContext if s <= Classified => Ok(Readiness::Proceed),
        ActionKind::SetContext => Err(illegal(kind, s, "the report already used the context")),
        ActionKind::AttachVideo if s == Created => Ok(Readiness::Proceed),
        ActionKind::AttachVideo => Err(illegal(kind, s, "the case is already classified")),
        ActionKind::Classify if s >= Classified => Ok(Readiness::AlreadyDone),
        ActionKind::Classify if case.video_ref.is_none() => Err(illegal(kind, s, "no video uploaded")),
        ActionKind::Classify => Ok(Readiness::Proceed),
        ActionKind::Report if s >= Reported => Ok(Readiness::AlreadyDone),
        ActionKind::Report if s == Classified => Ok(Readiness::Proceed),
        ActionKind::Report => Err(illegal(kind, s, "classify the case first")),
        ActionKind::AddGrade if s == Reported || s == Graded => Ok(Readiness::Proceed),
        ActionKind::AddGrade if s == Scored => Err(illegal(kind, s, "grading closed when the case was scored")),
        ActionKind::AddGrade => Err(illegal(kind, s, "no report to grade yet")),
        ActionKind::Score if s == Scored => Ok(Readiness::AlreadyDone),
        ActionKind::Score if s != Graded => Err(illegal(kind, s, "grades are required before scoring")),
        ActionKind::Score => {
            for role in [Role::Amateur, Role::Expert] {
                if !case.has_role(role) {
                    return Err(illegal(kind, s, format!("no {role} grade recorded")));
                }
            }
            Ok(Readiness::Proceed)
        }
    }
}

/// Applies `action`, returning `None` when it repeats completed work.
pub fn apply(case: &DiagnosisCase, action: Action, now: u64) -> Result<Option<DiagnosisCase>, WorkflowError> {
    let kind = action.kind();
    if readiness(case, kind)? == Readiness::AlreadyDone {
        if let Action::Score { reference_text, .. } = &action {
            if case.reference_text.as_deref() != Some(reference_text.as_str()) {
                return Err(illegal(kind, case.status, "already scored against a different reference"));
            }
        }
        return Ok(None);
    }
    let mut next = case.clone();
    let advance = |next: &mut DiagnosisCase, to: CaseStatus| {
        next.status = to;
        next.timestamps.entry(to).or_insert(now);
    };
    match action {
        Action::SetContext(ctx) => {
            ctx.validate().map_err(|e| WorkflowError::Validation(e.to_string()))?;
            if ctx == case.context {
                return Ok(None);
            }
            next.context = ctx;
        }
        Action::AttachVideo(r) => next.video_ref = Some(r),
        Action::Classify { classification, opinion } => {
            next.classification = Some(classification);
            next.opinion = Some(opinion);
            advance(&mut next, CaseStatus::Classified);
        }
        Action::Report(report) => {
            next.report = Some(report);
            advance(&mut next, CaseStatus::Reported);
        }
        Action::AddGrade(grade) => {
            grade.validate().map_err(|e| WorkflowError::Validation(e.to_string()))?;
            if let Some(prev) = case.grades.iter().find(|g| g.rater_id == grade.rater_id) {
                if *prev == grade {
                    return Ok(None);
                }
                return Err(illegal(kind, case.status, format!("rater {} already graded", grade.rater_id)));
            }
            next.grades.push(grade);
            advance(&mut next, CaseStatus::Graded);
        }
        Action::Score {
            reference_text,
            sheet,
            summary,
        } => {
            if sheet.grades != case.grades {
                return Err(WorkflowError::Validation("score sheet does not match the stored grades".into()));
            }
            next.reference_text = Some(reference_text);
            next.grade_sheet = Some(sheet);
            next.score = Some(summary);
            advance(&mut next, CaseStatus::Scored);
        }
    }
    next.updated_at = now;
    Ok(Some(next))
}
