//! Report quality: METEOR against a reference, Likert grades by rater role
//! and the weighted final score.

mod io;
mod likert;
mod meteor;
mod stem;

pub use io::{grades_for_case, parse_grades_csv, score_report_csv, GradeRow, GRADES_HEADER, SCORE_HEADER};
pub use likert::{
    aggregate_likert, final_score, format_score, score_case, Grade, GradeSheet, Role, ScoreSummary, ScoredCase,
    AMATEUR_WEIGHT, EXPERT_WEIGHT, METEOR_WEIGHT,
};
pub use meteor::{align, count_chunks, meteor, meteor_detail, tokenize, MeteorParams, MeteorScore, SynonymTable};
pub use stem::stem;

#[derive(Debug, thiserror::Error)]
pub enum AssessmentError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("no {0} grades recorded")]
    MissingRole(Role),
    #[error("{name} = {value} is outside [{lo}, {hi}]")]
    OutOfRange { name: &'static str, value: f64, lo: f64, hi: f64 },
    #[error("grades file line {line}: {message}")]
    Csv { line: usize, message: String },
}
