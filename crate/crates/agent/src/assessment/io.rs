use serde::Deserialize;

use super::likert::{format_score, Grade, Role, ScoreSummary};
use super::AssessmentError;

pub const GRADES_HEADER: [&str; 4] = ["case_id", "rater_id", "role", "score"];
pub const SCORE_HEADER: &str = "case_id,S_amateur,S_expert,meteor,final,final_2dp";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GradeRow {
    pub case_id: String,
    pub grade: Grade,
}

#[derive(Deserialize)]
struct RawRow {
    case_id: String,
    rater_id: String,
    role: String,
    score: String,
}

/// Reads a `case_id,rater_id,role,score` file.
pub fn parse_grades_csv(text: &str) -> Result<Vec<GradeRow>, AssessmentError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| AssessmentError::Csv { line: 1, message: e.to_string() })?;
    if header.iter().collect::<Vec<_>>() != GRADES_HEADER {
        return Err(AssessmentError::Csv {
            line: 1,
            message: format!("expected header {}", GRADES_HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.deserialize::<RawRow>() {
        let rec = rec.map_err(|e| AssessmentError::Csv {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = rows.len() + 2;
        let bad = |message: String| AssessmentError::Csv { line, message };
        let role: Role = rec.role.parse().map_err(|e: AssessmentError| bad(e.to_string()))?;
        let score: u8 = rec.score.parse().map_err(|_| bad(format!("score {:?} is not an integer", rec.score)))?;
        let grade = Grade::new(rec.rater_id, role, score).map_err(|e| bad(e.to_string()))?;
        if rec.case_id.is_empty() {
            return Err(bad("empty case_id".into()));
        }
        rows.push(GradeRow {
            case_id: rec.case_id,
            grade,
        });
    }
    Ok(rows)
}

pub fn grades_for_case(rows: &[GradeRow], case_id: &str) -> Vec<Grade> {
    rows.iter().filter(|r| r.case_id == case_id).map(|r| r.grade.clone()).collect()
}

/// Four-decimal columns plus the two-decimal final score.
pub fn score_report_csv(rows: &[(String, ScoreSummary)]) -> String {
    let mut out = format!("{SCORE_HEADER}\n");
    for (case_id, s) in rows {
        out.push_str(&format!(
            "{case_id},{:.4},{:.4},{:.4},{:.4},{}\n",
            s.s_amateur,
            s.s_expert,
            s.meteor,
            s.final_score,
            format_score(s.final_score)
        ));
    }
    out
}
