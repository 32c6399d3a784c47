use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::DiagnosisError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Section {
    PreliminaryDiagnosis,
    Justification,
    FollowUp,
}

impl Section {
    pub const ALL: [Section; 3] = [Section::PreliminaryDiagnosis, Section::Justification, Section::FollowUp];

    pub fn header(self) -> &'static str {
        match self {
            Section::PreliminaryDiagnosis => "Preliminary Diagnosis",
            Section::Justification => "Justification",
            Section::FollowUp => "Recommended Follow-Up Examinations",
        }
    }

    fn from_match(m: &str) -> Section {
        let m = m.to_ascii_lowercase();
        if m.starts_with("prelim") {
            Section::PreliminaryDiagnosis
        } else if m.starts_with("justif") {
            Section::Justification
        } else {
            Section::FollowUp
        }
    }
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.header())
    }
}

/// `Lenient` accepts any letter case, markdown emphasis, bullets, heading
/// marks and a leading list number around a header. `Strict` accepts only the
/// template spelling, optionally behind "- ".
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseMode {
    #[default]
    Lenient,
    Strict,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportSections {
    pub preliminary_diagnosis: String,
    pub justification: String,
    pub follow_up: String,
}

impl ReportSections {
    pub fn get(&self, s: Section) -> &str {
        match s {
            Section::PreliminaryDiagnosis => &self.preliminary_diagnosis,
            Section::Justification => &self.justification,
            Section::FollowUp => &self.follow_up,
        }
    }
}

static LENIENT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)^[\s#>*_\-•]*(?:\d+[.)]\s*)?[*_]*\s*(preliminary\s+diagnosis|justification|recommended\s+follow[\s\-]*up\s+examinations?)\s*[*_]*\s*:[*_]*\s*",
    )
    .unwrap()
});

static STRICT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(?:- )?(Preliminary Diagnosis|Justification|Recommended Follow-Up Examinations): ?").unwrap()
});

static THINK: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?is)<think>.*?</think>").unwrap());

pub fn parse_report(raw: &str) -> Result<ReportSections, DiagnosisError> {
    parse_report_with(raw, ParseMode::Lenient)
}

/// Splits a response into the three sections by header name; each section
/// runs to the next header or the end. Reasoning blocks in `<think>` tags are
/// dropped first.
pub fn parse_report_with(raw: &str, mode: ParseMode) -> Result<ReportSections, DiagnosisError> {
    let malformed = |reason: String| DiagnosisError::Malformed {
        reason,
        raw: raw.to_string(),
    };
    let text = THINK.replace_all(raw, "");
    if text.trim().is_empty() {
        return Err(malformed("empty response".into()));
    }
    let re = match mode {
        ParseMode::Lenient => &*LENIENT,
        ParseMode::Strict => &*STRICT,
    };
    let mut found: Vec<(Section, Vec<&str>)> = Vec::new();
    for line in text.lines() {
        if let Some(c) = re.captures(line) {
            let section = Section::from_match(&c[1]);
            if found.iter().any(|(s, _)| *s == section) {
                return Err(malformed(format!("duplicate section {:?}", section.header())));
            }
            found.push((section, vec![&line[c.get(0).unwrap().end()..]]));
        } else if let Some((_, lines)) = found.last_mut() {
            lines.push(line);
        }
    }
    let mut out = [String::new(), String::new(), String::new()];
    for (k, section) in Section::ALL.into_iter().enumerate() {
        let (_, lines) = found
            .iter()
            .find(|(s, _)| *s == section)
            .ok_or_else(|| malformed(format!("missing section {:?}", section.header())))?;
        let body = lines.join("\n").trim().to_string();
        if body.is_empty() {
            return Err(malformed(format!("section {:?} is empty", section.header())));
        }
        out[k] = body;
    }
    let [preliminary_diagnosis, justification, follow_up] = out;
    Ok(ReportSections {
        preliminary_diagnosis,
        justification,
        follow_up,
    })
}

/// Plain rendering that `parse_report` reads back unchanged.
pub fn render_sections(s: &ReportSections) -> String {
    Section::ALL
        .iter()
        .map(|&sec| format!("{}: {}", sec.header(), s.get(sec)))
        .collect::<Vec<_>>()
        .join("\n")
}
