//! Diagnosis reasoning over classifier output and assessment of the
//! generated reports.

pub mod assessment;
pub mod diagnosis;
