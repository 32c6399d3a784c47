use super::{ClinicalContext, DiagnosisOpinion};

pub const PROMPT_TEMPLATE: &str = "You are a senior ultrasound imaging diagnostic expert. Based on the information below, determine the patient's possible condition and provide diagnostic recommendations.

- Ultrasound Imaging Diagnosis Opinion: {Model_Result}
- Chief Complaint: {Chief_Complaint}
- Physical Examination: {Physical_Exam}
- Additional Information: {Additional_Info}

Please reason according to international diagnostic guidelines and generate a medically standardized recommendation using professional terminology. The output format should be:

- Preliminary Diagnosis:
- Justification:
- Recommended Follow-Up Examinations:";

/// Stand-in for a blank context field.
pub const EMPTY_SLOT: &str = "None provided";

fn slot(value: &str) -> &str {
    if value.trim().is_empty() {
        EMPTY_SLOT
    } else {
        value
    }
}

/// Fills the four template slots. Values are inserted verbatim, in a single
/// pass, so braces inside them are never reinterpreted.
pub fn build_prompt(opinion: &DiagnosisOpinion, ctx: &ClinicalContext) -> String {
    let values = [
        ("{Model_Result}", slot(&opinion.label_text)),
        ("{Chief_Complaint}", slot(&ctx.chief_complaint)),
        ("{Physical_Exam}", slot(&ctx.physical_exam)),
        ("{Additional_Info}", slot(&ctx.additional_info)),
    ];
    let mut out = String::with_capacity(PROMPT_TEMPLATE.len() + values.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = PROMPT_TEMPLATE;
    for (key, value) in values {
        let at = rest.find(key).expect("template holds every slot once");
        out.push_str(&rest[..at]);
        out.push_str(value);
        rest = &rest[at + key.len()..];
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnosis::GuidelineTag;

    fn opinion(label: &str) -> DiagnosisOpinion {
        DiagnosisOpinion {
            class_id: 1,
            label_text: label.into(),
            confidence: 0.9,
            guideline_tag: GuidelineTag::BiRads5th,
            tied_with: vec![],
        }
    }

    #[test]
    fn empty_field_renders_placeholder() {
        let ctx = ClinicalContext::new("Pain.", "", "").unwrap();
        let p = build_prompt(&opinion("Benign breast lesion"), &ctx);
        assert!(p.contains("- Additional Information: None provided\n"));
        assert!(p.contains("- Physical Examination: None provided\n"));
        assert_eq!(p, build_prompt(&opinion("Benign breast lesion"), &ctx));
    }

    #[test]
    fn braces_in_values_stay_literal() {
        let ctx = ClinicalContext::new("{Physical_Exam}", "x", "y").unwrap();
        let p = build_prompt(&opinion("Gallbladder disease"), &ctx);
        assert!(p.contains("- Chief Complaint: {Physical_Exam}\n- Physical Examination: x\n"));
    }

    #[test]
    fn no_trailing_newline() {
        let p = build_prompt(&opinion("a"), &ClinicalContext::new("b", "c", "d").unwrap());
        assert!(p.ends_with("- Recommended Follow-Up Examinations:"));
        assert!(!p.contains('\r'));
    }
}
