/// Ordered suffix rules `(suffix, replacement)`; the first rule whose suffix
/// matches and leaves a stem of at least three characters is applied once.
const RULES: &[(&str, &str)] = &[
    ("ational", "ate"),
    ("ization", "ize"),
    ("fulness", "ful"),
    ("iveness", "ive"),
    ("ousness", "ous"),
    ("ations", "ate"),
    ("ation", "ate"),
    ("ments", ""),
    ("ment", ""),
    ("ness", ""),
    ("sses", "ss"),
    ("ies", "y"),
    ("ied", "y"),
    ("ing", ""),
    ("ed", ""),
    ("ly", ""),
    ("es", ""),
    ("s", ""),
];

/// Rule-based suffix stripper over lowercase ASCII words. Words of three
/// characters or fewer and words containing digits are returned unchanged; a
/// final "ss" is never reduced to "s".
pub fn stem(word: &str) -> String {
    if word.len() <= 3 || word.bytes().any(|b| b.is_ascii_digit()) || !word.is_ascii() {
        return word.to_string();
    }
    for (suffix, repl) in RULES {
        if *suffix == "s" && word.ends_with("ss") {
            break;
        }
        if let Some(base) = word.strip_suffix(suffix) {
            if base.len() >= 3 {
                return format!("{base}{repl}");
            }
        }
    }
    word.to_string()
}
