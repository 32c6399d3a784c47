use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::parse::{parse_report_with, ParseMode};
use super::{DiagnosisError, DiagnosisReport};

pub const DEFAULT_MODEL_NAME: &str = "DeepSeek-R1-7B";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    HttpChat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmBackendSpec {
    pub kind: BackendKind,
    pub endpoint_url: Option<String>,
    pub model_name: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub temperature: f64,
    /// First retry delay; doubles on each further retry.
    pub backoff_ms: u64,
    pub parse_mode: ParseMode,
}

impl Default for LlmBackendSpec {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            endpoint_url: None,
            model_name: DEFAULT_MODEL_NAME.into(),
            timeout_ms: 120_000,
            max_retries: 2,
            temperature: 0.0,
            backoff_ms: 500,
            parse_mode: ParseMode::Lenient,
        }
    }
}

impl LlmBackendSpec {
    pub fn validate(&self) -> Result<(), DiagnosisError> {
        if self.timeout_ms == 0 {
            return Err(DiagnosisError::Validation("timeout_ms must be positive".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(DiagnosisError::Validation("temperature must be a non-negative number".into()));
        }
        if self.kind == BackendKind::HttpChat && self.endpoint_url.as_deref().is_none_or(|u| u.trim().is_empty()) {
            return Err(DiagnosisError::Validation("http_chat backend needs an endpoint_url".into()));
        }
        Ok(())
    }

    pub fn params(&self) -> CompletionParams {
        CompletionParams {
            model_name: self.model_name.clone(),
            temperature: self.temperature,
            timeout_ms: self.timeout_ms,
        }
    }

    /// Delay before attempt `attempt` (0-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        if attempt == 0 {
            Duration::ZERO
        } else {
            Duration::from_millis(self.backoff_ms.saturating_mul(1u64 << (attempt - 1).min(20)))
        }
    }

    /// Upper bound on wall time of `generate_report`, ignoring thread start-up.
    pub fn worst_case(&self) -> Duration {
        (0..=self.max_retries)
            .map(|a| self.backoff(a) + Duration::from_millis(self.timeout_ms))
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompletionParams {
    pub model_name: String,
    pub temperature: f64,
    pub timeout_ms: u64,
}

/// A chat-completion service: one prompt in, one text out.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<String, DiagnosisError>;

    fn model_id(&self, params: &CompletionParams) -> String {
        params.model_name.clone()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttemptFailure {
    Timeout { ms: u64 },
    Backend { message: String },
    Malformed { reason: String },
}

impl fmt::Display for AttemptFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttemptFailure::Timeout { ms } => write!(f, "timed out after {ms} ms"),
            AttemptFailure::Backend { message } => write!(f, "{message}"),
            AttemptFailure::Malformed { reason } => write!(f, "malformed output: {reason}"),
        }
    }
}

/// Sends `prompt`, retrying timeouts, backend errors and unparseable output
/// with exponential backoff. Each attempt runs on its own thread so a hung
/// backend cannot hold the caller past `timeout_ms`.
pub fn generate_report(
    prompt: &str,
    spec: &LlmBackendSpec,
    backend: Arc<dyn ChatBackend>,
) -> Result<DiagnosisReport, DiagnosisError> {
    spec.validate()?;
    let params = spec.params();
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut last_raw = None;
    for attempt in 0..=spec.max_retries {
        thread::sleep(spec.backoff(attempt));
        let (tx, rx) = mpsc::channel();
        let (b, p, prm) = (backend.clone(), prompt.to_string(), params.clone());
        thread::spawn(move || {
            let _ = tx.send(b.complete(&p, &prm));
        });
        match rx.recv_timeout(Duration::from_millis(spec.timeout_ms)) {
            Ok(Ok(text)) => match parse_report_with(&text, spec.parse_mode) {
                Ok(s) => {
                    return Ok(DiagnosisReport {
                        preliminary_diagnosis: s.preliminary_diagnosis,
                        justification: s.justification,
                        follow_up: s.follow_up,
                        raw_response: text,
                        model_id: backend.model_id(&params),
                        latency_ms: start.elapsed().as_millis() as u64,
                    })
                }
                Err(DiagnosisError::Malformed { reason, raw }) => {
                    failures.push(AttemptFailure::Malformed { reason });
                    last_raw = Some(raw);
                }
                Err(e) => failures.push(AttemptFailure::Backend { message: e.to_string() }),
            },
            Ok(Err(DiagnosisError::Timeout { ms })) => failures.push(AttemptFailure::Timeout { ms }),
            Ok(Err(e)) => failures.push(AttemptFailure::Backend { message: e.to_string() }),
            Err(mpsc::RecvTimeoutError::Timeout) => failures.push(AttemptFailure::Timeout { ms: spec.timeout_ms }),
            Err(mpsc::RecvTimeoutError::Disconnected) => failures.push(AttemptFailure::Backend {
                message: "backend worker stopped without a reply".into(),
            }),
        }
    }
    match (failures.last(), last_raw) {
        (Some(AttemptFailure::Malformed { reason }), Some(raw)) => Err(DiagnosisError::Malformed {
            reason: reason.clone(),
            raw,
        }),
        _ => Err(DiagnosisError::BackendUnavailable {
            attempts: failures.len(),
            failures,
        }),
    }
}

/// Scripted backend. Replies are chosen by the first key contained in the
/// prompt's opinion line (or the whole prompt when that line is absent).
#[derive(Debug, Default)]
pub struct MockBackend {
    scripts: Vec<(String, String)>,
    fallback: Option<String>,
    delay: Duration,
    fail_first: usize,
    calls: AtomicUsize,
}

const OPINION_PREFIX: &str = "- Ultrasound Imaging Diagnosis Opinion: ";

fn canned(diagnosis: &str, reasoning: &str, follow_up: &[&str]) -> String {
    let items: Vec<String> = follow_up.iter().enumerate().map(|(i, t)| format!("{}. {t}", i + 1)).collect();
    format!(
        "**Preliminary Diagnosis:** {diagnosis}\n\n**Justification:** {reasoning}\n\n**Recommended Follow-Up Examinations:**\n{}",
        items.join("\n")
    )
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// One three-section reply per category.
    pub fn canned() -> Self {
        Self::new()
            .with_script(
                "Benign",
                canned(
                    "Probably benign solid breast mass, BI-RADS 3.",
                    "Circumscribed oval lesion parallel to the skin with no posterior shadowing.",
                    &["Short-interval ultrasound in 6 months.", "Biopsy if the lesion grows."],
                ),
            )
            .with_script(
                "Malignant",
                canned(
                    "Suspicious breast mass, BI-RADS 4C; malignancy likely.",
                    "Irregular margins and a non-parallel orientation are suspicious features.",
                    &["Core needle biopsy.", "Diagnostic mammography.", "Axillary ultrasound."],
                ),
            )
            .with_script(
                "Gallbladder",
                canned(
                    "Calculous cholecystitis.",
                    "Gallbladder wall thickening with echogenic shadowing foci.",
                    &["Liver function tests.", "Surgical consultation."],
                ),
            )
            .with_script(
                "COVID-19",
                canned(
                    "Viral pneumonia consistent with COVID-19.",
                    "Bilateral B-lines with an irregular pleural line.",
                    &["SARS-CoV-2 RT-PCR.", "Pulse oximetry monitoring."],
                ),
            )
            .with_script(
                "Bacterial",
                canned(
                    "Community-acquired bacterial pneumonia.",
                    "Consolidation with dynamic air bronchograms.",
                    &["Sputum culture.", "Chest radiograph.", "Empiric antibiotics."],
                ),
            )
    }

    pub fn with_script(mut self, key: impl Into<String>, reply: impl Into<String>) -> Self {
        self.scripts.push((key.into(), reply.into()));
        self
    }

    pub fn with_fallback(mut self, reply: impl Into<String>) -> Self {
        self.fallback = Some(reply.into());
        self
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    /// The first `n` calls fail with a backend error.
    pub fn failing_first(mut self, n: usize) -> Self {
        self.fail_first = n;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, prompt: &str, _params: &CompletionParams) -> Result<String, DiagnosisError> {
        let call = self.calls.fetch_add(1, Ordering::SeqCst);
        if !self.delay.is_zero() {
            thread::sleep(self.delay);
        }
        if call < self.fail_first {
            return Err(DiagnosisError::Backend(format!("scripted failure on call {}", call + 1)));
        }
        let target = prompt
            .lines()
            .find_map(|l| l.strip_prefix(OPINION_PREFIX))
            .unwrap_or(prompt);
        self.scripts
            .iter()
            .find(|(k, _)| target.contains(k.as_str()))
            .map(|(_, r)| r.clone())
            .or_else(|| self.fallback.clone())
            .ok_or_else(|| DiagnosisError::Backend("mock has no script for this prompt".into()))
    }

    fn model_id(&self, params: &CompletionParams) -> String {
        format!("mock:{}", params.model_name)
    }
}

/// OpenAI-style chat-completion client: one POST per call with the prompt as
/// a single user message.
#[derive(Clone, Debug)]
pub struct HttpChatBackend {
    endpoint: String,
    token: Option<String>,
}

#[derive(Deserialize)]
struct ChatResponse {
    #[serde(default)]
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: Option<ChatMessage>,
    text: Option<String>,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

impl HttpChatBackend {
    pub fn new(endpoint: impl Into<String>, token: Option<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            token: token.filter(|t| !t.is_empty()),
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

impl ChatBackend for HttpChatBackend {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<String, DiagnosisError> {
        // Built per call: the blocking client owns a runtime that must not be
        // dropped from inside an async context.
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(params.timeout_ms))
            .build()
            .map_err(|e| DiagnosisError::Backend(e.to_string()))?;
        let body = serde_json::json!({
            "model": params.model_name,
            "temperature": params.temperature,
            "stream": false,
            "messages": [{ "role": "user", "content": prompt }],
        });
        let mut req = client.post(&self.endpoint).json(&body);
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                DiagnosisError::Timeout { ms: params.timeout_ms }
            } else {
                DiagnosisError::Backend(e.to_string())
            }
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| DiagnosisError::Backend(e.to_string()))?;
        if !status.is_success() {
            let snippet: String = text.chars().take(200).collect();
            return Err(DiagnosisError::Backend(format!("HTTP {status}: {snippet}")));
        }
        let parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|e| DiagnosisError::Backend(format!("unreadable response: {e}")))?;
        let first = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| DiagnosisError::Backend("response has no choices".into()))?;
        first
            .message
            .and_then(|m| m.content)
            .or(first.text)
            .ok_or_else(|| DiagnosisError::Backend("first choice carries no text".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(retries: u32) -> LlmBackendSpec {
        LlmBackendSpec {
            timeout_ms: 2_000,
            max_retries: retries,
            backoff_ms: 1,
            ..LlmBackendSpec::default()
        }
    }

    const PROMPT: &str = "x\n- Ultrasound Imaging Diagnosis Opinion: Malignant breast lesion\n- Chief Complaint: y";

    #[test]
    fn canned_reply_parses() {
        let mock = Arc::new(MockBackend::canned());
        let r = generate_report(PROMPT, &quick(0), mock.clone()).unwrap();
        assert!(r.preliminary_diagnosis.contains("BI-RADS 4C"));
        assert!(r.follow_up.starts_with("1. Core needle biopsy."));
        assert_eq!(r.model_id, "mock:DeepSeek-R1-7B");
        assert_eq!(mock.calls(), 1);
    }

    #[test]
    fn key_matches_opinion_line_only() {
        let mock = MockBackend::new().with_script("Gallbladder", "a").with_script("Malignant", "b");
        let prompt = "- Ultrasound Imaging Diagnosis Opinion: Malignant breast lesion\n- Chief Complaint: Gallbladder pain";
        assert_eq!(mock.complete(prompt, &quick(0).params()).unwrap(), "b");
    }

    #[test]
    fn malformed_reply_keeps_raw_text() {
        let mock = Arc::new(MockBackend::new().with_fallback("Preliminary Diagnosis: a\nRecommended Follow-Up Examinations: c"));
        match generate_report(PROMPT, &quick(1), mock.clone()) {
            Err(DiagnosisError::Malformed { reason, raw }) => {
                assert!(reason.contains("Justification"));
                assert!(raw.contains("Preliminary Diagnosis: a"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(mock.calls(), 2);
    }

    #[test]
    fn timeouts_are_retried_then_reported() {
        let mock = Arc::new(MockBackend::canned().with_delay(Duration::from_millis(200)));
        let spec = LlmBackendSpec {
            timeout_ms: 1,
            max_retries: 2,
            backoff_ms: 1,
            ..LlmBackendSpec::default()
        };
        let t0 = Instant::now();
        match generate_report(PROMPT, &spec, mock) {
            Err(DiagnosisError::BackendUnavailable { attempts, failures }) => {
                assert_eq!(attempts, 3);
                assert!(failures.iter().all(|f| *f == AttemptFailure::Timeout { ms: 1 }));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(t0.elapsed() < spec.worst_case() + Duration::from_millis(100));
    }

    #[test]
    fn transient_failure_recovers() {
        let mock = Arc::new(MockBackend::canned().failing_first(2));
        let r = generate_report(PROMPT, &quick(2), mock.clone()).unwrap();
        assert!(!r.justification.is_empty());
        assert_eq!(mock.calls(), 3);
        let mock = Arc::new(MockBackend::canned().failing_first(3));
        assert!(matches!(
            generate_report(PROMPT, &quick(2), mock),
            Err(DiagnosisError::BackendUnavailable { attempts: 3, .. })
        ));
    }

    #[test]
    fn spec_validation() {
        assert!(LlmBackendSpec { timeout_ms: 0, ..Default::default() }.validate().is_err());
        assert!(LlmBackendSpec { kind: BackendKind::HttpChat, ..Default::default() }.validate().is_err());
        let s = quick(3);
        assert_eq!(s.backoff(0), Duration::ZERO);
        assert_eq!(s.backoff(3), Duration::from_millis(4));
    }
}
