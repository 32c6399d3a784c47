//! JSON HTTP API over the case store.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use autous_agent::assessment::{score_case, Grade, MeteorParams, Role};
use autous_agent::diagnosis::{
    build_prompt, generate_report, BackendKind, ChatBackend, ClinicalContext, DiagnosisError, HttpChatBackend,
    LlmBackendSpec, MockBackend,
};
use autous_core::ctu_net::ModelError;
use autous_core::video_data::DataError;
use axum::body::{to_bytes, Body};
use axum::extract::{Path as UrlPath, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::{Mutex, Semaphore};

use crate::classifier::Classifier;
use crate::store::{RecordStore, StoreError};
use crate::workflow::{self, now_ms, Action, ActionKind, CaseStatus, DiagnosisCase, Readiness, WorkflowError};
use crate::{ServiceError, ENV_LLM_ENDPOINT, ENV_LLM_TOKEN, ENV_STORE_DIR};

pub const DEFAULT_MAX_UPLOAD_BYTES: usize = 64 * 1024 * 1024;
pub const DEFAULT_LLM_INFLIGHT: usize = 2;
const MAX_JSON_BYTES: usize = 2 * 1024 * 1024;
const CAS_ATTEMPTS: usize = 16;

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub store_dir: PathBuf,
    pub max_upload_bytes: usize,
    pub llm: LlmBackendSpec,
    pub llm_token: Option<String>,
    pub llm_inflight: usize,
}

impl ServiceConfig {
    pub fn new(store_dir: impl Into<PathBuf>) -> Self {
        Self {
            store_dir: store_dir.into(),
            max_upload_bytes: DEFAULT_MAX_UPLOAD_BYTES,
            llm: LlmBackendSpec::default(),
            llm_token: None,
            llm_inflight: DEFAULT_LLM_INFLIGHT,
        }
    }

    /// Reads the store directory and chat endpoint from the environment. An
    /// endpoint switches the backend to `http_chat`.
    pub fn from_env() -> Self {
        let dir = std::env::var(ENV_STORE_DIR).unwrap_or_else(|_| "autous-store".into());
        let mut cfg = Self::new(dir);
        if let Ok(url) = std::env::var(ENV_LLM_ENDPOINT) {
            if !url.trim().is_empty() {
                cfg.llm.kind = BackendKind::HttpChat;
                cfg.llm.endpoint_url = Some(url);
            }
        }
        cfg.llm_token = std::env::var(ENV_LLM_TOKEN).ok();
        cfg
    }

    pub fn backend(&self) -> Result<Arc<dyn ChatBackend>, ServiceError> {
        self.llm.validate()?;
        Ok(match self.llm.kind {
            BackendKind::Mock => Arc::new(MockBackend::canned()),
            BackendKind::HttpChat => Arc::new(HttpChatBackend::new(
                self.llm.endpoint_url.clone().unwrap_or_default(),
                self.llm_token.clone(),
            )),
        })
    }
}

pub struct AppState {
    pub store: RecordStore<DiagnosisCase>,
    pub classifier: Arc<Classifier>,
    pub backend: Arc<dyn ChatBackend>,
    pub llm: LlmBackendSpec,
    pub meteor: MeteorParams,
    pub max_upload_bytes: usize,
    videos_dir: PathBuf,
    llm_slots: Arc<Semaphore>,
    create_lock: Mutex<()>,
}

impl AppState {
    /// Opens (or creates) `cases/` and `videos/` under the store directory.
    pub fn open(
        config: &ServiceConfig,
        classifier: Arc<Classifier>,
        backend: Arc<dyn ChatBackend>,
    ) -> Result<Self, ServiceError> {
        config.llm.validate()?;
        let store = RecordStore::open(config.store_dir.join("cases"))?;
        let videos_dir = config.store_dir.join("videos");
        std::fs::create_dir_all(&videos_dir).map_err(|e| ServiceError::io(&videos_dir, e))?;
        Ok(Self {
            store,
            classifier,
            backend,
            llm: config.llm.clone(),
            meteor: MeteorParams::default(),
            max_upload_bytes: config.max_upload_bytes,
            videos_dir,
            llm_slots: Arc::new(Semaphore::new(config.llm_inflight.max(1))),
            create_lock: Mutex::new(()),
        })
    }

    pub fn video_path(&self, video_ref: &str) -> PathBuf {
        self.videos_dir.join(Path::new(video_ref).file_name().unwrap_or_default())
    }
}

type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/api/cases", post(create_case).get(list_cases))
        .route("/api/cases/{id}", get(get_case))
        .route("/api/cases/{id}/context", put(set_context))
        .route("/api/cases/{id}/video", post(upload_video))
        .route("/api/cases/{id}/classify", post(classify))
        .route("/api/cases/{id}/report", post(report))
        .route("/api/cases/{id}/grades", post(add_grade))
        .route("/api/cases/{id}/score", post(score))
        .layer(middleware::from_fn(negotiate))
        .with_state(state)
}

pub async fn serve(state: Shared, addr: &str) -> Result<(), ServiceError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| ServiceError::io(addr, e))?;
    eprintln!("listening on http://{}", listener.local_addr().map_err(|e| ServiceError::io(addr, e))?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ServiceError::io(addr, e))
}

/// Error body `{code, message, detail}`.
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    detail: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            detail: Value::Null,
        }
    }

    fn with_detail(mut self, detail: Value) -> Self {
        self.detail = detail;
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "code": self.code, "message": self.message, "detail": self.detail });
        (self.status, Json(body)).into_response()
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        use StatusCode as S;
        let msg = e.to_string();
        match e {
            ServiceError::Validation(_) | ServiceError::Assessment(_) => ApiError::new(S::BAD_REQUEST, "validation", msg),
            ServiceError::Data(DataError::Validation(_) | DataError::Decode(_) | DataError::Parse { .. }) => {
                ApiError::new(S::BAD_REQUEST, "validation", msg)
            }
            ServiceError::Model(ModelError::Shape(_) | ModelError::Config(_)) => {
                ApiError::new(S::BAD_REQUEST, "validation", msg)
            }
            ServiceError::NotFound(_) | ServiceError::Store(StoreError::NotFound(_)) => {
                ApiError::new(S::NOT_FOUND, "not_found", msg)
            }
            ServiceError::Workflow(WorkflowError::IllegalTransition { action, status, .. }) => {
                ApiError::new(S::CONFLICT, "illegal_transition", msg)
                    .with_detail(json!({ "action": action, "status": status }))
            }
            ServiceError::Workflow(WorkflowError::Validation(_)) => ApiError::new(S::BAD_REQUEST, "validation", msg),
            ServiceError::Store(StoreError::Conflict { current, .. }) => {
                ApiError::new(S::CONFLICT, "revision_conflict", msg).with_detail(json!({ "revision": current }))
            }
            ServiceError::PayloadTooLarge { limit } => {
                ApiError::new(S::PAYLOAD_TOO_LARGE, "payload_too_large", msg).with_detail(json!({ "limit": limit }))
            }
            ServiceError::Diagnosis(DiagnosisError::Malformed { reason, raw }) => {
                ApiError::new(S::UNPROCESSABLE_ENTITY, "malformed_llm_output", format!("malformed report: {reason}"))
                    .with_detail(json!({ "raw": raw }))
            }
            ServiceError::Diagnosis(DiagnosisError::Validation(_)) => ApiError::new(S::BAD_REQUEST, "validation", msg),
            ServiceError::Diagnosis(DiagnosisError::BackendUnavailable { attempts, failures }) => ApiError::new(
                S::BAD_GATEWAY,
                "backend_unavailable",
                format!("language model unavailable after {attempts} attempts"),
            )
            .with_detail(json!({ "failures": failures })),
            ServiceError::Diagnosis(_) => ApiError::new(S::BAD_GATEWAY, "backend_unavailable", msg),
            _ => ApiError::new(S::INTERNAL_SERVER_ERROR, "internal", msg),
        }
    }
}

impl From<WorkflowError> for ApiError {
    fn from(e: WorkflowError) -> Self {
        ServiceError::from(e).into()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn negotiate(req: Request, next: Next) -> Response {
    let acceptable = req
        .headers()
        .get(header::ACCEPT)
        .and_then(|v| v.to_str().ok())
        .is_none_or(|a| {
            a.split(',').any(|t| {
                let t = t.split(';').next().unwrap_or("").trim();
                matches!(t, "application/json" | "application/*" | "*/*" | "")
            })
        });
    if !acceptable {
        return ApiError::new(StatusCode::NOT_ACCEPTABLE, "not_acceptable", "responses are application/json")
            .into_response();
    }
    next.run(req).await
}

async fn read_body(body: Body, limit: usize) -> ApiResult<axum::body::Bytes> {
    to_bytes(body, limit)
        .await
        .map_err(|_| ServiceError::PayloadTooLarge { limit }.into())
}

async fn read_json<T: DeserializeOwned>(body: Body) -> ApiResult<T> {
    let bytes = read_body(body, MAX_JSON_BYTES).await?;
    serde_json::from_slice(&bytes)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "validation", format!("invalid JSON body: {e}")))
}

fn load(state: &AppState, id: &str) -> ApiResult<crate::store::Versioned<DiagnosisCase>> {
    state
        .store
        .get(id)
        .ok_or_else(|| ServiceError::NotFound(id.to_string()).into())
}

/// Compare-and-set loop: re-reads the case and rebuilds the action after a
/// concurrent write.
fn mutate(
    state: &AppState,
    id: &str,
    kind: ActionKind,
    make: impl Fn(&DiagnosisCase) -> Result<Action, ServiceError>,
) -> ApiResult<DiagnosisCase> {
    for _ in 0..CAS_ATTEMPTS {
        let cur = load(state, id)?;
        workflow::readiness(&cur.record, kind)?;
        let action = make(&cur.record)?;
        match workflow::apply(&cur.record, action, now_ms())? {
            None => return Ok(cur.record),
            Some(next) => match state.store.put(id, next.clone(), cur.revision) {
                Ok(_) => return Ok(next),
                Err(StoreError::Conflict { .. }) => continue,
                Err(e) => return Err(ServiceError::from(e).into()),
            },
        }
    }
    Err(ApiError::new(StatusCode::CONFLICT, "revision_conflict", "too many concurrent updates; retry"))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
        .map_err(ApiError::from)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CreateBody {
    Wrapped { context: ClinicalContext },
    Bare(ClinicalContext),
}

#[derive(Serialize)]
struct CaseSummary<'a> {
    case_id: &'a str,
    status: CaseStatus,
    revision: u64,
    label: Option<&'a str>,
    #[serde(rename = "final")]
    final_score: Option<f64>,
    final_display: Option<&'a str>,
    updated_at: u64,
}

#[derive(Serialize)]
struct CaseDetail<'a> {
    revision: u64,
    #[serde(flatten)]
    case: &'a DiagnosisCase,
}

fn detail(case: &DiagnosisCase, revision: u64) -> Json<Value> {
    Json(serde_json::to_value(CaseDetail { revision, case }).expect("case serializes"))
}

async fn create_case(State(state): State<Shared>, headers: HeaderMap, body: Body) -> ApiResult<Response> {
    let context = match read_json::<CreateBody>(body).await? {
        CreateBody::Wrapped { context } | CreateBody::Bare(context) => context,
    };
    context.validate().map_err(ServiceError::from)?;
    let key = headers
        .get("idempotency-key")
        .and_then(|v| v.to_str().ok())
        .map(str::to_string);
    let _guard = state.create_lock.lock().await;
    if let Some(k) = &key {
        if let Some((_, v)) = state
            .store
            .list()
            .into_iter()
            .find(|(_, v)| v.record.idempotency_key.as_deref() == Some(k))
        {
            let body = json!({ "case_id": v.record.case_id, "status": v.record.status });
            return Ok((StatusCode::CREATED, Json(body)).into_response());
        }
    }
    let id = ulid::Ulid::new().to_string();
    let mut case = DiagnosisCase::new(id.clone(), context, now_ms());
    case.idempotency_key = key;
    state.store.insert(&id, case).map_err(ServiceError::from)?;
    let body = json!({ "case_id": id, "status": CaseStatus::Created });
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

#[derive(Deserialize)]
struct Page {
    #[serde(default)]
    offset: usize,
    limit: Option<usize>,
}

/// Newest first; `total` counts every case.
async fn list_cases(State(state): State<Shared>, Query(page): Query<Page>) -> Json<Value> {
    let all = state.store.list();
    let total = all.len();
    let cases: Vec<CaseSummary> = all
        .iter()
        .rev()
        .skip(page.offset)
        .take(page.limit.unwrap_or(usize::MAX))
        .map(|(id, v)| CaseSummary {
            case_id: id,
            status: v.record.status,
            revision: v.revision,
            label: v.record.classification.as_ref().map(|c| c.label.as_str()),
            final_score: v.record.score.as_ref().map(|s| s.final_score),
            final_display: v.record.score.as_ref().map(|s| s.final_display.as_str()),
            updated_at: v.record.updated_at,
        })
        .collect();
    Json(json!({ "cases": cases, "total": total, "offset": page.offset }))
}

async fn get_case(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let v = load(&state, &id)?;
    Ok(detail(&v.record, v.revision))
}

async fn set_context(State(state): State<Shared>, UrlPath(id): UrlPath<String>, body: Body) -> ApiResult<Json<Value>> {
    let ctx = match read_json::<CreateBody>(body).await? {
        CreateBody::Wrapped { context } | CreateBody::Bare(context) => context,
    };
    mutate(&state, &id, ActionKind::SetContext, |_| Ok(Action::SetContext(ctx.clone())))?;
    let v = load(&state, &id)?;
    Ok(detail(&v.record, v.revision))
}

async fn upload_video(State(state): State<Shared>, UrlPath(id): UrlPath<String>, body: Body) -> ApiResult<Json<Value>> {
    let cur = load(&state, &id)?;
    workflow::readiness(&cur.record, ActionKind::AttachVideo)?;
    let bytes = read_body(body, state.max_upload_bytes).await?;
    if bytes.is_empty() {
        return Err(ServiceError::Validation("empty video upload".into()).into());
    }
    let video_ref = format!("{id}.bin");
    let path = state.video_path(&video_ref);
    let tmp = path.with_extension("bin.tmp");
    let len = bytes.len();
    blocking(move || {
        std::fs::write(&tmp, &bytes).map_err(|e| ServiceError::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| ServiceError::io(&path, e))
    })
    .await?;
    let r = video_ref.clone();
    mutate(&state, &id, ActionKind::AttachVideo, move |_| Ok(Action::AttachVideo(r.clone())))?;
    Ok(Json(json!({ "case_id": id, "video_ref": video_ref, "bytes": len })))
}

fn classification_body(case: &DiagnosisCase) -> Json<Value> {
    let c = case.classification.as_ref().expect("classified case has a classification");
    let o = case.opinion.as_ref().expect("classified case has an opinion");
    Json(json!({
        "label": c.label,
        "confidence": c.confidence,
        "probs": c.probs,
        "class_id": c.class_id,
        "opinion": o,
    }))
}

async fn classify(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let cur = load(&state, &id)?;
    if workflow::readiness(&cur.record, ActionKind::Classify)? == Readiness::AlreadyDone {
        return Ok(classification_body(&cur.record));
    }
    let path = state.video_path(cur.record.video_ref.as_deref().unwrap_or_default());
    let classifier = state.classifier.clone();
    let (classification, opinion) = blocking(move || {
        let c = classifier.classify_path(&path)?;
        let o = classifier.opinion(&c)?;
        Ok((c, o))
    })
    .await?;
    let case = mutate(&state, &id, ActionKind::Classify, |_| {
        Ok(Action::Classify {
            classification: classification.clone(),
            opinion: opinion.clone(),
        })
    })?;
    Ok(classification_body(&case))
}

fn report_body(case: &DiagnosisCase) -> Json<Value> {
    let r = case.report.as_ref().expect("reported case has a report");
    Json(json!({
        "preliminary_diagnosis": r.preliminary_diagnosis,
        "justification": r.justification,
        "follow_up": r.follow_up,
        "model_id": r.model_id,
        "latency_ms": r.latency_ms,
    }))
}

async fn report(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let cur = load(&state, &id)?;
    if workflow::readiness(&cur.record, ActionKind::Report)? == Readiness::AlreadyDone {
        return Ok(report_body(&cur.record));
    }
    let opinion = cur.record.opinion.as_ref().expect("classified case has an opinion");
    let prompt = build_prompt(opinion, &cur.record.context);
    let _permit = state
        .llm_slots
        .clone()
        .acquire_owned()
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?;
    let (spec, backend) = (state.llm.clone(), state.backend.clone());
    let generated = blocking(move || Ok(generate_report(&prompt, &spec, backend)?)).await?;
    let case = mutate(&state, &id, ActionKind::Report, |_| Ok(Action::Report(generated.clone())))?;
    Ok(report_body(&case))
}

#[derive(Deserialize)]
struct GradeBody {
    rater_id: String,
    role: String,
    score: u8,
}

async fn add_grade(State(state): State<Shared>, UrlPath(id): UrlPath<String>, body: Body) -> ApiResult<Json<Value>> {
    let g: GradeBody = read_json(body).await?;
    let role: Role = g.role.parse().map_err(ServiceError::from)?;
    let grade = Grade::new(g.rater_id, role, g.score).map_err(ServiceError::from)?;
    let case = mutate(&state, &id, ActionKind::AddGrade, |_| Ok(Action::AddGrade(grade.clone())))?;
    Ok(Json(json!({
        "case_id": id,
        "status": case.status,
        "grades": case.grades.len(),
    })))
}

#[derive(Deserialize)]
struct ScoreBody {
    reference_text: String,
}

async fn score(State(state): State<Shared>, UrlPath(id): UrlPath<String>, body: Body) -> ApiResult<Json<Value>> {
    let b: ScoreBody = read_json(body).await?;
    let params = state.meteor.clone();
    let case = mutate(&state, &id, ActionKind::Score, |case| {
        let report = case.report.as_ref().expect("graded case has a report");
        let scored = score_case(report, &b.reference_text, &case.grades, &params)?;
        Ok(Action::Score {
            reference_text: b.reference_text.clone(),
            sheet: scored.sheet,
            summary: scored.summary,
        })
    })?;
    let s = case.score.as_ref().expect("scored case has a score");
    Ok(Json(serde_json::to_value(s).expect("summary serializes")))
}
