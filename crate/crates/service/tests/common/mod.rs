#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use autous_agent::diagnosis::{ChatBackend, MockBackend};
use autous_core::ctu_net::{checkpoint, CtuNet, ModelConfig};
use autous_core::video_data::media::sample_to_npy;
use autous_core::video_data::synth_video;
use autous_service::classifier::default_class_names;
use autous_service::{router, AppState, Classifier, ServiceConfig};
use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use serde_json::Value;
use tower::ServiceExt;

pub fn tiny_model() -> CtuNet<f32> {
    CtuNet::new(ModelConfig::tiny().with_seed(3)).unwrap()
}

pub fn write_checkpoint(path: &Path) {
    checkpoint::save(&tiny_model(), path).unwrap();
}

pub fn clip_bytes(class_id: usize, seed: u64) -> Vec<u8> {
    let i = ModelConfig::tiny().input;
    sample_to_npy(&synth_video(class_id, seed, (i.frames, i.height, i.width)).unwrap())
}

pub fn classifier() -> Arc<Classifier> {
    Arc::new(Classifier::new(tiny_model(), default_class_names()).unwrap())
}

pub fn app_with(config: &ServiceConfig, backend: Arc<dyn ChatBackend>) -> (Router, Arc<AppState>) {
    let state = Arc::new(AppState::open(config, classifier(), backend).unwrap());
    (router(state.clone()), state)
}

pub fn app(dir: &Path) -> Router {
    app_with(&ServiceConfig::new(dir), Arc::new(MockBackend::canned())).0
}

pub async fn call(app: &Router, method: &str, uri: &str, body: Body, headers: &[(&str, &str)]) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    for (k, v) in headers {
        req = req.header(*k, *v);
    }
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let json = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, json)
}

pub async fn post_json(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    call(app, "POST", uri, Body::from(body.to_string()), &[("content-type", "application/json")]).await
}

pub async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    call(app, "GET", uri, Body::empty(), &[]).await
}

pub async fn post_empty(app: &Router, uri: &str) -> (StatusCode, Value) {
    call(app, "POST", uri, Body::empty(), &[]).await
}

pub async fn create(app: &Router) -> String {
    let (s, v) = post_json(
        app,
        "/api/cases",
        serde_json::json!({"context": {"chief_complaint": "Palpable lump in the left breast", "physical_exam": "Firm mobile mass"}}),
    )
    .await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    v["case_id"].as_str().unwrap().to_string()
}

/// Drives a new case up to `reported`.
pub async fn reported_case(app: &Router) -> String {
    let id = create(app).await;
    let (s, v) = call(app, "POST", &format!("/api/cases/{id}/video"), Body::from(clip_bytes(1, 5)), &[]).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let (s, v) = post_empty(app, &format!("/api/cases/{id}/classify")).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let (s, v) = post_empty(app, &format!("/api/cases/{id}/report")).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    id
}
