//! HTTP service for reviewing a winnower project: browse rounds and their
//! review queues, read documents, submit labels, and trigger the next round.
//!
//! JSON everywhere except documents (plain text) and reports (the same
//! tab-separated bytes the command line prints). Errors are
//! `{"code": ..., "message": ...}`.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, PoisonError, RwLock, RwLockReadGuard, RwLockWriteGuard};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde::{Deserialize, Serialize};
use winnower_core::divergence::Metric;
use winnower_core::project::{Project, ProjectError, ReportKind, ReportOptions, TopicSource};
use winnower_core::topics::LdaParams;
use winnower_core::winnow::{Label, LabelConflict};

pub const VERSION_HEADER: &str = "x-winnower-version";
pub const ANNOTATOR_HEADER: &str = "x-annotator";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(skip)]
    status: u16,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { code: code.to_string(), message: message.into(), status: status.as_u16() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn not_found(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, message)
    }
}

impl From<ProjectError> for ApiError {
    fn from(e: ProjectError) -> Self {
        let code = e.code();
        let status = match code {
            "unknown_round" | "unknown_document" | "no_rounds" | "no_topics" => StatusCode::NOT_FOUND,
            "round_closed" | "already_sampled" | "not_winnowed" | "no_relevant_labels" | "nothing_labeled"
            | "no_corpus" | "locked" => StatusCode::CONFLICT,
            "bad_input" | "unknown_topic" => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: u64,
    pub kind: String,
    pub status: JobStatus,
    pub result: Option<serde_json::Value>,
    pub error: Option<ApiError>,
}

/// Shared server state. Reads share the project; writes (labels, jobs) hold it exclusively.
pub struct AppState {
    project: RwLock<Project>,
    jobs: Mutex<BTreeMap<u64, Job>>,
    next_job: AtomicU64,
}

impl AppState {
    pub fn new(project: Project) -> Arc<Self> {
        Arc::new(Self {
            project: RwLock::new(project),
            jobs: Mutex::new(BTreeMap::new()),
            next_job: AtomicU64::new(1),
        })
    }

    fn read(&self) -> RwLockReadGuard<'_, Project> {
        self.project.read().unwrap_or_else(PoisonError::into_inner)
    }

    fn write(&self) -> RwLockWriteGuard<'_, Project> {
        self.project.write().unwrap_or_else(PoisonError::into_inner)
    }

    fn set_job(&self, job: Job) {
        self.jobs.lock().unwrap_or_else(PoisonError::into_inner).insert(job.id, job);
    }

    /// Run `work` on the blocking pool with exclusive project access.
    fn spawn_job<F, T>(self: &Arc<Self>, kind: &str, work: F) -> Job
    where
        F: FnOnce(&Project) -> Result<T, ProjectError> + Send + 'static,
        T: Serialize,
    {
        let id = self.next_job.fetch_add(1, Ordering::SeqCst);
        let job = Job { id, kind: kind.to_string(), status: JobStatus::Running, result: None, error: None };
        self.set_job(job.clone());
        let state = self.clone();
        let kind = kind.to_string();
        tokio::task::spawn_blocking(move || {
            let outcome = {
                let project = state.write();
                work(&project)
            };
            let done = match outcome {
                Ok(value) => Job {
                    id,
                    kind,
                    status: JobStatus::Succeeded,
                    result: Some(serde_json::to_value(value).expect("job result serializes")),
                    error: None,
                },
                Err(e) => Job { id, kind, status: JobStatus::Failed, result: None, error: Some(e.into()) },
            };
            state.set_job(done);
        });
        job
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/rounds", get(list_rounds))
        .route("/rounds/{id}", get(get_round))
        .route("/rounds/{id}/queue", get(get_queue))
        .route("/rounds/{id}/labels", post(post_label))
        .route("/rounds/{id}/reseed", post(post_reseed))
        .route("/rounds/{id}/winnow", post(post_winnow))
        .route("/rounds/{id}/topics", post(post_topics))
        .route("/rounds/{id}/topics/names", post(post_topic_names))
        .route("/rounds/{id}/reports/{kind}", get(get_report))
        .route("/documents/{id}", get(get_document))
        .route("/jobs/{id}", get(get_job))
        .fallback(|| async { ApiError::not_found("not_found", "no such endpoint") })
        .layer(axum::middleware::map_response(add_version))
        .with_state(state)
}

async fn add_version(mut response: Response) -> Response {
    response.headers_mut().insert(VERSION_HEADER, HeaderValue::from_static(VERSION));
    response
}

/// Serve `project` on `addr` until the process exits.
pub async fn serve(project: Project, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(AppState::new(project))).await
}

fn round_id(raw: &str) -> ApiResult<u32> {
    raw.parse().map_err(|_| ApiError::not_found("unknown_round", format!("unknown round {raw:?}")))
}

async fn list_rounds(State(state): State<Arc<AppState>>) -> ApiResult<Response> {
    Ok(Json(state.read().rounds()?).into_response())
}

async fn get_round(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let id = round_id(&id)?;
    Ok(Json(state.read().summary(id)?).into_response())
}

async fn get_queue(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let id = round_id(&id)?;
    Ok(Json(state.read().queue(Some(id))?).into_response())
}

async fn get_document(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let text = state.read().document_text(&id)?;
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], text).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelBody {
    pub doc_id: String,
    pub relevant: bool,
    pub annotator: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct LabelAck {
    pub round_id: u32,
    /// The label now in effect for the document.
    pub effective: Label,
    pub conflicts: Vec<ConflictView>,
}

#[derive(Debug, Serialize)]
pub struct ConflictView {
    pub kept: Label,
    pub discarded: Label,
}

impl From<LabelConflict> for ConflictView {
    fn from(c: LabelConflict) -> Self {
        Self { kept: c.kept, discarded: c.discarded }
    }
}

async fn post_label(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Result<Json<LabelBody>, JsonRejection>,
) -> ApiResult<Response> {
    let id = round_id(&id)?;
    let Json(body) = body?;
    let annotator = body
        .annotator
        .or_else(|| headers.get(ANNOTATOR_HEADER).and_then(|v| v.to_str().ok()).map(str::to_string))
        .filter(|a| !a.trim().is_empty())
        .ok_or_else(|| ApiError::bad_request("annotator missing: set it in the body or the X-Annotator header"))?;
    if annotator.contains(['\t', '\n']) || body.doc_id.contains(['\t', '\n']) {
        return Err(ApiError::bad_request("doc_id and annotator must not contain tabs or newlines"));
    }

    let project = state.write();
    // stamped under the write lock so timestamp order matches commit order
    let label = Label {
        doc_id: body.doc_id.clone(),
        relevant: body.relevant,
        annotator,
        round_id: id,
        timestamp: Utc::now(),
    };
    let report = project.label(Some(id), vec![label])?;
    if let Some((_, reason)) = report.rejected.into_iter().next() {
        return Err(ApiError::new(StatusCode::CONFLICT, "label_rejected", reason));
    }
    let round = project.load_round(id)?;
    let effective = round
        .effective_labels()
        .get(body.doc_id.as_str())
        .map(|l| (*l).clone())
        .expect("accepted label is effective or superseded by a later one");
    let ack = LabelAck {
        round_id: id,
        effective,
        conflicts: report.conflicts.into_iter().map(ConflictView::from).collect(),
    };
    Ok((StatusCode::CREATED, Json(ack)).into_response())
}

fn parse_metric(raw: Option<&str>) -> ApiResult<Option<Metric>> {
    raw.map(|m| m.parse().map_err(|e: winnower_core::divergence::DivergenceError| ApiError::bad_request(e.to_string())))
        .transpose()
}

fn accepted(job: Job) -> Response {
    (StatusCode::ACCEPTED, Json(job)).into_response()
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReseedBody {
    pub metric: Option<String>,
}

async fn post_reseed(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Option<Json<ReseedBody>>,
) -> ApiResult<Response> {
    let id = round_id(&id)?;
    let body = body.map(|Json(b)| b).unwrap_or_default();
    let metric = parse_metric(body.metric.as_deref())?;
    state.read().summary(id)?;
    Ok(accepted(state.spawn_job("reseed", move |p| p.reseed(Some(id), metric))))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WinnowBody {
    pub metric: Option<String>,
    pub percentile: f64,
}

async fn post_winnow(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<WinnowBody>, JsonRejection>,
) -> ApiResult<Response> {
    let id = round_id(&id)?;
    let Json(body) = body?;
    let metric = parse_metric(body.metric.as_deref())?;
    if !(body.percentile > 0.0 && body.percentile <= 100.0) {
        return Err(ApiError::bad_request(format!("percentile {} outside (0, 100]", body.percentile)));
    }
    state.read().summary(id)?;
    let percentile = body.percentile;
    Ok(accepted(state.spawn_job("winnow", move |p| p.winnow(Some(id), percentile, metric))))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopicsBody {
    pub topics: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub iterations: Option<usize>,
    pub seed: Option<u64>,
    pub source: Option<String>,
}

async fn post_topics(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Option<Json<TopicsBody>>,
) -> ApiResult<Response> {
    let id = round_id(&id)?;
    let body = body.map(|Json(b)| b).unwrap_or_default();
    let source: TopicSource = match body.source.as_deref() {
        Some(s) => s.parse()?,
        None => TopicSource::default(),
    };
    let params = {
        let project = state.read();
        project.summary(id)?;
        let mut defaults = project.config().lda;
        if let Some(k) = body.topics {
            defaults.topics = k;
            if body.alpha.is_none() {
                defaults.alpha = None;
            }
        }
        let mut params: LdaParams = defaults.params(body.seed.unwrap_or(0));
        if let Some(a) = body.alpha {
            params.alpha = a;
        }
        if let Some(b) = body.beta {
            params.beta = b;
        }
        if let Some(n) = body.iterations {
            params.iterations = n;
        }
        params
    };
    Ok(accepted(state.spawn_job("topics", move |p| p.train_topics(Some(id), params, source, None))))
}

async fn post_topic_names(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<BTreeMap<String, String>>, JsonRejection>,
) -> ApiResult<Response> {
    let id = round_id(&id)?;
    let Json(raw) = body?;
    let mut names = BTreeMap::new();
    for (k, v) in raw {
        let topic: usize = k.parse().map_err(|_| ApiError::bad_request(format!("bad topic id {k:?}")))?;
        if v.contains(['\t', '\n']) {
            return Err(ApiError::bad_request("topic names must not contain tabs or newlines"));
        }
        names.insert(topic, v);
    }
    let summaries = state.write().name_topics(Some(id), names)?;
    Ok(Json(summaries).into_response())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportQuery {
    pub bins: Option<usize>,
    pub percentile: Option<f64>,
    pub n: Option<usize>,
}

async fn get_report(
    State(state): State<Arc<AppState>>,
    Path((id, kind)): Path<(String, String)>,
    query: Result<Query<ReportQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<Response> {
    let id = round_id(&id)?;
    let kind: ReportKind = kind
        .parse()
        .map_err(|_| ApiError::not_found("unknown_report", format!("unknown report {kind:?}")))?;
    let Query(q) = query.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let opts = ReportOptions { bins: q.bins, percentile: q.percentile, n: q.n };
    let body = state.read().report(Some(id), kind, opts)?;
    Ok(([(header::CONTENT_TYPE, "text/tab-separated-values; charset=utf-8")], body).into_response())
}

async fn get_job(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let job = id
        .parse::<u64>()
        .ok()
        .and_then(|id| state.jobs.lock().unwrap_or_else(PoisonError::into_inner).get(&id).cloned())
        .ok_or_else(|| ApiError::not_found("unknown_job", format!("unknown job {id:?}")))?;
    Ok(Json(job).into_response())
}
