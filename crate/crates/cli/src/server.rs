//! HTTP service for interactive sessions: create a session from a dataset
//! case or a narrative, append facts, run the pipeline, inspect traces.
//!
//! Errors are problem-detail JSON with a stable `code`. Ground truth from the
//! dataset is never part of any response.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use factgate_core::backend::ChatBackend;
use factgate_core::pipeline::{run_pipeline, GapSet, PipelineOptions};
use factgate_core::{CaseView, Corpus, Dataset, Determination, Label, Passage, PipelineMode, PipelineTrace, QuestionType};
use parking_lot::Mutex;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Semaphore;

pub const API_SCHEMA_VERSION: u32 = 1;

pub struct AppState {
    corpus: Arc<Corpus>,
    dataset: Option<Arc<Dataset>>,
    backend: Arc<dyn ChatBackend>,
    mode: PipelineMode,
    options: PipelineOptions,
    trace_dir: Option<PathBuf>,
    /// Bounds how many pipeline runs execute at once across sessions.
    workers: Arc<Semaphore>,
    store: Mutex<Store>,
}

#[derive(Default)]
struct Store {
    sessions: HashMap<String, Session>,
    traces: HashMap<String, PipelineTrace>,
}

impl AppState {
    pub fn new(
        corpus: Arc<Corpus>,
        dataset: Option<Arc<Dataset>>,
        backend: Arc<dyn ChatBackend>,
        mode: PipelineMode,
        options: PipelineOptions,
    ) -> Self {
        Self {
            corpus,
            dataset,
            backend,
            mode,
            options,
            trace_dir: None,
            workers: Arc::new(Semaphore::new(1)),
            store: Mutex::new(Store::default()),
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = Arc::new(Semaphore::new(workers.max(1)));
        self
    }

    /// Also write every session trace to `dir`.
    pub fn with_trace_dir(mut self, dir: PathBuf) -> Self {
        self.trace_dir = Some(dir);
        self
    }
}

struct Session {
    id: String,
    /// Dataset case the session started from; also the id the pipeline sees.
    case_id: Option<String>,
    narrative: String,
    question_type: QuestionType,
    facts: Vec<String>,
    runs: Vec<RunView>,
    running: bool,
}

impl Session {
    fn current_narrative(&self) -> String {
        let mut text = self.narrative.trim_end().to_string();
        for fact in &self.facts {
            text.push_str("\n\n");
            text.push_str(fact.trim());
        }
        text
    }

    fn view(&self) -> SessionView {
        SessionView {
            schema_version: API_SCHEMA_VERSION,
            session_id: self.id.clone(),
            case_id: self.case_id.clone(),
            question_type: self.question_type,
            narrative: self.narrative.clone(),
            facts: self.facts.clone(),
            current_narrative: self.current_narrative(),
            running: self.running,
            runs: self.runs.clone(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    /// Start from this dataset case's narrative.
    #[serde(default)]
    pub case_id: Option<String>,
    /// Start from a free narrative instead; requires `question_type`.
    #[serde(default)]
    pub narrative: Option<String>,
    #[serde(default)]
    pub question_type: Option<QuestionType>,
}

#[derive(Debug, Clone, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct AddFact {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Determined,
    Inconclusive,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
pub struct RunView {
    pub run_index: usize,
    pub trace_id: String,
    pub status: RunStatus,
    /// Facts appended before this run started.
    pub facts_included: usize,
    pub determination: Option<Determination>,
    pub gap_set: Option<GapSet>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
pub struct SessionView {
    pub schema_version: u32,
    pub session_id: String,
    pub case_id: Option<String>,
    pub question_type: QuestionType,
    pub narrative: String,
    pub facts: Vec<String>,
    /// Narrative followed by the appended facts, as the next run will see it.
    pub current_narrative: String,
    pub running: bool,
    pub runs: Vec<RunView>,
}

#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
pub struct Problem {
    #[serde(rename = "type")]
    pub kind: String,
    pub title: String,
    pub status: u16,
    pub detail: String,
    pub code: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_id: Option<String>,
}

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    NotFound { code: &'static str, detail: String },
    RunInProgress(String),
    BackendUnavailable { detail: String, trace_id: String },
    PipelineFailed { detail: String, trace_id: String },
    Internal(String),
}

impl ApiError {
    fn parts(&self) -> (StatusCode, &'static str, &'static str) {
        match self {
            ApiError::BadRequest(_) => (StatusCode::BAD_REQUEST, "invalid_request", "Invalid request"),
            ApiError::NotFound { code, .. } => (StatusCode::NOT_FOUND, code, "Not found"),
            ApiError::RunInProgress(_) => (StatusCode::CONFLICT, "run_in_progress", "Run in progress"),
            ApiError::BackendUnavailable { .. } => (
                StatusCode::SERVICE_UNAVAILABLE,
                "backend_unavailable",
                "Model backend unavailable",
            ),
            ApiError::PipelineFailed { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "pipeline_failed", "Pipeline failed"),
            ApiError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal_error", "Internal error"),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code, title) = self.parts();
        let (detail, trace_id) = match self {
            ApiError::BadRequest(d) | ApiError::RunInProgress(d) | ApiError::Internal(d) => (d, None),
            ApiError::NotFound { detail, .. } => (detail, None),
            ApiError::BackendUnavailable { detail, trace_id } | ApiError::PipelineFailed { detail, trace_id } => {
                (detail, Some(trace_id))
            }
        };
        let body = Problem {
            kind: format!("urn:factgate:problem:{code}"),
            title: title.into(),
            status: status.as_u16(),
            detail,
            code: code.into(),
            trace_id,
        };
        (
            status,
            [(header::CONTENT_TYPE, "application/problem+json")],
            serde_json::to_string(&body).expect("problem serializes"),
        )
            .into_response()
    }
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload.map(|Json(v)| v).map_err(|e| ApiError::BadRequest(e.body_text()))
}

fn unknown_session(id: &str) -> ApiError {
    ApiError::NotFound {
        code: "unknown_session",
        detail: format!("no session {id:?}"),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/:id", get(get_session))
        .route("/sessions/:id/facts", post(add_fact))
        .route("/sessions/:id/run", post(run_session))
        .route("/traces/:id", get(get_trace))
        .route("/corpus/passages/:id", get(get_passage))
        .route("/openapi.json", get(openapi))
        .fallback(|| async {
            ApiError::NotFound {
                code: "unknown_route",
                detail: "no such endpoint".into(),
            }
        })
        .with_state(state)
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    payload: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let req = body(payload)?;
    let id = uuid::Uuid::new_v4().to_string();
    let session = match (req.case_id, req.narrative) {
        (Some(case_id), None) => {
            let dataset = state
                .dataset
                .as_ref()
                .ok_or_else(|| ApiError::BadRequest("this server has no dataset loaded".into()))?;
            let case = dataset.get(&case_id).ok_or_else(|| ApiError::NotFound {
                code: "unknown_case",
                detail: format!("no case {case_id:?}"),
            })?;
            if req.question_type.is_some_and(|q| q != case.question_type) {
                return Err(ApiError::BadRequest("question_type does not match the case".into()));
            }
            Session {
                id: id.clone(),
                case_id: Some(case.id.clone()),
                narrative: case.narrative.clone(),
                question_type: case.question_type,
                facts: Vec::new(),
                runs: Vec::new(),
                running: false,
            }
        }
        (None, Some(narrative)) => {
            if narrative.trim().is_empty() {
                return Err(ApiError::BadRequest("narrative must be non-empty".into()));
            }
            let question_type = req
                .question_type
                .ok_or_else(|| ApiError::BadRequest("a narrative needs a question_type".into()))?;
            Session {
                id: id.clone(),
                case_id: None,
                narrative,
                question_type,
                facts: Vec::new(),
                runs: Vec::new(),
                running: false,
            }
        }
        _ => {
            return Err(ApiError::BadRequest(
                "give exactly one of case_id or narrative".into(),
            ))
        }
    };
    let view = session.view();
    state.store.lock().sessions.insert(id, session);
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    let store = state.store.lock();
    store.sessions.get(&id).map(|s| Json(s.view())).ok_or_else(|| unknown_session(&id))
}

async fn add_fact(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    payload: Result<Json<AddFact>, JsonRejection>,
) -> Result<Json<SessionView>, ApiError> {
    let req = body(payload)?;
    let mut store = state.store.lock();
    let session = store.sessions.get_mut(&id).ok_or_else(|| unknown_session(&id))?;
    if req.text.trim().is_empty() {
        return Err(ApiError::BadRequest("fact text must be non-empty".into()));
    }
    session.facts.push(req.text);
    Ok(Json(session.view()))
}

/// Clears the running flag even if the run task fails.
struct RunningGuard {
    state: Arc<AppState>,
    id: String,
}

impl Drop for RunningGuard {
    fn drop(&mut self) {
        if let Some(s) = self.state.store.lock().sessions.get_mut(&self.id) {
            s.running = false;
        }
    }
}

async fn run_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<RunView>, ApiError> {
    let (view, facts_included, run_index) = {
        let mut store = state.store.lock();
        let session = store.sessions.get_mut(&id).ok_or_else(|| unknown_session(&id))?;
        if session.running {
            return Err(ApiError::RunInProgress(format!("session {id:?} already has a run in progress")));
        }
        session.running = true;
        let view = CaseView {
            id: session.case_id.clone().unwrap_or_else(|| session.id.clone()),
            narrative: session.current_narrative(),
            question_type: session.question_type,
        };
        (view, session.facts.len(), session.runs.len())
    };
    let guard = RunningGuard {
        state: state.clone(),
        id: id.clone(),
    };
    let trace_id = uuid::Uuid::new_v4().to_string();
    let task_state = state.clone();
    let task_trace_id = trace_id.clone();
    let _permit = state
        .workers
        .clone()
        .acquire_owned()
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    let run = tokio::task::spawn_blocking(move || {
        let options = PipelineOptions {
            trace_id: Some(task_trace_id),
            ..task_state.options.clone()
        };
        run_pipeline(&view, &task_state.corpus, task_state.mode, task_state.backend.as_ref(), &options)
    })
    .await
    .map_err(|e| ApiError::Internal(format!("run task failed: {e}")))?;

    if let Some(dir) = &state.trace_dir {
        if let Err(e) = run.trace.write_to_dir(dir) {
            tracing::warn!(error = %e, "cannot write session trace");
        }
    }
    let record = RunView {
        run_index,
        trace_id: trace_id.clone(),
        status: match &run.outcome {
            Ok(d) if d.label == Label::Inconclusive => RunStatus::Inconclusive,
            Ok(_) => RunStatus::Determined,
            Err(_) => RunStatus::Failed,
        },
        facts_included,
        determination: run.outcome.as_ref().ok().cloned(),
        gap_set: run.trace.gap_set.clone(),
        error: run.outcome.as_ref().err().map(|e| e.to_string()),
    };
    {
        let mut store = state.store.lock();
        store.traces.insert(trace_id.clone(), run.trace);
        if let Some(s) = store.sessions.get_mut(&id) {
            s.runs.push(record.clone());
        }
    }
    drop(guard);
    match run.outcome {
        Ok(_) => Ok(Json(record)),
        Err(e) if e.is_backend_unavailable() => Err(ApiError::BackendUnavailable {
            detail: e.to_string(),
            trace_id,
        }),
        Err(e) => Err(ApiError::PipelineFailed {
            detail: e.to_string(),
            trace_id,
        }),
    }
}

async fn get_trace(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<PipelineTrace>, ApiError> {
    state.store.lock().traces.get(&id).cloned().map(Json).ok_or_else(|| ApiError::NotFound {
        code: "unknown_trace",
        detail: format!("no trace {id:?}"),
    })
}

async fn get_passage(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Passage>, ApiError> {
    state.corpus.fetch(&id).cloned().map(Json).ok_or_else(|| ApiError::NotFound {
        code: "unknown_passage",
        detail: format!("no passage {id:?}"),
    })
}

async fn openapi() -> Json<Value> {
    Json(openapi_document())
}

/// OpenAPI 3 description of the service, with component schemas generated
/// from the request and response types.
pub fn openapi_document() -> Value {
    let mut gen = schemars::gen::SchemaSettings::openapi3().into_generator();
    gen.subschema_for::<CreateSession>();
    gen.subschema_for::<AddFact>();
    gen.subschema_for::<SessionView>();
    gen.subschema_for::<RunView>();
    gen.subschema_for::<Passage>();
    gen.subschema_for::<Problem>();
    let schemas = serde_json::to_value(gen.definitions()).expect("schemas serialize");

    let reference = |name: &str| json!({ "$ref": format!("#/components/schemas/{name}") });
    let content = |name: &str| json!({ "application/json": { "schema": reference(name) } });
    let problem = |description: &str| {
        json!({
            "description": description,
            "content": { "application/problem+json": { "schema": reference("Problem") } }
        })
    };
    let id_param = |description: &str| {
        json!([{ "name": "id", "in": "path", "required": true, "description": description, "schema": { "type": "string" } }])
    };
    json!({
        "openapi": "3.0.3",
        "info": { "title": "factgate", "version": env!("CARGO_PKG_VERSION") },
        "paths": {
            "/sessions": {
                "post": {
                    "summary": "Create a session from a dataset case or a narrative",
                    "requestBody": { "required": true, "content": content("CreateSession") },
                    "responses": {
                        "201": { "description": "Session created", "content": content("SessionView") },
                        "400": problem("Malformed request"),
                        "404": problem("Unknown case id")
                    }
                }
            },
            "/sessions/{id}": {
                "get": {
                    "summary": "Session state and run history",
                    "parameters": id_param("Session id"),
                    "responses": {
                        "200": { "description": "Session", "content": content("SessionView") },
                        "404": problem("Unknown session")
                    }
                }
            },
            "/sessions/{id}/facts": {
                "post": {
                    "summary": "Append a fact to the session narrative",
                    "parameters": id_param("Session id"),
                    "requestBody": { "required": true, "content": content("AddFact") },
                    "responses": {
                        "200": { "description": "Updated session", "content": content("SessionView") },
                        "400": problem("Malformed request"),
                        "404": problem("Unknown session")
                    }
                }
            },
            "/sessions/{id}/run": {
                "post": {
                    "summary": "Run the pipeline on the current narrative",
                    "parameters": id_param("Session id"),
                    "responses": {
                        "200": { "description": "Run result", "content": content("RunView") },
                        "404": problem("Unknown session"),
                        "409": problem("A run is already in progress for this session"),
                        "500": problem("The pipeline failed; the trace is still recorded"),
                        "503": problem("The model backend is unavailable")
                    }
                }
            },
            "/traces/{id}": {
                "get": {
                    "summary": "Full pipeline trace of a session run",
                    "parameters": id_param("Trace id"),
                    "responses": {
                        "200": { "description": "Trace", "content": { "application/json": { "schema": { "type": "object" } } } },
                        "404": problem("Unknown trace")
                    }
                }
            },
            "/corpus/passages/{id}": {
                "get": {
                    "summary": "One corpus passage",
                    "parameters": id_param("Passage id"),
                    "responses": {
                        "200": { "description": "Passage", "content": content("Passage") },
                        "404": problem("Unknown passage")
                    }
                }
            },
            "/openapi.json": {
                "get": {
                    "summary": "This document",
                    "responses": { "200": { "description": "OpenAPI document" } }
                }
            }
        },
        "components": { "schemas": schemas }
    })
}

/// Serves until ctrl-c.
pub async fn serve(state: Arc<AppState>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn openapi_lists_every_route_and_schema() {
        let doc = openapi_document();
        for path in [
            "/sessions",
            "/sessions/{id}",
            "/sessions/{id}/facts",
            "/sessions/{id}/run",
            "/traces/{id}",
            "/corpus/passages/{id}",
            "/openapi.json",
        ] {
            assert!(doc["paths"].get(path).is_some(), "{path}");
        }
        for schema in ["CreateSession", "AddFact", "SessionView", "RunView", "Passage", "Problem", "Determination"] {
            assert!(doc["components"]["schemas"].get(schema).is_some(), "{schema}");
        }
    }

    #[test]
    fn problem_body_carries_code_and_status() {
        let resp = ApiError::RunInProgress("busy".into()).into_response();
        assert_eq!(resp.status(), StatusCode::CONFLICT);
        assert_eq!(resp.headers()[header::CONTENT_TYPE], "application/problem+json");
    }

    #[test]
    fn current_narrative_appends_facts_in_order() {
        let s = Session {
            id: "s".into(),
            case_id: None,
            narrative: "Base.  ".into(),
            question_type: QuestionType::DirectQuestion,
            facts: vec!["One.".into(), " Two. ".into()],
            runs: Vec::new(),
            running: false,
        };
        assert_eq!(s.current_narrative(), "Base.\n\nOne.\n\nTwo.");
    }
}
