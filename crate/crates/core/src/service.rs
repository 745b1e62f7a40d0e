//! Local HTTP+JSON service for interactive sessions.
//!
//! Nothing is applied without an explicit accept. Mutations of one session
//! are serialized: a request that finds the session busy gets 409. There
//! is no authentication, so the default bind address is loopback only.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex as StdMutex};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{Mutex, OwnedMutexGuard};

use crate::llm::LanguageModel;
use crate::prompt::{Feedback, TaskKind, TemplateSet};
use crate::repair::{axiomatize_failing, Engine, LoopConfig, RepairError};
use crate::runlog::{Action, Event, Hashes, RunLog};
use crate::source::{unified_diff, ContentHash, SourceText};
use crate::suggestion::{candidates_from_response, combine, Candidate, CandidateKind, PlacementContext, PrecheckResult, SuggestionError};
use crate::verifier::{Diagnostic, VerificationResult, Verifier};

pub const DEFAULT_BIND: &str = "127.0.0.1:8765";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum Decision {
    Pending,
    Accepted,
    Rejected,
}

struct SessionState {
    task: TaskKind,
    text: SourceText,
    result: VerificationResult,
    candidates: Vec<(Candidate, Decision)>,
    rejected: Vec<String>,
    round: u32,
}

struct Session {
    log: Arc<RunLog>,
    state: Arc<Mutex<SessionState>>,
}

/// Shared service state.
#[derive(Clone)]
pub struct AppState {
    verifier: Arc<dyn Verifier>,
    llm: Arc<dyn LanguageModel>,
    templates: Arc<TemplateSet>,
    loop_cfg: LoopConfig,
    ui_dir: Option<PathBuf>,
    sessions: Arc<StdMutex<HashMap<String, Arc<Session>>>>,
    counter: Arc<AtomicU64>,
}

impl AppState {
    pub fn new(verifier: Arc<dyn Verifier>, llm: Arc<dyn LanguageModel>, loop_cfg: LoopConfig) -> Self {
        AppState {
            verifier,
            llm,
            templates: Arc::new(TemplateSet::builtin()),
            loop_cfg,
            ui_dir: None,
            sessions: Arc::default(),
            counter: Arc::default(),
        }
    }

    /// Serve static files from `dir` under `/ui/`.
    pub fn with_ui_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.ui_dir = Some(dir.into());
        self
    }

    pub fn with_templates(mut self, templates: TemplateSet) -> Self {
        self.templates = Arc::new(templates);
        self
    }

    fn engine(&self, log: Arc<RunLog>) -> Engine {
        Engine { verifier: self.verifier.clone(), llm: self.llm.clone(), templates: self.templates.clone(), log }
    }

    fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.sessions
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("no session {id}")))
    }
}

#[derive(Debug)]
pub struct ApiError(pub StatusCode, pub String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<RepairError> for ApiError {
    fn from(e: RepairError) -> Self {
        ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

fn parse_body<T: DeserializeOwned + Default>(body: &Bytes) -> Result<T, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))
}

fn lock(session: &Session) -> Result<OwnedMutexGuard<SessionState>, ApiError> {
    session
        .state
        .clone()
        .try_lock_owned()
        .map_err(|_| ApiError(StatusCode::CONFLICT, "session is busy".into()))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    source: Option<String>,
    task: Option<TaskKind>,
    #[serde(default)]
    path: Option<String>,
}

#[derive(Serialize)]
struct VerifyView {
    status: crate::verifier::VerificationStatus,
    diagnostics: Vec<Diagnostic>,
    content_hash: ContentHash,
    content: String,
}

impl VerifyView {
    fn of(text: &SourceText, r: &VerificationResult) -> Self {
        VerifyView {
            status: r.status,
            diagnostics: r.diagnostics.clone(),
            content_hash: text.content_hash().clone(),
            content: text.content().to_string(),
        }
    }
}

async fn create_session(State(app): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let body: CreateBody = parse_body(&body)?;
    let (Some(source), Some(task)) = (body.source, body.task) else {
        return Err(ApiError(StatusCode::UNPROCESSABLE_ENTITY, "`source` and `task` are required".into()));
    };
    let n = app.counter.fetch_add(1, Ordering::SeqCst);
    let id = ContentHash::of(&format!("{n}:{}:{source}", std::process::id())).short().to_string();
    let text = SourceText::new(body.path.unwrap_or_else(|| "session.dfy".into()), source);
    let log = Arc::new(RunLog::new());
    let engine = app.engine(log.clone());
    let (text, result) = blocking(move || {
        let r = engine.verify(&text, 0)?;
        Ok((text, r))
    })
    .await?;
    let diagnostics = result.diagnostics.clone();
    let status = result.status;
    let state = SessionState { task, text, result, candidates: Vec::new(), rejected: Vec::new(), round: 0 };
    app.sessions
        .lock()
        .unwrap_or_else(|p| p.into_inner())
        .insert(id.clone(), Arc::new(Session { log, state: Arc::new(Mutex::new(state)) }));
    Ok((StatusCode::CREATED, Json(json!({ "id": id, "diagnostics": diagnostics, "status": status }))).into_response())
}

#[derive(Serialize)]
struct CandidateView {
    index: usize,
    kind: CandidateKind,
    display_code: String,
    diff: String,
    precheck: PrecheckResult,
    round: u32,
}

async fn suggest(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<serde_json::Value>, ApiError> {
    let session = app.session(&id)?;
    let mut st = lock(&session)?;
    let engine = app.engine(session.log.clone());
    let budget = app.loop_cfg.budget_tokens;
    let threshold = app.loop_cfg.rewrite_threshold;
    blocking(move || {
        let Some(target) = st.result.errors().min_by_key(|d| (d.span.start_line, d.span.start_col)).cloned() else {
            return Ok(Json(json!({ "round": st.round, "candidates": [] })));
        };
        st.round += 1;
        let round = st.round;
        let feedback = (round > 1).then(|| Feedback {
            round: round - 1,
            previous_code: None,
            diagnostics: st.result.errors().cloned().collect(),
            rejected: st.rejected.clone(),
        });
        let prompt = engine.build_prompt(st.task, &st.text, &st.result, &target, feedback, round, budget)?;
        let response = engine.ask(&prompt)?;
        let placement = PlacementContext { target: Some(&target), rewrite_threshold: threshold };
        let found = match candidates_from_response(&st.text, &response, placement) {
            Ok(c) => c,
            Err(e @ (SuggestionError::NoCodeFound | SuggestionError::UnplaceableSnippet(_))) => {
                return Ok(Json(json!({ "round": round, "candidates": [], "note": e.to_string() })));
            }
            Err(e) => return Err(RepairError::from(e).into()),
        };
        // one card per answer, as the loop would try it
        let mut views = Vec::new();
        if let Some(mut c) = combine(&st.text, &found) {
            let patched = crate::apply_patch(&st.text, &c.patch).map_err(RepairError::from)?;
            c.precheck = engine.precheck(&patched, round)?.0;
            let index = st.candidates.len();
            views.push(CandidateView {
                index,
                kind: c.kind,
                display_code: c.display_code.clone(),
                diff: unified_diff(st.text.path(), st.text.content(), patched.content()),
                precheck: c.precheck.clone(),
                round,
            });
            st.candidates.push((c, Decision::Pending));
        }
        Ok(Json(json!({ "round": round, "candidates": views })))
    })
    .await
}

fn candidate_index(st: &SessionState, i: usize) -> Result<&Candidate, ApiError> {
    let (c, decision) = st.candidates.get(i).ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("no candidate {i}")))?;
    if *decision != Decision::Pending {
        return Err(ApiError(StatusCode::CONFLICT, format!("candidate {i} was already {decision:?}").to_lowercase()));
    }
    Ok(c)
}

async fn accept(
    State(app): State<AppState>,
    UrlPath((id, i)): UrlPath<(String, usize)>,
) -> Result<Json<VerifyView>, ApiError> {
    let session = app.session(&id)?;
    let mut st = lock(&session)?;
    let engine = app.engine(session.log.clone());
    blocking(move || {
        let c = candidate_index(&st, i)?;
        if c.patch.base_hash != *st.text.content_hash() {
            return Err(ApiError(StatusCode::CONFLICT, format!("candidate {i} was made for an older version")));
        }
        let next = crate::apply_patch(&st.text, &c.patch).map_err(RepairError::from)?;
        engine.log.record(
            st.round,
            Action::Accept,
            Hashes { before: Some(st.text.content_hash().to_string()), after: Some(next.content_hash().to_string()) },
            format!("accepted candidate {i}"),
            serde_json::Value::Null,
        );
        let result = engine.verify(&next, st.round)?;
        st.candidates[i].1 = Decision::Accepted;
        st.text = next;
        st.result = result;
        Ok(Json(VerifyView::of(&st.text, &st.result)))
    })
    .await
}

async fn reject(
    State(app): State<AppState>,
    UrlPath((id, i)): UrlPath<(String, usize)>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let session = app.session(&id)?;
    let mut st = lock(&session)?;
    let code = candidate_index(&st, i)?.display_code.clone();
    st.candidates[i].1 = Decision::Rejected;
    st.rejected.push(code);
    session.log.record(st.round, Action::Reject, Hashes::default(), format!("rejected candidate {i}"), serde_json::Value::Null);
    Ok(Json(json!({ "index": i, "decision": "rejected" })))
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct VerifyBody {
    #[serde(default)]
    allow_axioms: bool,
}

async fn verify(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<VerifyView>, ApiError> {
    let body: VerifyBody = parse_body(&body)?;
    let session = app.session(&id)?;
    let mut st = lock(&session)?;
    let engine = app.engine(session.log.clone());
    blocking(move || {
        let mut result = engine.verify(&st.text, st.round)?;
        if body.allow_axioms && !result.is_verified() {
            let errors: Vec<Diagnostic> = result.errors().cloned().collect();
            let (next, changed) = axiomatize_failing(&st.text, &errors)?;
            if changed {
                result = engine.verify(&next, st.round)?;
                st.text = next;
            }
        }
        st.result = result;
        Ok(Json(VerifyView::of(&st.text, &st.result)))
    })
    .await
}

#[derive(Deserialize)]
struct Since {
    #[serde(default)]
    since: u64,
}

async fn events(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<Since>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let session = app.session(&id)?;
    let events: Vec<Event> = session.log.since(q.since);
    Ok(Json(json!({ "events": events })))
}

async fn health(State(app): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "engine_version": crate::ENGINE_VERSION,
        "model_id": app.llm.model_id(),
    }))
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js") | Some("mjs") => "text/javascript; charset=utf-8",
        Some("css") => "text/css; charset=utf-8",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        _ => "application/octet-stream",
    }
}

async fn ui_file(app: &AppState, rel: &str) -> Response {
    let Some(dir) = &app.ui_dir else {
        return ApiError(StatusCode::NOT_FOUND, "no UI configured".into()).into_response();
    };
    let rel = Path::new(if rel.is_empty() { "index.html" } else { rel });
    if !rel.components().all(|c| matches!(c, Component::Normal(_))) {
        return ApiError(StatusCode::NOT_FOUND, "bad path".into()).into_response();
    }
    let path = dir.join(rel);
    match std::fs::read(&path) {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response(),
        Err(_) => ApiError(StatusCode::NOT_FOUND, format!("no file {}", rel.display())).into_response(),
    }
}

async fn ui_index(State(app): State<AppState>) -> Response {
    ui_file(&app, "").await
}

async fn ui_path(State(app): State<AppState>, UrlPath(rel): UrlPath<String>) -> Response {
    ui_file(&app, &rel).await
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/:id/suggest", post(suggest))
        .route("/v1/sessions/:id/candidates/:i/accept", post(accept))
        .route("/v1/sessions/:id/candidates/:i/reject", post(reject))
        .route("/v1/sessions/:id/verify", post(verify))
        .route("/v1/sessions/:id/events", get(events))
        .route("/ui/", get(ui_index))
        .route("/ui/*path", get(ui_path))
        .with_state(state)
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    if !addr.ip().is_loopback() {
        tracing::warn!(%addr, "serving on a non-loopback address without authentication");
    }
    tracing::info!(addr = %listener.local_addr()?, "engine service listening");
    axum::serve(listener, router(state)).await
}
