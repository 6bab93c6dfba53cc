//! HTTP JSON API over catalogs, sessions, scoring and comparisons.
//!
//! Every handler is a thin projection of one engine call. Sessions in
//! progress are kept in memory and written to the store after each change:
//! as a draft while questions remain, as a scored session once complete.
//!
//! | Method | Path | Engine call |
//! |---|---|---|
//! | GET | `/v1/catalogs` | catalog summaries with lint counts |
//! | GET | `/v1/catalogs/{id}` | the catalog |
//! | GET | `/v1/catalogs/{id}/lint` | `lint_catalog` |
//! | POST | `/v1/sessions` | `Session::start` |
//! | GET | `/v1/sessions/{id}` | session state and next question |
//! | GET | `/v1/sessions/{id}/next` | `current_question` and `progress` |
//! | POST | `/v1/sessions/{id}/answers` | `submit_answer` |
//! | PATCH | `/v1/sessions/{id}/answers/{indicator}` | `revise_answer` |
//! | GET | `/v1/sessions/{id}/score?mode=` | `score_session` and `breakdown` |
//! | GET | `/v1/usecases/{id}/timeline` | `Store::timeline` |
//! | GET | `/v1/compare?from=&to=` | `Store::diff_sessions` |

pub mod error;

use std::collections::{HashMap, HashSet};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use erl_core::catalog::{lint_catalog, load_catalog, CatalogError, LintFinding, LintReport};
use erl_core::scoring::{breakdown, score_session, Contribution};
use erl_core::store::{SessionDiff, Store, StoreError, Timeline};
use erl_core::traversal::Progress;
use erl_core::{
    AnswerKey, AnswerValue, Catalog, IndicatorId, Layer, Question, Score, ScoreReport, ScoringConfig, ScoringMode,
    Session, SessionMetadata, Verdict,
};
use serde::{Deserialize, Serialize};

pub use error::ApiError;

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

#[derive(Clone)]
pub struct ServiceOptions {
    /// Configuration for use cases that have no stored sessions yet.
    pub scoring: ScoringConfig,
    pub lint_tolerance: Score,
    /// When set, every request must carry `Authorization: Bearer <token>`.
    pub token: Option<String>,
    pub clock: Clock,
}

impl Default for ServiceOptions {
    fn default() -> Self {
        ServiceOptions {
            scoring: ScoringConfig::default(),
            lint_tolerance: Score::ZERO,
            token: None,
            clock: Arc::new(Utc::now),
        }
    }
}

#[derive(Debug)]
pub enum StartupError {
    Catalog(PathBuf, CatalogError),
    Lint(String, Vec<LintFinding>),
    DuplicateCatalog(String),
    Store(StoreError),
    Bind(SocketAddr, std::io::Error),
}

impl std::fmt::Display for StartupError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StartupError::Catalog(path, e) => write!(f, "{}: {e}", path.display()),
            StartupError::Lint(id, findings) => {
                write!(f, "catalog `{id}` has lint errors:")?;
                for finding in findings {
                    write!(f, "\n  {finding}")?;
                }
                Ok(())
            }
            StartupError::DuplicateCatalog(id) => write!(f, "catalog `{id}` is loaded more than once"),
            StartupError::Store(e) => write!(f, "{e}"),
            StartupError::Bind(addr, e) => write!(f, "cannot bind {addr}: {e}"),
        }
    }
}

impl std::error::Error for StartupError {}

pub struct AppState {
    catalogs: Vec<Arc<Catalog>>,
    lint: HashMap<String, LintReport>,
    store: Store,
    options: ServiceOptions,
    live: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
}

impl AppState {
    /// Opens the store and checks that every catalog lints without errors.
    pub fn new(
        store_root: impl Into<PathBuf>,
        catalogs: Vec<Arc<Catalog>>,
        options: ServiceOptions,
    ) -> Result<AppState, StartupError> {
        let mut seen = HashSet::new();
        let mut lint = HashMap::new();
        for catalog in &catalogs {
            let id = catalog.reference().catalog_id;
            if !seen.insert(id.clone()) {
                return Err(StartupError::DuplicateCatalog(id));
            }
            let report = lint_catalog(catalog, options.lint_tolerance);
            if report.has_errors() {
                return Err(StartupError::Lint(id, report.errors().cloned().collect()));
            }
            lint.insert(id, report);
        }
        let store = Store::open(store_root, catalogs.iter().cloned()).map_err(StartupError::Store)?;
        Ok(AppState { catalogs, lint, store, options, live: Mutex::new(HashMap::new()) })
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    fn catalog_by_id(&self, id: &str) -> Result<&Arc<Catalog>, ApiError> {
        self.catalogs.iter().find(|c| c.reference().catalog_id == id).ok_or_else(|| ApiError::unknown_catalog(id))
    }

    fn catalog_for(&self, session: &Session) -> Result<&Arc<Catalog>, ApiError> {
        Ok(self.store.catalog(&session.catalog_ref)?)
    }

    /// Live session by id, loading it from the store on first use.
    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        let mut live = self.live.lock().expect("session table lock");
        if let Some(handle) = live.get(id) {
            return Ok(handle.clone());
        }
        let record = self.store.locate_session(id)?;
        let session = self.store.load_session(&record.use_case_id, id)?;
        let handle = Arc::new(Mutex::new(session));
        live.insert(id.to_string(), handle.clone());
        Ok(handle)
    }

    /// Configuration a use case was recorded with, or the default for new ones.
    fn use_case_config(&self, use_case_id: &str) -> Result<ScoringConfig, ApiError> {
        match self.store.use_case(use_case_id) {
            Ok(record) => Ok(record.config),
            Err(StoreError::UnknownUseCase(_)) => Ok(self.options.scoring),
            Err(e) => Err(e.into()),
        }
    }

    fn persist(&self, session: &Session) -> Result<(), ApiError> {
        let use_case = &session.metadata.use_case_id;
        let config = self.use_case_config(use_case)?;
        if session.is_complete() {
            let report = score_session(self.catalog_for(session)?, session, &config)?;
            self.store.save_session(use_case, session, &report, &config)?;
        } else {
            self.store.save_draft(use_case, session, &config)?;
        }
        Ok(())
    }

    /// Applies `change` to a copy of the session and keeps it only once stored.
    fn mutate<R>(
        &self,
        id: &str,
        expected_seq: Option<u64>,
        change: impl FnOnce(&Catalog, &mut Session) -> Result<R, ApiError>,
    ) -> Result<(R, NextView), ApiError> {
        let handle = self.session(id)?;
        let mut current = handle.lock().expect("session lock");
        if let Some(expected) = expected_seq {
            if expected != current.last_seq() {
                return Err(ApiError::stale_seq(expected, current.last_seq()));
            }
        }
        let catalog = self.catalog_for(&current)?.clone();
        let mut next = current.clone();
        let out = change(&catalog, &mut next)?;
        self.persist(&next)?;
        *current = next;
        Ok((out, next_view(&catalog, &current)))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BlockSummary {
    pub block_id: String,
    pub title: String,
    pub indicators: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct LintCounts {
    pub errors: usize,
    pub warnings: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct CatalogSummary {
    pub catalog_id: String,
    pub version: String,
    pub blocks: Vec<BlockSummary>,
    pub lint: LintCounts,
}

/// The current question of a session, or `complete: true` with null fields.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct NextView {
    pub session_id: String,
    /// Sequence number of the last logged event; pass as `expected_seq`.
    pub seq: u64,
    pub complete: bool,
    pub block_id: Option<String>,
    pub indicator_id: Option<IndicatorId>,
    pub text: Option<String>,
    pub layer: Option<Layer>,
    pub progress: Progress,
}

pub fn next_view(catalog: &Catalog, session: &Session) -> NextView {
    let question = match session.current_question(catalog) {
        Question::Ask(key) => catalog.block(&key.block_id).and_then(|b| b.get(&key.indicator)).map(|i| (key, i)),
        Question::Done => None,
    };
    NextView {
        session_id: session.session_id.clone(),
        seq: session.last_seq(),
        complete: session.is_complete(),
        block_id: question.as_ref().map(|(k, _)| k.block_id.clone()),
        indicator_id: question.as_ref().map(|(k, _)| k.indicator.clone()),
        text: question.as_ref().map(|(_, i)| i.text.clone()),
        layer: question.as_ref().map(|(_, i)| i.layer),
        progress: session.progress(catalog),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SessionView {
    pub session: Session,
    pub next: NextView,
}

#[derive(Clone, Debug, Serialize)]
pub struct RevisionView {
    pub removed: Vec<IndicatorId>,
    pub next: NextView,
}

/// A score report plus its contributions ordered by impact.
#[derive(Clone, Debug, Serialize)]
pub struct ScoreView {
    #[serde(flatten)]
    pub report: ScoreReport,
    pub breakdown: Vec<Contribution>,
}

#[derive(Clone, Debug, Deserialize)]
pub struct CreateSession {
    pub catalog_id: String,
    pub blocks: Vec<String>,
    pub metadata: SessionMetadata,
}

#[derive(Clone, Debug, Deserialize)]
pub struct AnswerBody {
    pub block_id: String,
    pub indicator: IndicatorId,
    pub verdict: Verdict,
    #[serde(default)]
    pub unsure: bool,
    #[serde(default)]
    pub comment: Option<String>,
    #[serde(default)]
    pub expected_seq: Option<u64>,
}

#[derive(Clone, Debug, Deserialize)]
pub struct ReviseBody {
    pub block_id: String,
    pub verdict: Verdict,
    #[serde(default)]
    pub unsure: bool,
    #[serde(default)]
    pub comment: Option<String>,
    #[serde(default)]
    pub expected_seq: Option<u64>,
}

#[derive(Debug, Deserialize)]
pub struct ScoreQuery {
    pub mode: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct CompareQuery {
    pub from: String,
    pub to: String,
}

type Shared = State<Arc<AppState>>;
type ApiResult<T> = Result<Json<T>, ApiError>;

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload.map(|Json(v)| v).map_err(|e| ApiError::invalid_request(e.body_text()))
}

fn query<T>(q: Result<Query<T>, QueryRejection>) -> Result<T, ApiError> {
    q.map(|Query(v)| v).map_err(|e| ApiError::invalid_request(e.body_text()))
}

async fn list_catalogs(State(state): Shared) -> Json<Vec<CatalogSummary>> {
    let summaries = state
        .catalogs
        .iter()
        .map(|c| {
            let reference = c.reference();
            let lint = &state.lint[&reference.catalog_id];
            CatalogSummary {
                blocks: c
                    .blocks()
                    .iter()
                    .map(|b| BlockSummary { block_id: b.block_id.clone(), title: b.title.clone(), indicators: b.len() })
                    .collect(),
                lint: LintCounts { errors: lint.errors().count(), warnings: lint.warnings().count() },
                catalog_id: reference.catalog_id,
                version: reference.version,
            }
        })
        .collect();
    Json(summaries)
}

async fn get_catalog(State(state): Shared, Path(id): Path<String>) -> ApiResult<Catalog> {
    Ok(Json(state.catalog_by_id(&id)?.as_ref().clone()))
}

async fn get_lint(State(state): Shared, Path(id): Path<String>) -> ApiResult<LintReport> {
    state.catalog_by_id(&id)?;
    Ok(Json(state.lint[&id].clone()))
}

async fn create_session(
    State(state): Shared,
    payload: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let request = body(payload)?;
    let catalog = state.catalog_by_id(&request.catalog_id)?;
    let session = Session::start(catalog, request.blocks, request.metadata, (state.options.clock)())?;
    let mut live = state.live.lock().expect("session table lock");
    let exists = live.contains_key(&session.session_id)
        || !matches!(state.store.locate_session(&session.session_id), Err(StoreError::UnknownSession(_)));
    if exists {
        return Err(ApiError::new(StatusCode::CONFLICT, "SessionExists", "a session with this id already exists")
            .with_detail(serde_json::json!({ "session_id": session.session_id })));
    }
    state.persist(&session)?;
    let next = next_view(catalog, &session);
    live.insert(session.session_id.clone(), Arc::new(Mutex::new(session.clone())));
    Ok((StatusCode::CREATED, Json(SessionView { session, next })))
}

async fn get_session(State(state): Shared, Path(id): Path<String>) -> ApiResult<SessionView> {
    let handle = state.session(&id)?;
    let session = handle.lock().expect("session lock").clone();
    let next = next_view(state.catalog_for(&session)?, &session);
    Ok(Json(SessionView { session, next }))
}

async fn get_next(State(state): Shared, Path(id): Path<String>) -> ApiResult<NextView> {
    let handle = state.session(&id)?;
    let session = handle.lock().expect("session lock");
    Ok(Json(next_view(state.catalog_for(&session)?, &session)))
}

async fn post_answer(
    State(state): Shared,
    Path(id): Path<String>,
    payload: Result<Json<AnswerBody>, JsonRejection>,
) -> ApiResult<NextView> {
    let a = body(payload)?;
    let value = AnswerValue::new(a.verdict, a.unsure)?;
    let key = AnswerKey::new(a.block_id, a.indicator);
    let at = (state.options.clock)();
    let ((), next) = state.mutate(&id, a.expected_seq, |catalog, session| {
        Ok(session.submit_answer(catalog, &key, value, a.comment, at)?)
    })?;
    Ok(Json(next))
}

async fn patch_answer(
    State(state): Shared,
    Path((id, indicator)): Path<(String, String)>,
    payload: Result<Json<ReviseBody>, JsonRejection>,
) -> ApiResult<RevisionView> {
    let r = body(payload)?;
    let indicator: IndicatorId =
        indicator.parse().map_err(|e: erl_core::catalog::IdParseError| ApiError::invalid_request(e.to_string()))?;
    let value = AnswerValue::new(r.verdict, r.unsure)?;
    let key = AnswerKey::new(r.block_id, indicator);
    let at = (state.options.clock)();
    let (removed, next) = state.mutate(&id, r.expected_seq, |catalog, session| {
        Ok(session.revise_answer(catalog, &key, value, r.comment, at)?)
    })?;
    Ok(Json(RevisionView { removed, next }))
}

async fn get_score(
    State(state): Shared,
    Path(id): Path<String>,
    q: Result<Query<ScoreQuery>, QueryRejection>,
) -> ApiResult<ScoreView> {
    let q = query(q)?;
    let handle = state.session(&id)?;
    let session = handle.lock().expect("session lock").clone();
    let mut config = state.use_case_config(&session.metadata.use_case_id)?;
    if let Some(mode) = q.mode.as_deref().filter(|m| !m.is_empty()) {
        config.mode = ScoringMode::parse(mode).ok_or_else(|| {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "InvalidMode", format!("unknown scoring mode `{mode}`"))
        })?;
    }
    let report = score_session(state.catalog_for(&session)?, &session, &config)?;
    let breakdown = breakdown(&report);
    Ok(Json(ScoreView { report, breakdown }))
}

async fn get_timeline(State(state): Shared, Path(id): Path<String>) -> ApiResult<Timeline> {
    Ok(Json(state.store.timeline(&id)?))
}

async fn get_compare(State(state): Shared, q: Result<Query<CompareQuery>, QueryRejection>) -> ApiResult<SessionDiff> {
    let q = query(q)?;
    Ok(Json(state.store.diff_sessions(&q.from, &q.to)?))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "NotFound", "no such endpoint")
}

async fn authorize(State(state): Shared, request: Request, next: Next) -> Response {
    if let Some(token) = &state.options.token {
        let presented = request
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_str()) {
            return ApiError::unauthorized().into_response();
        }
    }
    next.run(request).await
}

pub fn router(state: Arc<AppState>) -> Router {
    let v1 = Router::new()
        .route("/catalogs", get(list_catalogs))
        .route("/catalogs/{id}", get(get_catalog))
        .route("/catalogs/{id}/lint", get(get_lint))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/next", get(get_next))
        .route("/sessions/{id}/answers", post(post_answer))
        .route("/sessions/{id}/answers/{indicator}", patch(patch_answer))
        .route("/sessions/{id}/score", get(get_score))
        .route("/usecases/{id}/timeline", get(get_timeline))
        .route("/compare", get(get_compare));
    Router::new()
        .nest("/v1", v1)
        .fallback(not_found)
        .layer(middleware::from_fn_with_state(state.clone(), authorize))
        .with_state(state)
}

pub struct ServeConfig {
    pub bind: SocketAddr,
    pub store: PathBuf,
    /// Catalog manifest files.
    pub catalogs: Vec<PathBuf>,
    pub options: ServiceOptions,
}

/// Loads catalogs, opens the store and serves until the process exits.
/// `on_ready` receives the bound address.
pub fn serve_blocking(config: ServeConfig, on_ready: impl FnOnce(SocketAddr)) -> Result<(), StartupError> {
    let catalogs = config
        .catalogs
        .iter()
        .map(|path| load_catalog(path).map(Arc::new).map_err(|e| StartupError::Catalog(path.clone(), e)))
        .collect::<Result<Vec<_>, _>>()?;
    let state = Arc::new(AppState::new(config.store, catalogs, config.options)?);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| StartupError::Bind(config.bind, e))?;
    runtime.block_on(async move {
        let listener =
            tokio::net::TcpListener::bind(config.bind).await.map_err(|e| StartupError::Bind(config.bind, e))?;
        let addr = listener.local_addr().map_err(|e| StartupError::Bind(config.bind, e))?;
        on_ready(addr);
        axum::serve(listener, router(state)).await.map_err(|e| StartupError::Bind(addr, e))
    })
}
