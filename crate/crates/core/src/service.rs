//! Local HTTP endpoints for the triage workbench.
//!
//! | method | path | body / query | response |
//! |---|---|---|---|
//! | GET | `/suite` | | suite summary and matrix skeleton |
//! | POST | `/suggest` | `{template, top_k}` | `{suggestions: [{text, score}]}` |
//! | GET | `/lexicons/{name}` | | `{name, entries: [{text, tags}]}` |
//! | POST | `/lexicons/{name}` | `{accepts: [{text, tags}], rejects: [text], template?}` | `{name, added, entries}` |
//! | POST | `/run` | `{adapter_spec}` | `{run_id}` (202) |
//! | GET | `/runs/{id}` | | `{run_id, status, done, total, error?}` |
//! | GET | `/results` | `?run=` | machine-readable report of a finished run |
//! | GET | `/results/{test}` | `?run=&slice=&offset=&limit=` | rate, slices, exemplar failures, a page of cases |
//!
//! Errors are `{"error": "..."}` with 400 (malformed body), 404 (unknown
//! test, run or lexicon) or 409 (a lexicon write or a run already in
//! progress). Rejected suggestions go to the suppression list under
//! `template` when given, otherwise for every template.
//!
//! Lexicon writes are serialized through one lock and persisted to the
//! session's lexicon file, if any. Runs execute on a blocking worker with
//! progress polling; at most one runs at a time.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::lexicon::{LexiconEntry, LexiconStore, TagQuery};
use crate::model::{AdapterSpec, Gateway, PredictionCache, DEFAULT_JOBS};
use crate::suggest::{self, MaskQuery, StoreDelta, StubProvider, SuggestError, SuggestionProvider, SuppressionList};
use crate::suite::{self, CaseResult, ReportFormat, RunConfig, SuiteResult, TestSuite};

const DEFAULT_PAGE: usize = 100;

pub struct Session {
    suite: RwLock<TestSuite>,
    store: RwLock<LexiconStore>,
    lexicon_path: Option<PathBuf>,
    suppressed: RwLock<SuppressionList>,
    provider: Arc<dyn SuggestionProvider>,
    cache: Arc<PredictionCache>,
    jobs: usize,
    run_config: RunConfig,
    lexicon_writer: tokio::sync::Mutex<()>,
    runs: RwLock<BTreeMap<u64, Arc<Mutex<RunState>>>>,
    active_run: Mutex<Option<u64>>,
    next_run: AtomicU64,
}

impl Session {
    pub fn new(suite: TestSuite, store: LexiconStore) -> Self {
        Self {
            suite: RwLock::new(suite),
            store: RwLock::new(store),
            lexicon_path: None,
            suppressed: RwLock::new(SuppressionList::default()),
            provider: Arc::new(StubProvider::default()),
            cache: Arc::new(PredictionCache::in_memory()),
            jobs: DEFAULT_JOBS,
            run_config: RunConfig::default(),
            lexicon_writer: tokio::sync::Mutex::new(()),
            runs: RwLock::new(BTreeMap::new()),
            active_run: Mutex::new(None),
            next_run: AtomicU64::new(1),
        }
    }

    /// Lexicon edits are written to `path` after each change.
    pub fn with_lexicon_path(mut self, path: impl Into<PathBuf>) -> Self {
        self.lexicon_path = Some(path.into());
        self
    }

    pub fn with_provider(mut self, provider: Arc<dyn SuggestionProvider>) -> Self {
        self.provider = provider;
        self
    }

    pub fn with_cache(mut self, cache: Arc<PredictionCache>) -> Self {
        self.cache = cache;
        self
    }

    pub fn with_jobs(mut self, jobs: usize) -> Self {
        self.jobs = jobs.max(1);
        self
    }

    pub fn with_run_config(mut self, cfg: RunConfig) -> Self {
        self.run_config = cfg;
        self
    }

    pub fn store(&self) -> LexiconStore {
        self.store.read().expect("store lock").clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Done,
    Failed,
}

#[derive(Debug)]
struct RunState {
    status: RunStatus,
    done: usize,
    total: usize,
    error: Option<String>,
    result: Option<Arc<SuiteResult>>,
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError(StatusCode::BAD_REQUEST, e.body_text())
    }
}

fn not_found(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, msg.into())
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

fn conflict(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::CONFLICT, msg.into())
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(session: Arc<Session>) -> Router {
    Router::new()
        .route("/suite", get(get_suite))
        .route("/suggest", post(post_suggest))
        .route("/lexicons/{name}", get(get_lexicon).post(post_lexicon))
        .route("/run", post(post_run))
        .route("/runs/{id}", get(get_run))
        .route("/results", get(get_results))
        .route("/results/{test}", get(get_test_result))
        .with_state(session)
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, session: Arc<Session>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(session)).await
}

async fn get_suite(State(s): State<Arc<Session>>) -> Json<serde_json::Value> {
    let suite = s.suite.read().expect("suite lock");
    let matrix: Vec<serde_json::Value> = suite
        .capabilities()
        .into_iter()
        .map(|cap| {
            let names = |ty: suite::TestType| -> Vec<&str> {
                suite
                    .tests
                    .iter()
                    .filter(|t| t.capability == cap && t.test_type == ty)
                    .map(|t| t.name.as_str())
                    .collect()
            };
            json!({
                "capability": cap,
                "MFT": names(suite::TestType::Mft),
                "INV": names(suite::TestType::Inv),
                "DIR": names(suite::TestType::Dir),
            })
        })
        .collect();
    let tests: Vec<serde_json::Value> = suite
        .tests
        .iter()
        .map(|t| {
            json!({
                "name": t.name,
                "capability": t.capability,
                "test_type": t.test_type,
                "description": t.description,
                "expectation": t.expectation.kind_name(),
            })
        })
        .collect();
    Json(json!({
        "schema_version": suite.schema_version,
        "name": suite.name,
        "description": suite.description,
        "matrix": matrix,
        "tests": tests,
    }))
}

async fn post_suggest(
    State(s): State<Arc<Session>>,
    body: Result<Json<MaskQuery>, JsonRejection>,
) -> ApiResult<Json<serde_json::Value>> {
    let Json(query) = body?;
    let mut suppressed = SuppressionList::default();
    {
        let all = s.suppressed.read().expect("suppression lock");
        suppressed.merge(&all);
        for text in all.for_template(suggest::ANY_TEMPLATE) {
            suppressed.add(&query.template, &text);
        }
    }
    let provider = s.provider.clone();
    let result = tokio::task::spawn_blocking(move || suggest::suggest(provider.as_ref(), &query, &suppressed))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    match result {
        Ok(list) => Ok(Json(json!({ "suggestions": list }))),
        Err(e @ SuggestError::MalformedQuery(_)) => Err(bad_request(e.to_string())),
        Err(e) => Err(ApiError(StatusCode::BAD_GATEWAY, e.to_string())),
    }
}

async fn get_lexicon(State(s): State<Arc<Session>>, Path(name): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let store = s.store.read().expect("store lock");
    let entries = store.entries(&name).ok_or_else(|| not_found(format!("unknown lexicon `{name}`")))?;
    Ok(Json(json!({ "name": name, "entries": entries })))
}

#[derive(Debug, Deserialize)]
struct LexiconEdit {
    #[serde(default)]
    accepts: Vec<LexiconEntry>,
    #[serde(default)]
    rejects: Vec<String>,
    #[serde(default)]
    template: Option<String>,
}

async fn post_lexicon(
    State(s): State<Arc<Session>>,
    Path(name): Path<String>,
    body: Result<Json<LexiconEdit>, JsonRejection>,
) -> ApiResult<Json<serde_json::Value>> {
    let Json(edit) = body?;
    if edit.accepts.iter().any(|e| e.text.trim().is_empty() || e.text.contains(['\t', '\n'])) {
        return Err(bad_request("accepted entries need nonempty single-line text without tabs"));
    }
    let _writer = s.lexicon_writer.try_lock().map_err(|_| conflict("another lexicon edit is in progress"))?;

    let delta = StoreDelta { appends: edit.accepts.into_iter().map(|e| (name.clone(), e)).collect() };
    let (before, updated) = {
        let store = s.store.read().expect("store lock");
        (store.entries(&name).map_or(0, <[LexiconEntry]>::len), delta.apply(&store))
    };
    if let Some(path) = &s.lexicon_path {
        let snapshot = updated.clone();
        let path = path.clone();
        tokio::task::spawn_blocking(move || snapshot.save(&path))
            .await
            .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
            .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    }
    let entries = updated.entries(&name).map(<[LexiconEntry]>::to_vec).unwrap_or_default();
    *s.store.write().expect("store lock") = updated;
    {
        let mut suppressed = s.suppressed.write().expect("suppression lock");
        let key = edit.template.as_deref().unwrap_or(suggest::ANY_TEMPLATE);
        for text in &edit.rejects {
            suppressed.add(key, text);
        }
    }
    Ok(Json(json!({ "name": name, "added": entries.len() - before, "entries": entries })))
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum AdapterField {
    Text(String),
    Spec(AdapterSpec),
}

#[derive(Debug, Deserialize)]
struct RunRequest {
    adapter_spec: AdapterField,
}

async fn post_run(
    State(s): State<Arc<Session>>,
    body: Result<Json<RunRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let Json(req) = body?;
    let spec = match req.adapter_spec {
        AdapterField::Text(t) => t.parse::<AdapterSpec>().map_err(|e| bad_request(e.to_string()))?,
        AdapterField::Spec(spec) => spec,
    };
    let gateway = Gateway::from_spec(&spec)
        .map_err(|e| bad_request(e.to_string()))?
        .with_cache(s.cache.clone())
        .with_jobs(s.jobs);

    let id = {
        let mut active = s.active_run.lock().expect("run lock");
        if let Some(id) = *active {
            return Err(conflict(format!("run {id} is still in progress")));
        }
        let id = s.next_run.fetch_add(1, Ordering::SeqCst);
        *active = Some(id);
        id
    };
    let state =
        Arc::new(Mutex::new(RunState { status: RunStatus::Running, done: 0, total: 0, error: None, result: None }));
    s.runs.write().expect("runs lock").insert(id, state.clone());

    let suite = s.suite.read().expect("suite lock").clone();
    let store = s.store();
    let mut cfg = s.run_config.clone();
    cfg.suppressed.merge(&s.suppressed.read().expect("suppression lock"));
    let session = s.clone();
    tokio::task::spawn_blocking(move || {
        let progress = |p: suite::Progress| {
            let mut st = state.lock().expect("run state lock");
            st.done = p.done;
            st.total = p.total;
        };
        let outcome = suite::run_suite_with_progress(&suite, &store, &gateway, &cfg, &progress);
        {
            let mut st = state.lock().expect("run state lock");
            match outcome {
                Ok(r) => {
                    st.status = RunStatus::Done;
                    st.done = st.total;
                    st.result = Some(Arc::new(r));
                }
                Err(e) => {
                    st.status = RunStatus::Failed;
                    st.error = Some(e.to_string());
                }
            }
        }
        *session.active_run.lock().expect("run lock") = None;
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "run_id": id }))))
}

async fn get_run(State(s): State<Arc<Session>>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let id: u64 = id.parse().map_err(|_| not_found(format!("unknown run `{id}`")))?;
    let state =
        s.runs.read().expect("runs lock").get(&id).cloned().ok_or_else(|| not_found(format!("unknown run {id}")))?;
    let st = state.lock().expect("run state lock");
    let mut body = json!({ "run_id": id, "status": st.status, "done": st.done, "total": st.total });
    if let Some(e) = &st.error {
        body["error"] = json!(e);
    }
    Ok(Json(body))
}

#[derive(Debug, Deserialize)]
struct ResultQuery {
    run: Option<u64>,
    slice: Option<String>,
    offset: Option<usize>,
    limit: Option<usize>,
}

/// The requested run's result, or the most recent finished one.
fn finished_result(s: &Session, run: Option<u64>) -> ApiResult<(u64, Arc<SuiteResult>)> {
    let runs = s.runs.read().expect("runs lock");
    let pick =
        |id: &u64, st: &Arc<Mutex<RunState>>| st.lock().expect("run state lock").result.clone().map(|r| (*id, r));
    match run {
        Some(id) => {
            let st = runs.get(&id).ok_or_else(|| not_found(format!("unknown run {id}")))?;
            pick(&id, st).ok_or_else(|| not_found(format!("run {id} has no results")))
        }
        None => runs.iter().rev().find_map(|(id, st)| pick(id, st)).ok_or_else(|| not_found("no results yet")),
    }
}

async fn get_results(State(s): State<Arc<Session>>, Query(q): Query<ResultQuery>) -> ApiResult<Response> {
    let (id, result) = finished_result(&s, q.run)?;
    let report = suite::render_report(&result, ReportFormat::Json);
    let mut value: serde_json::Value = serde_json::from_str(&report).expect("report is JSON");
    value["run_id"] = json!(id);
    Ok(Json(value).into_response())
}

async fn get_test_result(
    State(s): State<Arc<Session>>,
    Path(test): Path<String>,
    Query(q): Query<ResultQuery>,
) -> ApiResult<Json<serde_json::Value>> {
    let (id, result) = finished_result(&s, q.run)?;
    let t = result.test(&test).ok_or_else(|| not_found(format!("unknown test `{test}`")))?;

    let slice = match &q.slice {
        Some(raw) => {
            let query: TagQuery = raw.parse().map_err(|e: crate::lexicon::LexiconError| bad_request(e.to_string()))?;
            let rate = suite::slice_result(&result, &test, &query).map_err(|e| not_found(e.to_string()))?;
            Some((query, rate))
        }
        None => None,
    };
    let in_view = |c: &&CaseResult| slice.as_ref().is_none_or(|(query, _)| c.binding.matches(query));
    let exemplars: Vec<&CaseResult> = t.exemplars.iter().filter_map(|&i| t.case(i)).filter(in_view).collect();
    let matching: Vec<&CaseResult> = t.cases.iter().filter(in_view).collect();
    let offset = q.offset.unwrap_or(0);
    let limit = q.limit.unwrap_or(DEFAULT_PAGE);
    let page: Vec<&CaseResult> = matching.iter().skip(offset).take(limit).copied().collect();

    let rate = t.rate();
    let mut body = json!({
        "run_id": id,
        "name": t.name,
        "capability": t.capability,
        "test_type": t.test_type,
        "description": t.description,
        "n_cases": t.n_cases,
        "failed": t.failed,
        "errored": t.errored,
        "skipped": t.skipped,
        "failure_rate": rate.map(|r| r.rounded()),
        "slices": t.slices,
        "exemplars": exemplars,
        "cases": page,
        "offset": offset,
        "total_cases": matching.len(),
    });
    if let Some((query, r)) = slice {
        body["slice"] = json!({
            "query": query.to_string(),
            "n_cases": r.total,
            "failed": r.failed,
            "failure_rate": r.rounded(),
        });
    }
    Ok(Json(body))
}
