//! HTTP what-if service: sessions over one instance each, exact re-solves
//! after every intervention, and per-candidate sensitivity scores.
//!
//! Endpoints (all JSON):
//!
//! - `GET /api/health`
//! - `POST /api/instances` with `{coords}` or `{n, seed}`, optional `id` and `heuristic`
//! - `GET /api/sessions/{id}/sensitivity?task=remove|forbid&method=...`
//! - `POST /api/sessions/{id}/apply` with `{"action":"remove","node":k}` or `{"action":"forbid","edge":[u,v]}`
//! - `DELETE /api/sessions/{id}/actions/last`
//! - `GET /api/sessions/{id}/state`

pub mod error;
pub mod journal;
pub mod session;

pub use error::{Result, ServiceError};
pub use session::{Action, FeatureSource, LoadedProbe};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use journal::{Event, Journal};
use serde::{Deserialize, Serialize};
use session::{sensitivity, task_label, Session, SensitivityResponse, SolveCache, TourView, HARD_EXACT_LIMIT};
use std::collections::{BTreeMap, HashMap};
use std::future::Future;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use tokio::net::TcpListener;
use tspsense::{generate_instance, make_instance, Instance, SolveConstraints, Task};

pub const DEFAULT_EXACT_CAP: usize = 16;
pub const DEFAULT_CACHE_SIZE: usize = 256;

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    /// Largest n solved exactly without a warning; clamped to the solver limit.
    pub exact_cap: usize,
    /// Solve-cache entries kept per session.
    pub cache_size: usize,
    pub journal_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig { exact_cap: DEFAULT_EXACT_CAP, cache_size: DEFAULT_CACHE_SIZE, journal_dir: None }
    }
}

type MemoKey = (SolveConstraints, &'static str, String);

struct SessionHandle {
    /// Held for the whole of an apply or undo.
    write: tokio::sync::Mutex<()>,
    /// Last committed state; readers clone the `Arc` and never block writers.
    snapshot: RwLock<Arc<Session>>,
    solves: Arc<Mutex<SolveCache>>,
    memo: Mutex<BTreeMap<MemoKey, Arc<SensitivityResponse>>>,
    warnings: Vec<String>,
}

impl SessionHandle {
    fn snapshot(&self) -> Arc<Session> {
        self.snapshot.read().expect("session snapshot").clone()
    }
}

struct Inner {
    config: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<SessionHandle>>>,
    probes: HashMap<String, LoadedProbe>,
    journal: Option<Journal>,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    /// Builds the state and replays any journaled sessions.
    pub fn new(mut config: ServiceConfig, probes: HashMap<String, LoadedProbe>) -> std::io::Result<Self> {
        config.exact_cap = config.exact_cap.min(HARD_EXACT_LIMIT);
        let journal = config.journal_dir.as_deref().map(Journal::open).transpose()?;
        let state = AppState(Arc::new(Inner { config, sessions: RwLock::new(HashMap::new()), probes, journal }));
        if let Some(j) = &state.0.journal {
            for (id, events) in j.load()? {
                match state.replay(&id, events) {
                    Ok(steps) => log::info!("restored session {id} ({steps} action(s))"),
                    Err(e) => log::warn!("could not restore session {id}: {e}"),
                }
            }
        }
        Ok(state)
    }

    pub fn session_count(&self) -> usize {
        self.0.sessions.read().expect("session map").len()
    }

    fn replay(&self, id: &str, events: Vec<Event>) -> Result<usize> {
        let mut it = events.into_iter();
        let Some(Event::Create { instance, heuristic }) = it.next() else {
            return Err(ServiceError::Internal("journal does not start with a create event".into()));
        };
        let cache = Arc::new(Mutex::new(SolveCache::new(self.0.config.cache_size)));
        let warnings = self.size_warnings(instance.n(), heuristic);
        let mut session = Session::create(id.to_string(), instance, heuristic, &cache)?;
        for event in it {
            match event {
                Event::Apply { action, at } => {
                    session.apply(action, at, &cache)?;
                }
                Event::Undo => {
                    session.undo()?;
                }
                Event::Create { .. } => return Err(ServiceError::Internal("repeated create event".into())),
            }
        }
        let steps = session.actions.len();
        self.insert(session, cache, warnings);
        Ok(steps)
    }

    fn insert(&self, session: Session, solves: Arc<Mutex<SolveCache>>, warnings: Vec<String>) {
        let id = session.id.clone();
        let handle = SessionHandle {
            write: tokio::sync::Mutex::new(()),
            snapshot: RwLock::new(Arc::new(session)),
            solves,
            memo: Mutex::new(BTreeMap::new()),
            warnings,
        };
        self.0.sessions.write().expect("session map").insert(id, Arc::new(handle));
    }

    fn handle(&self, id: &str) -> Result<Arc<SessionHandle>> {
        self.0
            .sessions
            .read()
            .expect("session map")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("no session '{id}'")))
    }

    fn size_warnings(&self, n: usize, heuristic: bool) -> Vec<String> {
        if heuristic {
            vec![format!("n = {n} exceeds the exact limit of {HARD_EXACT_LIMIT}; tours are heuristic (exact=false)")]
        } else if n > self.0.config.exact_cap {
            vec![format!("n = {n} exceeds the interactive cap of {}; exact re-solves may be slow", self.0.config.exact_cap)]
        } else {
            Vec::new()
        }
    }

    fn journal(&self, session_id: &str, event: &Event) {
        if let Some(j) = &self.0.journal {
            if let Err(e) = j.append(session_id, event) {
                log::error!("journal write for session {session_id} failed: {e}");
            }
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/instances", post(create_instance))
        .route("/api/sessions/{id}/sensitivity", get(get_sensitivity))
        .route("/api/sessions/{id}/apply", post(apply))
        .route("/api/sessions/{id}/actions/last", delete(undo))
        .route("/api/sessions/{id}/state", get(get_state))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(listener: TcpListener, state: AppState, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    if let Ok(addr) = listener.local_addr() {
        log::info!("listening on http://{addr}");
    }
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T> {
    serde_json::from_slice(body).map_err(|e| ServiceError::Unprocessable(format!("invalid request body: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T> + Send + 'static) -> Result<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(format!("worker failed: {e}")))?
}

async fn health(State(state): State<AppState>) -> Json<serde_json::Value> {
    let mut probes: Vec<&String> = state.0.probes.keys().collect();
    probes.sort();
    Json(serde_json::json!({ "status": "ok", "sessions": state.session_count(), "probes": probes }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRequest {
    coords: Option<Vec<[f64; 2]>>,
    n: Option<usize>,
    seed: Option<u64>,
    id: Option<String>,
    #[serde(default)]
    heuristic: bool,
}

#[derive(Serialize)]
struct CreateResponse {
    session_id: String,
    instance: Instance,
    tour: Vec<usize>,
    length: f64,
    exact: bool,
    warnings: Vec<String>,
}

async fn create_instance(State(state): State<AppState>, body: Bytes) -> Result<Json<CreateResponse>> {
    let req: CreateRequest = parse_body(&body)?;
    let session_id = uuid::Uuid::new_v4().simple().to_string();
    let instance = match (req.coords, req.n) {
        (Some(_), Some(_)) => return Err(ServiceError::Unprocessable("give either coords or n, not both".into())),
        (Some(coords), None) => make_instance(coords, req.id.unwrap_or_else(|| session_id.clone()))?,
        (None, Some(n)) => {
            let inst = generate_instance(n, req.seed.unwrap_or(0))?;
            match req.id {
                Some(id) => make_instance(inst.coords().to_vec(), id)?,
                None => inst,
            }
        }
        (None, None) => return Err(ServiceError::Unprocessable("body needs coords or n".into())),
    };
    let n = instance.n();
    if n > HARD_EXACT_LIMIT && !req.heuristic {
        return Err(ServiceError::TooLarge(format!(
            "n = {n} is above the exact limit of {HARD_EXACT_LIMIT}; pass \"heuristic\": true for heuristic tours"
        )));
    }
    let heuristic = n > HARD_EXACT_LIMIT;
    let warnings = state.size_warnings(n, heuristic);
    let cache = Arc::new(Mutex::new(SolveCache::new(state.0.config.cache_size)));
    let session = {
        let (cache, id, inst) = (cache.clone(), session_id.clone(), instance.clone());
        blocking(move || Session::create(id, inst, heuristic, &cache)).await?
    };
    let tour = session.current().tour.clone();
    state.journal(&session_id, &Event::Create { instance: instance.clone(), heuristic });
    state.insert(session, cache, warnings.clone());
    Ok(Json(CreateResponse { session_id, instance, tour: tour.order, length: tour.length, exact: tour.exact, warnings }))
}

async fn get_sensitivity(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(params): Query<HashMap<String, String>>,
) -> Result<Json<Arc<SensitivityResponse>>> {
    let handle = state.handle(&id)?;
    let task: Task = params
        .get("task")
        .ok_or_else(|| ServiceError::Unprocessable("missing query parameter 'task' (remove|forbid)".into()))?
        .parse()
        .map_err(|e: tspsense::Error| ServiceError::Unprocessable(e.to_string()))?;
    let method = params.get("method").cloned().unwrap_or_else(|| "exact".to_string());
    let session = handle.snapshot();
    let key: MemoKey = (session.current().constraints.clone(), task_label(task), method.clone());
    if let Some(hit) = handle.memo.lock().expect("score memo").get(&key) {
        return Ok(Json(hit.clone()));
    }
    let response = {
        let (state, handle) = (state.clone(), handle.clone());
        blocking(move || sensitivity(&session, task, &method, &state.0.probes, &handle.solves)).await?
    };
    let response = handle.memo.lock().expect("score memo").entry(key).or_insert_with(|| Arc::new(response)).clone();
    Ok(Json(response))
}

async fn apply(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Json<session::ApplyResponse>> {
    let handle = state.handle(&id)?;
    let action: Action = parse_body(&body)?;
    let _guard = handle.write.lock().await;
    let mut next = (*handle.snapshot()).clone();
    let at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true);
    let (response, next) = {
        let (handle, action, at) = (handle.clone(), action.clone(), at.clone());
        blocking(move || {
            let r = next.apply(action, at, &handle.solves)?;
            Ok((r, next))
        })
        .await?
    };
    state.journal(&id, &Event::Apply { action, at });
    *handle.snapshot.write().expect("session snapshot") = Arc::new(next);
    Ok(Json(response))
}

async fn undo(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<session::UndoResponse>> {
    let handle = state.handle(&id)?;
    let _guard = handle.write.lock().await;
    let mut next = (*handle.snapshot()).clone();
    let response = next.undo()?;
    state.journal(&id, &Event::Undo);
    *handle.snapshot.write().expect("session snapshot") = Arc::new(next);
    Ok(Json(response))
}

#[derive(Serialize)]
struct ScoreEntry {
    task: &'static str,
    method: String,
    result: Arc<SensitivityResponse>,
}

#[derive(Serialize)]
struct StateResponse<'a> {
    session_id: &'a str,
    instance: &'a Instance,
    heuristic: bool,
    warnings: &'a [String],
    base: TourView,
    current: TourView,
    constraints: &'a SolveConstraints,
    actions: &'a [session::ActionRecord],
    /// One tour per step, starting with the base tour.
    tours: Vec<TourView>,
    /// Scores already computed for the current state, by task then method.
    scores: Vec<ScoreEntry>,
}

async fn get_state(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<serde_json::Value>> {
    let handle = state.handle(&id)?;
    let session = handle.snapshot();
    let current = &session.current().constraints;
    let scores = handle
        .memo
        .lock()
        .expect("score memo")
        .iter()
        .filter(|((cons, _, _), _)| cons == current)
        .map(|((_, task, method), r)| ScoreEntry { task, method: method.clone(), result: r.clone() })
        .collect();
    let body = StateResponse {
        session_id: &session.id,
        instance: &session.instance,
        heuristic: session.heuristic,
        warnings: &handle.warnings,
        base: (&session.base().tour).into(),
        current: (&session.current().tour).into(),
        constraints: current,
        actions: &session.actions,
        tours: session.states.iter().map(|s| (&s.tour).into()).collect(),
        scores,
    };
    let value = serde_json::to_value(&body).map_err(|e| ServiceError::Internal(e.to_string()))?;
    Ok(Json(value))
}
