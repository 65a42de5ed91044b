//! HTTP service: each submitted query runs as a session on a bounded worker
//! pool and appends guarantee events to its log, which clients follow as a
//! server-sent event stream.

use std::collections::HashMap;
use std::convert::Infallible;
use std::ops::ControlFlow;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{watch, Semaphore};
use tower_http::services::ServeDir;

use pros::classify::{majority_class, neighbor_labels};
use pros::models::EstimationMethod;
use pros::search::Neighbor;
use pros::series::DistanceKind;
use pros::stopping::{run_with_policy_observed, DecisionRecord, PolicyEvent, RunOptions, StopReason, StoppingPolicy};
use pros::{Error, Result};

use crate::engine::{Engine, QuerySource};

/// Distance estimator and levels reported in events when a request names none.
pub const DEFAULT_METHOD: EstimationMethod = EstimationMethod::Kde2;
pub const DEFAULT_THETA: f64 = 0.05;
pub const DEFAULT_PHI: f64 = 0.05;

/// How long a stop request waits for the session to end before answering.
const STOP_WAIT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Running,
    StoppedByUser,
    StoppedByPolicy,
    Finished,
    Failed,
}

impl SessionState {
    pub fn is_terminal(self) -> bool {
        self != SessionState::Running
    }
}

/// One entry of a session's event stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceEvent {
    pub seq: u64,
    pub leaves_visited: u64,
    pub bsf_distances: Vec<f64>,
    pub bsf_ids: Vec<u32>,
    /// Estimate of the k-th exact distance and its lower bound.
    pub point: Option<f64>,
    pub lower: Option<f64>,
    /// `bsf / lower - 1`: bound on the relative error of the k-th distance.
    pub error_bound: Option<f64>,
    pub p_exact: Option<f64>,
    /// Leaves after which the answer is exact with probability `1 - phi`.
    pub time_bound: Option<u64>,
    pub class: Option<u32>,
    pub p_class: Option<f64>,
    pub decision: Option<DecisionRecord>,
    pub state: SessionState,
    pub terminal: bool,
    pub reason: Option<StopReason>,
    pub error: Option<String>,
}

/// Body of `POST /v1/queries`. Exactly one of `values` and `series_index`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRequest {
    pub values: Option<Vec<f64>>,
    pub series_index: Option<u32>,
    /// Must name the served dataset when given.
    pub dataset: Option<String>,
    pub k: Option<usize>,
    pub distance: Option<String>,
    pub policy: Option<String>,
    pub method: Option<String>,
    pub theta: Option<f64>,
    /// Level of the reported time bound.
    pub phi: Option<f64>,
}

#[derive(Debug, Clone)]
struct Params {
    policy: StoppingPolicy,
    method: EstimationMethod,
    theta: f64,
    phi: f64,
}

struct Log {
    state: SessionState,
    events: Vec<ServiceEvent>,
}

pub struct Session {
    log: Mutex<Log>,
    /// Number of events in the log.
    changed: watch::Sender<usize>,
    stop_requested: AtomicBool,
}

impl Session {
    fn new() -> Self {
        Session {
            log: Mutex::new(Log {
                state: SessionState::Running,
                events: Vec::new(),
            }),
            changed: watch::Sender::new(0),
            stop_requested: false.into(),
        }
    }

    pub fn state(&self) -> SessionState {
        self.log.lock().expect("session lock").state
    }

    pub fn events(&self) -> Vec<ServiceEvent> {
        self.log.lock().expect("session lock").events.clone()
    }

    fn stop(&self) {
        self.stop_requested.store(true, Ordering::SeqCst);
    }

    fn stop_requested(&self) -> bool {
        self.stop_requested.load(Ordering::SeqCst)
    }

    /// Appends an event; a terminal one also fixes the state. Nothing is
    /// appended after a terminal event.
    fn push(&self, mut event: ServiceEvent) {
        let mut log = self.log.lock().expect("session lock");
        if log.state.is_terminal() {
            return;
        }
        event.seq = log.events.len() as u64;
        if event.terminal {
            log.state = event.state;
        }
        log.events.push(event);
        let n = log.events.len();
        drop(log);
        self.changed.send_replace(n);
    }

    fn last_leaves(&self) -> u64 {
        let log = self.log.lock().expect("session lock");
        log.events.last().map_or(0, |e| e.leaves_visited)
    }
}

#[derive(Clone)]
pub struct AppState {
    engine: Arc<Engine>,
    sessions: Arc<Mutex<HashMap<String, Arc<Session>>>>,
    next_id: Arc<AtomicU64>,
    workers: Arc<Semaphore>,
    default_policy: StoppingPolicy,
}

impl AppState {
    pub fn new(engine: Engine, default_policy: StoppingPolicy, parallelism: usize) -> Self {
        AppState {
            engine: Arc::new(engine),
            sessions: Arc::default(),
            next_id: Arc::new(AtomicU64::new(1)),
            workers: Arc::new(Semaphore::new(parallelism.max(1))),
            default_policy,
        }
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    /// Permits of the worker pool; a session runs while it holds one.
    pub fn workers(&self) -> Arc<Semaphore> {
        self.workers.clone()
    }

    pub fn session(&self, id: &str) -> Option<Arc<Session>> {
        self.sessions.lock().expect("sessions lock").get(id).cloned()
    }

    fn params(&self, req: &QueryRequest) -> Result<Params> {
        let policy = match &req.policy {
            Some(p) => p.parse()?,
            None => self.default_policy,
        };
        let method = match &req.method {
            Some(m) => m.parse()?,
            None => DEFAULT_METHOD,
        };
        let theta = req.theta.unwrap_or(DEFAULT_THETA);
        let phi = req.phi.unwrap_or(DEFAULT_PHI);
        for (name, v) in [("theta", theta), ("phi", phi)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidArgument(format!("{name} = {v} must lie in (0, 1)")));
            }
        }
        if policy.needs_labels() && self.engine.labels().is_none() {
            return Err(Error::InvalidArgument("the class criterion needs a labeled dataset".into()));
        }
        Ok(Params {
            policy,
            method,
            theta,
            phi,
        })
    }

    /// Validates a request and starts its session.
    pub fn submit(&self, req: &QueryRequest) -> Result<String> {
        let engine = &self.engine;
        if let Some(d) = &req.dataset {
            if *d != engine.name {
                return Err(Error::InvalidArgument(format!("unknown dataset `{d}`, serving `{}`", engine.name)));
            }
        }
        let distance = req.distance.as_deref().map(str::parse::<DistanceKind>).transpose()?;
        engine.check_request(req.k, distance)?;
        let source = match (&req.values, req.series_index) {
            (Some(v), None) => QuerySource::Values(v.clone()),
            (None, Some(i)) => QuerySource::Series(i),
            _ => return Err(Error::InvalidArgument("give exactly one of `values` and `series_index`".into())),
        };
        let query = engine.resolve(&source)?;
        let params = self.params(req)?;

        let id = format!("q{}", self.next_id.fetch_add(1, Ordering::SeqCst));
        let session = Arc::new(Session::new());
        self.sessions
            .lock()
            .expect("sessions lock")
            .insert(id.clone(), session.clone());
        let engine = self.engine.clone();
        let workers = self.workers.clone();
        tokio::spawn(async move {
            let Ok(_permit) = workers.acquire_owned().await else {
                return;
            };
            let s = session.clone();
            let run = tokio::task::spawn_blocking(move || run_session(&engine, &s, &query, &params)).await;
            if let Err(e) = run {
                session.push(failure(session.last_leaves(), format!("worker panicked: {e}")));
            }
        });
        Ok(id)
    }
}

fn failure(leaves_visited: u64, error: String) -> ServiceEvent {
    ServiceEvent {
        seq: 0,
        leaves_visited,
        bsf_distances: Vec::new(),
        bsf_ids: Vec::new(),
        point: None,
        lower: None,
        error_bound: None,
        p_exact: None,
        time_bound: None,
        class: None,
        p_class: None,
        decision: None,
        state: SessionState::Failed,
        terminal: true,
        reason: None,
        error: Some(error),
    }
}

/// Runs one session to its end. The observer is consulted after every leaf
/// so a stop request is honored at the next leaf boundary; events are
/// appended at the first full answer, the bundle's checkpoints, policy
/// decisions and the end.
fn run_session(engine: &Engine, session: &Session, query: &[f64], params: &Params) {
    let bundle = &engine.bundle;
    let tree = &engine.tree;
    let labels = engine.labels();
    let witness_distance = match params.method {
        EstimationMethod::Witness => match bundle.weighted_witness_distance(query) {
            Ok(d) => Some(d),
            Err(e) => return session.push(failure(0, e.to_string())),
        },
        _ => None,
    };
    let options = RunOptions {
        audit: false,
        labels,
        checkpoints: (1..=tree.leaf_count() as u64).collect(),
        stop: None,
    };
    let mut time_bound = None;
    let mut emitted = false;
    let observer = |pe: &PolicyEvent| {
        let t = pe.event.leaves_visited;
        let user_stop = !pe.last && session.stop_requested();
        let scheduled = !emitted || pe.decision.is_some() || bundle.checkpoints.binary_search(&t).is_ok();
        if !(scheduled || pe.last || user_stop) {
            return ControlFlow::Continue(());
        }
        let answer = pe.event.neighbors();
        if !emitted {
            time_bound = pe
                .time_budget
                .or_else(|| bundle.time_bound(params.phi).map(|b| b.leaves(pe.event.bsf_k())));
        }
        emitted = true;
        let state = if user_stop {
            SessionState::StoppedByUser
        } else if pe.reason.is_some() {
            SessionState::StoppedByPolicy
        } else if pe.last {
            SessionState::Finished
        } else {
            SessionState::Running
        };
        let mut event = guarantee_event(engine, params, t, &answer, witness_distance, labels, time_bound);
        event.decision = pe.decision;
        event.reason = if user_stop { Some(StopReason::User) } else { pe.reason };
        event.state = state;
        event.terminal = state.is_terminal();
        session.push(event);
        if user_stop {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    };
    match run_with_policy_observed(tree, bundle, query, &params.policy, &options, observer) {
        Ok(outcome) => {
            // Ignored unless the answer never held k neighbors: the observer
            // has already logged the terminal event.
            let mut event = guarantee_event(engine, params, outcome.leaves_visited, &outcome.answer, None, None, None);
            event.state = match outcome.reason {
                None => SessionState::Finished,
                Some(StopReason::User) => SessionState::StoppedByUser,
                Some(_) => SessionState::StoppedByPolicy,
            };
            event.terminal = true;
            event.reason = outcome.reason;
            session.push(event);
        }
        Err(e) => session.push(failure(session.last_leaves(), e.to_string())),
    }
}

/// Event fields derived from the current answer. Estimates need a full answer.
fn guarantee_event(
    engine: &Engine,
    params: &Params,
    t: u64,
    answer: &[Neighbor],
    witness_distance: Option<f64>,
    labels: Option<&[u32]>,
    time_bound: Option<u64>,
) -> ServiceEvent {
    let bundle = &engine.bundle;
    let full = answer.len() == bundle.k;
    let bsf_k = answer.last().map(|n| n.distance).filter(|_| full);
    let estimate = bsf_k.and_then(|b| {
        bundle
            .estimate_distance(params.method, params.theta, t, Some(b), witness_distance)
            .ok()
    });
    let (class, p_class) = match labels {
        Some(l) if full => (
            majority_class(&neighbor_labels(answer, l)).ok(),
            bundle.class_probability(t, answer, l),
        ),
        _ => (None, None),
    };
    ServiceEvent {
        seq: 0,
        leaves_visited: t,
        bsf_distances: answer.iter().map(|n| n.distance).collect(),
        bsf_ids: answer.iter().map(|n| n.id).collect(),
        point: estimate.map(|e| e.point),
        lower: estimate.map(|e| e.lower),
        error_bound: estimate.zip(bsf_k).map(|(e, b)| b / e.lower - 1.0),
        p_exact: bsf_k.and_then(|b| bundle.exact_probability(t, b)),
        time_bound,
        class,
        p_class,
        decision: None,
        state: SessionState::Running,
        terminal: false,
        reason: None,
        error: None,
    }
}

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Io(_) | Error::Repetition { .. } => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError(status, e.to_string())
    }
}

fn not_found(id: &str) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, format!("unknown session `{id}`"))
}

pub fn router(state: AppState, console: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/v1/health", get(health))
        .route("/v1/queries", post(submit))
        .route("/v1/queries/{id}/events", get(events))
        .route("/v1/queries/{id}/stop", post(stop))
        .with_state(state);
    match console {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

async fn health(State(app): State<AppState>) -> Json<serde_json::Value> {
    let e = app.engine();
    let sessions = app.sessions.lock().expect("sessions lock").len();
    Json(json!({
        "status": "ok",
        "dataset": e.name,
        "series": e.tree.dataset().n(),
        "indexed": e.tree.len(),
        "leaves": e.tree.leaf_count(),
        "k": e.bundle.k,
        "distance": e.bundle.distance.to_string(),
        "sessions": sessions,
    }))
}

async fn submit(State(app): State<AppState>, body: Bytes) -> std::result::Result<Json<serde_json::Value>, ApiError> {
    let req: QueryRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError(StatusCode::BAD_REQUEST, format!("malformed query payload: {e}")))?;
    let id = app.submit(&req)?;
    Ok(Json(json!({ "session": id })))
}

async fn stop(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> std::result::Result<Json<serde_json::Value>, ApiError> {
    let session = app.session(&id).ok_or_else(|| not_found(&id))?;
    session.stop();
    let mut rx = session.changed.subscribe();
    let _ = tokio::time::timeout(STOP_WAIT, async {
        while !session.state().is_terminal() {
            if rx.changed().await.is_err() {
                break;
            }
        }
    })
    .await;
    Ok(Json(json!({ "state": session.state() })))
}

/// Replays the session's log, then follows it until the terminal event. A
/// `Last-Event-ID` header resumes after that event.
async fn events(
    State(app): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> std::result::Result<Sse<impl Stream<Item = std::result::Result<Event, Infallible>>>, ApiError> {
    let session = app.session(&id).ok_or_else(|| not_found(&id))?;
    let start = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<usize>().ok())
        .map_or(0, |seq| seq + 1);
    let rx = session.changed.subscribe();
    let stream = stream::unfold((session, rx, start, false), |(session, mut rx, next, done)| async move {
        if done {
            return None;
        }
        loop {
            rx.borrow_and_update();
            let pending = {
                let log = session.log.lock().expect("session lock");
                if let Some(ev) = log.events.get(next) {
                    Some(ev.clone())
                } else if log.state.is_terminal() {
                    return None;
                } else {
                    None
                }
            };
            if let Some(ev) = pending {
                let data = serde_json::to_string(&ev).expect("events serialize");
                let sse = Event::default().id(ev.seq.to_string()).data(data);
                return Some((Ok(sse), (session, rx, next + 1, ev.terminal)));
            }
            if rx.changed().await.is_err() {
                return None;
            }
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}
