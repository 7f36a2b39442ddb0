//! The live dispatcher over HTTP. One writer thread owns the
//! [`DispatchState`] and runs every [`dispatch_step`]; handlers read an
//! immutable snapshot that the writer swaps in after each step, and the
//! event stream fans the per-step deltas out over a broadcast channel.

use std::convert::Infallible;
use std::sync::{Arc, RwLock};
use std::thread;
use std::time::Duration;

use artdisp_core::control::Recommendation;
use artdisp_core::dispatch::{
    dispatch_step, DispatchContext, DispatchError, DispatchEvent, DispatchInput, DispatchState, EventPayload, Mode,
    RejectCode, Verdict,
};
use artdisp_core::grid::{NetworkCase, Perturbation};
use artdisp_core::stability::{LIndexReport, StateClass};
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::{broadcast, mpsc, oneshot};

/// Events kept in the snapshot; the full log is paged via `/api/events`.
pub const RECENT_EVENTS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub bus_count: usize,
    pub branch_count: usize,
    pub generator_count: usize,
    pub outaged_branches: Vec<usize>,
    pub outaged_generators: Vec<usize>,
}

impl CaseSummary {
    fn of(case: &NetworkCase) -> Self {
        Self {
            bus_count: case.buses.len(),
            branch_count: case.branches.len(),
            generator_count: case.generators.len(),
            outaged_branches: (0..case.branches.len())
                .filter(|&k| !case.branches[k].in_service)
                .collect(),
            outaged_generators: (0..case.generators.len())
                .filter(|&k| !case.generators[k].in_service)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiStateSnapshot {
    pub tick: u64,
    pub mode: Mode,
    /// Summary of the case the report was computed on.
    pub case: CaseSummary,
    pub l_report: LIndexReport,
    pub pending: Vec<Recommendation>,
    pub recent_events: Vec<DispatchEvent>,
    pub event_count: u64,
    /// False when recommendations come from the greedy search only.
    pub model_loaded: bool,
}

impl ApiStateSnapshot {
    pub fn of(state: &DispatchState, model_loaded: bool) -> Self {
        let skip = state.event_log.len().saturating_sub(RECENT_EVENTS);
        Self {
            tick: state.tick,
            mode: state.mode,
            // The report belongs to the last converged case, which is what
            // the summary describes too.
            case: CaseSummary::of(&state.last_converged_case),
            l_report: state.last_report.clone(),
            pending: state.pending.clone(),
            recent_events: state.event_log[skip..].to_vec(),
            event_count: state.event_log.len() as u64,
            model_loaded,
        }
    }
}

/// What the stream pushes after every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamDelta {
    pub tick: u64,
    pub mode: Mode,
    pub state_class: StateClass,
    pub l_max: f64,
    pub l_sum: f64,
    pub pending: usize,
    pub events: Vec<DispatchEvent>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventPage {
    pub since: u64,
    pub events: Vec<DispatchEvent>,
}

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{1}")]
    BadRequest(&'static str, String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Internal(String),
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    code: &'a str,
    message: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = match &self {
            ApiError::BadRequest(code, _) => (StatusCode::BAD_REQUEST, *code),
            ApiError::NotFound(_) => (StatusCode::NOT_FOUND, "unknown_id"),
            ApiError::Conflict(_) => (StatusCode::CONFLICT, "mode_conflict"),
            ApiError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        let body = ErrorBody {
            code,
            message: self.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

struct Published {
    state: Arc<DispatchState>,
    snapshot: Arc<ApiStateSnapshot>,
}

type Reply = oneshot::Sender<Result<Vec<DispatchEvent>, String>>;

/// Handle shared by the handlers. Cloning is cheap.
#[derive(Clone)]
pub struct AppState {
    published: Arc<RwLock<Arc<Published>>>,
    commands: mpsc::Sender<(DispatchInput, Reply)>,
    deltas: broadcast::Sender<StreamDelta>,
    initial: Arc<DispatchState>,
}

impl AppState {
    /// Solves the case and starts the writer thread. The thread ends when
    /// the last handle is dropped.
    pub fn start(case: NetworkCase, ctx: DispatchContext) -> Result<Self, DispatchError> {
        let state = DispatchState::new(case, &ctx)?;
        let model_loaded = ctx.bundle.is_some();
        let published = Arc::new(RwLock::new(Arc::new(Published {
            snapshot: Arc::new(ApiStateSnapshot::of(&state, model_loaded)),
            state: Arc::new(state.clone()),
        })));
        let (commands, mut rx) = mpsc::channel::<(DispatchInput, Reply)>(64);
        let (deltas, _) = broadcast::channel(256);
        let app = Self {
            published: published.clone(),
            commands,
            deltas: deltas.clone(),
            initial: Arc::new(state.clone()),
        };
        thread::Builder::new()
            .name("dispatch-writer".into())
            .spawn(move || {
                let mut state = state;
                while let Some((input, reply)) = rx.blocking_recv() {
                    let before = state.clone();
                    match dispatch_step(&ctx, state, &input) {
                        Ok((next, events)) => {
                            let p = Published {
                                snapshot: Arc::new(ApiStateSnapshot::of(&next, model_loaded)),
                                state: Arc::new(next.clone()),
                            };
                            *published.write().expect("snapshot lock") = Arc::new(p);
                            let r = &next.last_report;
                            let _ = deltas.send(StreamDelta {
                                tick: next.tick,
                                mode: next.mode,
                                state_class: r.state_class,
                                l_max: r.l_max,
                                l_sum: r.l_sum,
                                pending: next.pending.len(),
                                events: events.clone(),
                            });
                            state = next;
                            let _ = reply.send(Ok(events));
                        }
                        Err(e) => {
                            // A broken context; the state is left as it was.
                            state = before;
                            let _ = reply.send(Err(e.to_string()));
                        }
                    }
                }
            })
            .expect("spawn writer thread");
        Ok(app)
    }

    pub fn snapshot(&self) -> Arc<ApiStateSnapshot> {
        self.published.read().expect("snapshot lock").snapshot.clone()
    }

    /// The full state behind the current snapshot.
    pub fn state(&self) -> Arc<DispatchState> {
        self.published.read().expect("snapshot lock").state.clone()
    }

    /// State at tick 0, the starting point for replaying the log.
    pub fn initial_state(&self) -> Arc<DispatchState> {
        self.initial.clone()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<StreamDelta> {
        self.deltas.subscribe()
    }

    /// Queues one input for the writer and waits for its events.
    pub async fn submit(&self, input: DispatchInput) -> Result<Vec<DispatchEvent>, ApiError> {
        let (tx, rx) = oneshot::channel();
        self.commands
            .send((input, tx))
            .await
            .map_err(|_| ApiError::Internal("dispatcher stopped".into()))?;
        rx.await
            .map_err(|_| ApiError::Internal("dispatcher stopped".into()))?
            .map_err(ApiError::Internal)
    }

    /// Advances the clock every `period` until the handles are gone.
    pub fn spawn_clock(&self, period: Duration) -> tokio::task::JoinHandle<()> {
        let commands = self.commands.clone();
        tokio::spawn(async move {
            let mut timer = tokio::time::interval(period);
            timer.tick().await;
            loop {
                timer.tick().await;
                let (tx, rx) = oneshot::channel();
                if commands.send((DispatchInput::Tick { attack: None }, tx)).await.is_err() {
                    break;
                }
                let _ = rx.await;
            }
        })
    }
}

/// Turns a rejection recorded by the engine into the matching status.
fn check(events: Vec<DispatchEvent>) -> Result<Vec<DispatchEvent>, ApiError> {
    for e in &events {
        if let EventPayload::InputRejected { code, reason, .. } = &e.payload {
            return Err(match code {
                RejectCode::UnknownId => ApiError::NotFound(reason.clone()),
                RejectCode::ModeConflict => ApiError::Conflict(reason.clone()),
                RejectCode::InvalidInput => ApiError::BadRequest("invalid_input", reason.clone()),
            });
        }
    }
    Ok(events)
}

fn parse<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest("malformed_request", e.to_string()))
}

async fn get_state(State(app): State<AppState>) -> Json<ApiStateSnapshot> {
    Json((*app.snapshot()).clone())
}

async fn get_recommendations(State(app): State<AppState>) -> Json<Vec<Recommendation>> {
    Json(app.snapshot().pending.clone())
}

async fn decide(app: &AppState, id: String, verdict: Verdict) -> Result<StatusCode, ApiError> {
    check(app.submit(DispatchInput::Decision { id, verdict }).await?)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn apply(State(app): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    decide(&app, id, Verdict::Apply).await
}

async fn reject(State(app): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    decide(&app, id, Verdict::Reject).await
}

#[derive(Deserialize)]
struct ModeBody {
    mode: Mode,
}

async fn set_mode(State(app): State<AppState>, body: Bytes) -> Result<StatusCode, ApiError> {
    let ModeBody { mode } = parse(&body)?;
    check(app.submit(DispatchInput::ModeChange { mode }).await?)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn disturbance(State(app): State<AppState>, body: Bytes) -> Result<StatusCode, ApiError> {
    let perturbation: Perturbation = parse(&body)?;
    check(app.submit(DispatchInput::Disturbance { perturbation }).await?)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn tick(State(app): State<AppState>) -> Result<Json<Vec<DispatchEvent>>, ApiError> {
    Ok(Json(check(app.submit(DispatchInput::Tick { attack: None }).await?)?))
}

#[derive(Deserialize)]
struct Since {
    #[serde(default)]
    since: u64,
}

/// Events stamped at tick `since` or later. Several events share a tick,
/// so clients resuming a stream should drop sequence numbers they hold.
async fn events(State(app): State<AppState>, Query(q): Query<Since>) -> Json<EventPage> {
    let state = app.state();
    let start = state.event_log.partition_point(|e| e.tick < q.since);
    Json(EventPage {
        since: q.since,
        events: state.event_log[start..].to_vec(),
    })
}

fn sse_json<T: Serialize>(name: &str, value: &T) -> Event {
    Event::default()
        .event(name)
        .data(serde_json::to_string(value).expect("serializable"))
}

/// Full snapshot first, then one `delta` per step. A subscriber that falls
/// behind gets a fresh snapshot instead of the deltas it missed.
async fn stream(State(app): State<AppState>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let rx = app.subscribe();
    let first = sse_json("snapshot", &*app.snapshot());
    let s = futures::stream::unfold((Some(first), rx, app), |(first, mut rx, app)| async move {
        if let Some(ev) = first {
            return Some((Ok(ev), (None, rx, app)));
        }
        let ev = match rx.recv().await {
            Ok(delta) => sse_json("delta", &delta),
            Err(broadcast::error::RecvError::Lagged(_)) => sse_json("snapshot", &*app.snapshot()),
            Err(broadcast::error::RecvError::Closed) => return None,
        };
        Some((Ok(ev), (None, rx, app)))
    });
    Sse::new(s).keep_alive(KeepAlive::default())
}

pub fn router(app: AppState) -> Router {
    Router::new()
        .route("/api/state", get(get_state))
        .route("/api/recommendations", get(get_recommendations))
        .route("/api/actions/{id}/apply", post(apply))
        .route("/api/actions/{id}/reject", post(reject))
        .route("/api/mode", post(set_mode))
        .route("/api/disturbance", post(disturbance))
        .route("/api/tick", post(tick))
        .route("/api/events", get(events))
        .route("/api/stream", get(stream))
        .with_state(app)
}
