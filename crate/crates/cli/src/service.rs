//! HTTP service for the operator UI.
//!
//! One owner thread holds the [`World`] and is the only code that mutates
//! it. Handlers send it requests over a channel; after each request (and
//! each realtime tick) the owner publishes a status snapshot and any new
//! ledger records, which handlers read without touching the world.
//!
//! | Method | Path | Body | Reply |
//! |---|---|---|---|
//! | GET | `/api/status` | | status snapshot JSON |
//! | GET | `/api/profile` | | current config as a profile JSON |
//! | POST | `/api/packet` | frame bytes (octet-stream) or hex text | response frames |
//! | POST | `/api/advance` | `{"seconds": f}` or `{"until": ts}` | status snapshot |
//! | POST | `/api/action` | scenario action JSON | status snapshot |
//! | GET | `/api/events?from=N` | | server-sent ledger records from seq N (default 0) |
//! | POST | `/api/shutdown` | | run summary; server stops |

use std::collections::VecDeque;
use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::{mpsc, Arc, RwLock};
use std::thread;
use std::time::{Duration, Instant};

use aru_core::protocol::{decode_packet, Decoded, Profile, Response};
use aru_core::sim::{ActionKind, LedgerRecord, RunLedger, Scenario, ScenarioError, StatusSnapshot, World};
use aru_core::Timestamp;
use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response as HttpResponse};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{Stream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{broadcast, oneshot, watch, Notify};

use crate::error::CliError;

const TICK: Duration = Duration::from_millis(100);
const IDLE_SCENARIO: &str = r#"
seed = 0
start = "2025-06-01T00:00:00"
duration_s = 2592000
jumper = true
materialize_audio = false
"#;

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub host: String,
    pub port: u16,
    pub scenario: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub realtime_factor: Option<f64>,
}

/// A ledger record with its position in the run.
#[derive(Debug, Clone, Serialize)]
pub struct EventRecord {
    pub seq: usize,
    #[serde(flatten)]
    pub record: LedgerRecord,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdvanceRequest {
    pub seconds: Option<f64>,
    pub until: Option<Timestamp>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Summary {
    pub records: usize,
    pub sessions: usize,
    pub anomalies: usize,
    pub out: Option<PathBuf>,
}

enum Request {
    Packet(Vec<u8>, oneshot::Sender<Vec<Vec<u8>>>),
    Advance(AdvanceRequest, oneshot::Sender<()>),
    Action(ActionKind, oneshot::Sender<()>),
    Shutdown(oneshot::Sender<Result<RunLedger, ScenarioError>>),
}

struct Published {
    status: watch::Sender<Arc<StatusSnapshot>>,
    events: broadcast::Sender<Arc<EventRecord>>,
    history: RwLock<Vec<Arc<EventRecord>>>,
}

impl Published {
    /// Records from `seq` on, and the sequence number the caller should
    /// expect next (`seq` clamped to the end of history).
    fn history_from(&self, seq: usize) -> (Vec<Arc<EventRecord>>, usize) {
        let h = self.history.read().expect("history lock");
        let start = seq.min(h.len());
        (h[start..].to_vec(), start)
    }
}

#[derive(Clone)]
struct AppState {
    tx: mpsc::Sender<Request>,
    shared: Arc<Published>,
    stop: Arc<Notify>,
    out: Option<PathBuf>,
}

type ApiError = (StatusCode, String);

fn gone() -> ApiError {
    (StatusCode::SERVICE_UNAVAILABLE, "simulation has shut down".into())
}

impl AppState {
    async fn call<T>(&self, make: impl FnOnce(oneshot::Sender<T>) -> Request) -> Result<T, ApiError> {
        let (reply, rx) = oneshot::channel();
        self.tx.send(make(reply)).map_err(|_| gone())?;
        rx.await.map_err(|_| gone())
    }

    fn status(&self) -> StatusSnapshot {
        (**self.shared.status.borrow()).clone()
    }
}

/// Handle to a running owner thread.
pub struct Simulation {
    state: AppState,
    owner: thread::JoinHandle<()>,
}

impl Simulation {
    /// Builds the world on a dedicated thread and starts serving requests.
    pub fn start(scenario: Scenario, out: Option<PathBuf>, realtime_factor: Option<f64>) -> Result<Self, CliError> {
        if let Some(f) = realtime_factor {
            if !(f.is_finite() && f > 0.0) {
                return Err(CliError::usage(format!("realtime factor must be positive, got {f}")));
            }
        }
        let (tx, rx) = mpsc::channel();
        let (ready_tx, ready_rx) = mpsc::channel();
        let owner_out = out.clone();
        let owner = thread::Builder::new()
            .name("aru-world".into())
            .spawn(move || {
                let world = match World::new(scenario, owner_out.as_deref()) {
                    Ok(w) => w,
                    Err(e) => {
                        let _ = ready_tx.send(Err(e));
                        return;
                    }
                };
                let shared = Arc::new(Published {
                    status: watch::channel(Arc::new(world.status())).0,
                    events: broadcast::channel(4096).0,
                    history: RwLock::new(Vec::new()),
                });
                let _ = ready_tx.send(Ok(shared.clone()));
                own(world, &rx, &shared, realtime_factor);
            })
            .map_err(|e| CliError::failure(format!("cannot start simulation thread: {e}")))?;
        let shared = ready_rx
            .recv()
            .map_err(|_| CliError::failure("simulation thread exited during start-up"))??;
        Ok(Self {
            state: AppState {
                tx,
                shared,
                stop: Arc::new(Notify::new()),
                out,
            },
            owner,
        })
    }

    pub fn router(&self) -> Router {
        router(self.state.clone())
    }

    /// Resolves once a client has asked the server to stop.
    pub fn stopped(&self) -> impl std::future::Future<Output = ()> + Send + 'static {
        let stop = self.state.stop.clone();
        async move { stop.notified().await }
    }

    /// Closes the run, writing outputs if an output directory was given.
    /// Returns `None` if a client already shut it down.
    pub fn shutdown(self) -> Result<Option<RunLedger>, CliError> {
        let (reply, rx) = oneshot::channel();
        let result = match self.state.tx.send(Request::Shutdown(reply)) {
            Ok(()) => rx.blocking_recv().ok(),
            Err(_) => None,
        };
        drop(self.state);
        let _ = self.owner.join();
        result.transpose().map_err(CliError::from)
    }
}

fn own(mut world: World, rx: &mpsc::Receiver<Request>, shared: &Published, factor: Option<f64>) {
    let mut cursor = 0;
    publish(&world, &mut cursor, shared);
    let mut last = Instant::now();
    loop {
        let request = match factor {
            Some(_) => match rx.recv_timeout(TICK) {
                Ok(r) => Some(r),
                Err(mpsc::RecvTimeoutError::Timeout) => None,
                Err(mpsc::RecvTimeoutError::Disconnected) => break,
            },
            None => match rx.recv() {
                Ok(r) => Some(r),
                Err(_) => break,
            },
        };
        if let Some(f) = factor {
            let now = Instant::now();
            world.advance_by(f * (now - last).as_secs_f64());
            last = now;
        }
        match request {
            None => publish(&world, &mut cursor, shared),
            Some(Request::Packet(bytes, reply)) => {
                world.receive_bytes(&bytes);
                let frames = world.take_outbox();
                publish(&world, &mut cursor, shared);
                let _ = reply.send(frames);
            }
            Some(Request::Advance(req, reply)) => {
                match (req.seconds, req.until) {
                    (Some(s), _) => world.advance_by(s),
                    (None, Some(t)) => world.advance_to(t),
                    (None, None) => {}
                }
                publish(&world, &mut cursor, shared);
                let _ = reply.send(());
            }
            Some(Request::Action(kind, reply)) => {
                world.apply_action(kind);
                publish(&world, &mut cursor, shared);
                let _ = reply.send(());
            }
            Some(Request::Shutdown(reply)) => {
                let _ = reply.send(world.close());
                return;
            }
        }
    }
    let _ = world.close();
}

fn publish(world: &World, cursor: &mut usize, shared: &Published) {
    let fresh: Vec<_> = world
        .records_since(*cursor)
        .iter()
        .enumerate()
        .map(|(i, r)| {
            Arc::new(EventRecord {
                seq: *cursor + i,
                record: r.clone(),
            })
        })
        .collect();
    *cursor += fresh.len();
    shared.history.write().expect("history lock").extend(fresh.iter().cloned());
    for ev in fresh {
        let _ = shared.events.send(ev);
    }
    shared.status.send_replace(Arc::new(world.status()));
}

fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/status", get(status))
        .route("/api/profile", get(profile))
        .route("/api/packet", post(packet))
        .route("/api/advance", post(advance))
        .route("/api/action", post(action))
        .route("/api/events", get(events))
        .route("/api/shutdown", post(shutdown))
        .with_state(state)
}

async fn status(State(app): State<AppState>) -> Json<StatusSnapshot> {
    Json(app.status())
}

async fn profile(State(app): State<AppState>) -> Json<serde_json::Value> {
    Json(Profile::new("device", app.status().config).to_value())
}

async fn packet(State(app): State<AppState>, headers: HeaderMap, body: Bytes) -> Result<HttpResponse, ApiError> {
    let raw = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("application/octet-stream"));
    let bytes = if raw {
        body.to_vec()
    } else {
        let text = std::str::from_utf8(&body).map_err(|_| (StatusCode::BAD_REQUEST, "body is not hex text".to_string()))?;
        let compact: String = text.split_whitespace().collect();
        hex::decode(compact).map_err(|e| (StatusCode::BAD_REQUEST, format!("bad hex: {e}")))?
    };
    let frames = app.call(|reply| Request::Packet(bytes, reply)).await?;
    if raw {
        return Ok(([(header::CONTENT_TYPE, "application/octet-stream")], frames.concat()).into_response());
    }
    let responses: Vec<Option<Response>> = frames
        .iter()
        .map(|f| match decode_packet(f) {
            Decoded::Packet { packet, .. } => Response::parse(&packet).ok(),
            _ => None,
        })
        .collect();
    let hex: Vec<String> = frames.iter().map(hex::encode).collect();
    Ok(Json(json!({ "frames": hex, "responses": responses })).into_response())
}

async fn advance(State(app): State<AppState>, Json(req): Json<AdvanceRequest>) -> Result<Json<StatusSnapshot>, ApiError> {
    match (req.seconds, req.until) {
        (Some(s), None) if s.is_finite() && s >= 0.0 => {}
        (None, Some(_)) => {}
        _ => {
            return Err((
                StatusCode::BAD_REQUEST,
                "give exactly one of seconds (finite, >= 0) or until".into(),
            ))
        }
    }
    app.call(|reply| Request::Advance(req, reply)).await?;
    Ok(Json(app.status()))
}

async fn action(State(app): State<AppState>, Json(kind): Json<ActionKind>) -> Result<Json<StatusSnapshot>, ApiError> {
    if let ActionKind::PowerCut { off_s } = kind {
        if !(off_s.is_finite() && off_s >= 0.0) {
            return Err((StatusCode::BAD_REQUEST, format!("off_s must be finite and >= 0, got {off_s}")));
        }
    }
    app.call(|reply| Request::Action(kind, reply)).await?;
    Ok(Json(app.status()))
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    #[serde(default)]
    from: usize,
}

async fn events(
    State(app): State<AppState>,
    Query(q): Query<EventsQuery>,
) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    // Subscribe before reading history so nothing published in between is
    // missed; duplicates are dropped by sequence number.
    let rx = app.shared.events.subscribe();
    let (backlog, next) = app.shared.history_from(q.from);
    let stream = futures::stream::unfold(
        (rx, VecDeque::from(backlog), next, app.shared.clone()),
        |(mut rx, mut pending, mut next, shared)| async move {
            loop {
                if let Some(ev) = pending.pop_front() {
                    if ev.seq < next {
                        continue;
                    }
                    next = ev.seq + 1;
                    return Some((ev, (rx, pending, next, shared)));
                }
                match rx.recv().await {
                    Ok(ev) => pending.push_back(ev),
                    Err(broadcast::error::RecvError::Lagged(_)) => pending = shared.history_from(next).0.into(),
                    Err(broadcast::error::RecvError::Closed) => return None,
                }
            }
        },
    )
    .map(|ev| Ok(sse_event(&ev)));
    Sse::new(stream).keep_alive(KeepAlive::default())
}

fn sse_event(ev: &EventRecord) -> Event {
    let data = serde_json::to_value(ev).expect("record serializes");
    let kind = data["kind"].as_str().unwrap_or("record").to_owned();
    Event::default().id(ev.seq.to_string()).event(kind).data(data.to_string())
}

async fn shutdown(State(app): State<AppState>) -> Result<Json<Summary>, ApiError> {
    let result = app.call(Request::Shutdown).await?;
    app.stop.notify_one();
    let ledger = result.map_err(|e| (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(Json(summary(&ledger, app.out.clone())))
}

fn summary(ledger: &RunLedger, out: Option<PathBuf>) -> Summary {
    Summary {
        records: ledger.records.len(),
        sessions: ledger.sessions().count(),
        anomalies: ledger.anomalies().count(),
        out,
    }
}

pub fn serve(opts: ServeOptions) -> Result<(), CliError> {
    let scenario = match &opts.scenario {
        Some(path) => Scenario::load(path)?,
        None => Scenario::from_toml(IDLE_SCENARIO)?,
    };
    let sim = Simulation::start(scenario, opts.out.clone(), opts.realtime_factor)?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::failure(format!("cannot start runtime: {e}")))?;
    let app = sim.router();
    let stopped = sim.stopped();
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind((opts.host.as_str(), opts.port))
            .await
            .map_err(|e| CliError::failure(format!("cannot bind {}:{}: {e}", opts.host, opts.port)))?;
        let addr = listener
            .local_addr()
            .map_err(|e| CliError::failure(e.to_string()))?;
        println!("listening on http://{addr}");
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                tokio::select! {
                    _ = tokio::signal::ctrl_c() => {}
                    _ = stopped => {}
                }
            })
            .await
            .map_err(|e| CliError::failure(format!("server error: {e}")))
    })?;
    runtime.shutdown_timeout(Duration::from_secs(1));
    if let Some(ledger) = sim.shutdown()? {
        let s = summary(&ledger, opts.out);
        println!("stopped: {} records, {} sessions, {} anomalies", s.records, s.sessions, s.anomalies);
    }
    Ok(())
}
