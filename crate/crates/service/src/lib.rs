//! HTTP + WebSocket API over [`ivos_core::Session`].
//!
//! Each session sits behind its own async mutex, which is the single-writer
//! guarantee: a commit or propagation holds the lock on a blocking worker
//! until the round is done, while other sessions proceed independently.
//! Progress events go out on a per-session broadcast channel, so the event
//! stream is ordered per session.

pub mod config;
mod error;

use std::collections::HashMap;
use std::hash::{BuildHasher, RandomState};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use ivos_core::eval::ObjectScore;
use ivos_core::propagation::ProgressEvent;
use ivos_core::synth::{generate_scene, synthetic_suite, SceneConfig};
use ivos_core::video::StageTimes;
use ivos_core::{io, Frame, Lifecycle, ScribbleDoc, Session};
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, Mutex};

pub use config::ServiceConfig;
pub use error::ServiceError;

type ApiResult<T> = Result<T, ServiceError>;

const EVENT_BUFFER: usize = 4096;

struct Slot {
    session: Arc<Mutex<Session>>,
    events: broadcast::Sender<ProgressEvent>,
}

/// Shared state behind the router.
pub struct AppState {
    config: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<Slot>>>,
    counter: AtomicU64,
    salt: RandomState,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Arc<Self> {
        Arc::new(AppState {
            config,
            sessions: RwLock::new(HashMap::new()),
            counter: AtomicU64::new(0),
            salt: RandomState::new(),
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    fn slot(&self, id: &str) -> ApiResult<Arc<Slot>> {
        self.sessions
            .read()
            .expect("session table poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }

    fn insert(&self, session: Session) -> ApiResult<String> {
        let mut table = self.sessions.write().expect("session table poisoned");
        if table.len() >= self.config.max_sessions {
            return Err(ServiceError::Full(self.config.max_sessions));
        }
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        let id = format!("{n:04x}{:012x}", self.salt.hash_one(n) & 0xffff_ffff_ffff);
        let (events, _) = broadcast::channel(EVENT_BUFFER);
        table.insert(
            id.clone(),
            Arc::new(Slot {
                session: Arc::new(Mutex::new(session)),
                events,
            }),
        );
        Ok(id)
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", axum::routing::delete(delete_session))
        .route("/sessions/{id}/scribbles", post(submit_scribbles))
        .route("/sessions/{id}/commit", post(commit))
        .route("/sessions/{id}/propagate", post(propagate))
        .route("/sessions/{id}/save", post(save))
        .route("/sessions/{id}/frames/{file}", get(frame_png))
        .route("/sessions/{id}/masks/{file}", get(mask_png))
        .route("/sessions/{id}/metrics", get(metrics))
        .route("/sessions/{id}/state", get(get_state))
        .route("/sessions/{id}/events", get(events))
        .with_state(state)
}

/// Binds the configured address and serves until ctrl-c.
pub async fn serve(config: ServiceConfig) -> ApiResult<()> {
    let addr = config.addr()?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| ServiceError::Config(format!("bind {addr}: {e}")))?;
    tracing::info!("listening on {}", listener.local_addr().map_err(ivos_core::Error::from)?);
    axum::serve(listener, router(AppState::new(config)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ServiceError::Worker(e.to_string()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VideoSource {
    /// A synthetic scene; its ground truth is attached.
    Generated(SceneConfig),
    /// Scene `i` of the shipped suite, ground truth attached.
    Suite(usize),
    /// Base64-encoded PNG frames.
    Upload { frames: Vec<String> },
    /// A session saved under the configured data directory.
    Saved(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateRequest {
    pub source: VideoSource,
    /// Required for uploads; must match the scene for generated sources.
    #[serde(default)]
    pub num_objects: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub interacted: Vec<usize>,
    pub wall_ms: StageTimes,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateView {
    pub id: String,
    pub lifecycle: Lifecycle,
    pub current_round: usize,
    pub num_frames: usize,
    pub height: usize,
    pub width: usize,
    pub num_objects: usize,
    pub pending_frames: Vec<usize>,
    pub has_ground_truth: bool,
    pub rounds: Vec<RoundSummary>,
}

fn view(id: &str, s: &Session) -> StateView {
    let (height, width) = s.state.extents();
    StateView {
        id: id.to_string(),
        lifecycle: s.lifecycle(),
        current_round: s.current_round(),
        num_frames: s.state.num_frames(),
        height,
        width,
        num_objects: s.state.num_objects,
        pending_frames: s.pending_frames(),
        has_ground_truth: s.ground_truth().is_some(),
        rounds: s
            .state
            .rounds
            .iter()
            .map(|r| RoundSummary {
                round: r.round,
                interacted: r.interacted.clone(),
                wall_ms: r.wall_ms.clone(),
            })
            .collect(),
    }
}

fn saved_dir(state: &AppState, name: &str) -> ApiResult<PathBuf> {
    let root = state
        .config
        .data_dir
        .as_ref()
        .ok_or_else(|| ServiceError::BadRequest("no data_dir configured".into()))?;
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
        return Err(ServiceError::BadRequest(format!("bad session name {name:?}")));
    }
    Ok(root.join(name))
}

fn build_session(state: &AppState, req: CreateRequest) -> ApiResult<Session> {
    let engine = state.config.engine.clone();
    let generated = |cfg: SceneConfig| -> ApiResult<Session> {
        let scene = generate_scene(&cfg)?;
        let m = scene.num_objects();
        if req.num_objects.is_some_and(|n| n != m) {
            return Err(ServiceError::BadRequest(format!("scene has {m} objects")));
        }
        Ok(Session::new(scene.frames, m, engine.clone())?.with_ground_truth(scene.gt)?)
    };
    match req.source {
        VideoSource::Generated(cfg) => generated(cfg),
        VideoSource::Suite(i) => {
            let suite = synthetic_suite();
            let cfg = suite
                .get(i)
                .cloned()
                .ok_or_else(|| ServiceError::BadRequest(format!("suite has {} scenes", suite.len())))?;
            generated(cfg)
        }
        VideoSource::Upload { frames } => {
            let m = req
                .num_objects
                .ok_or_else(|| ServiceError::BadRequest("num_objects is required for uploads".into()))?;
            let b64 = base64::engine::general_purpose::STANDARD;
            let mut video: Vec<Frame> = Vec::with_capacity(frames.len());
            for (t, data) in frames.iter().enumerate() {
                let bytes = b64
                    .decode(data)
                    .map_err(|e| ivos_core::Error::Format(format!("frame {t}: {e}")))?;
                let f = io::decode_frame_png(&bytes, t)?;
                if let Some(first) = video.first() {
                    if (f.height, f.width) != (first.height, first.width) {
                        return Err(ivos_core::Error::Format(format!(
                            "frame {t} is {}x{}, frame 0 is {}x{}",
                            f.width, f.height, first.width, first.height
                        ))
                        .into());
                    }
                }
                video.push(f);
            }
            Ok(Session::new(video, m, engine)?)
        }
        VideoSource::Saved(name) => Ok(Session::load(&saved_dir(state, &name)?)?),
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Worker(e.to_string()))?
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    Json(req): Json<CreateRequest>,
) -> ApiResult<(StatusCode, Json<StateView>)> {
    let st = state.clone();
    let session = blocking(move || build_session(&st, req)).await?;
    let v = view("", &session);
    let id = state.insert(session)?;
    Ok((StatusCode::CREATED, Json(StateView { id, ..v })))
}

async fn delete_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    let removed = state.sessions.write().expect("session table poisoned").remove(&id);
    match removed {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(ServiceError::NotFound(id)),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScribbleRequest {
    pub round: usize,
    pub scribbles: Vec<ScribbleDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Accepted {
    pub round: usize,
    pub frames: Vec<usize>,
}

async fn submit_scribbles(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<ScribbleRequest>,
) -> ApiResult<Json<Accepted>> {
    let slot = state.slot(&id)?;
    let mut s = slot.session.lock().await;
    let frames = s.submit_scribbles(req.round, &req.scribbles)?;
    Ok(Json(Accepted { round: req.round, frames }))
}

async fn commit(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<RoundSummary>> {
    let slot = state.slot(&id)?;
    let guard = slot.session.clone().lock_owned().await;
    let tx = slot.events.clone();
    blocking(move || {
        let mut s = guard;
        let round = s.current_round();
        let afi = s.commit(&mut |e| {
            let _ = tx.send(e);
        })?;
        Ok(Json(RoundSummary {
            round,
            interacted: afi.keys().copied().collect(),
            wall_ms: StageTimes::default(),
        }))
    })
    .await
}

async fn propagate(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<RoundSummary>> {
    let slot = state.slot(&id)?;
    let guard = slot.session.clone().lock_owned().await;
    let tx = slot.events.clone();
    blocking(move || {
        let mut s = guard;
        let rec = s.propagate(&mut |e| {
            let _ = tx.send(e);
        })?;
        Ok(Json(RoundSummary {
            round: rec.round,
            interacted: rec.interacted.clone(),
            wall_ms: rec.wall_ms.clone(),
        }))
    })
    .await
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Saved {
    pub name: String,
    pub path: PathBuf,
}

async fn save(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Saved>> {
    let slot = state.slot(&id)?;
    let dir = saved_dir(&state, &id)?;
    let guard = slot.session.clone().lock_owned().await;
    blocking(move || {
        guard.save(&dir)?;
        Ok(Json(Saved { name: id, path: dir }))
    })
    .await
}

fn png_index(file: &str) -> ApiResult<usize> {
    file.strip_suffix(".png")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ServiceError::BadRequest(format!("expected <index>.png, got {file:?}")))
}

fn png_response(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn frame_png(State(state): State<Arc<AppState>>, Path((id, file)): Path<(String, String)>) -> ApiResult<Response> {
    let t = png_index(&file)?;
    let slot = state.slot(&id)?;
    let s = slot.session.lock().await;
    let frame = s
        .state
        .video
        .get(t)
        .ok_or_else(|| ServiceError::NotFound(format!("{id}/frames/{t}")))?;
    Ok(png_response(io::encode_frame_png(frame)?))
}

#[derive(Debug, Deserialize)]
struct RoundQuery {
    round: Option<usize>,
}

async fn mask_png(
    State(state): State<Arc<AppState>>,
    Path((id, file)): Path<(String, String)>,
    Query(q): Query<RoundQuery>,
) -> ApiResult<Response> {
    let t = png_index(&file)?;
    let slot = state.slot(&id)?;
    let s = slot.session.lock().await;
    let masks = match (q.round, s.masks(q.round)) {
        (_, Some(m)) => m,
        (None, None) => {
            return Err(ivos_core::Error::Precondition("no round has been propagated yet".into()).into());
        }
        (Some(r), None) => return Err(ServiceError::NotFound(format!("{id} round {r}"))),
    };
    let mask = masks
        .get(t)
        .ok_or_else(|| ServiceError::NotFound(format!("{id}/masks/{t}")))?;
    Ok(png_response(io::encode_mask_png(mask)?))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub interacted: Vec<usize>,
    /// Means over non-interacted frames (all frames when every frame was
    /// interacted).
    pub mean_j: f64,
    pub mean_f: f64,
    pub mean_jf: f64,
    pub wall_ms: StageTimes,
    pub scores: Vec<ObjectScore>,
}

async fn metrics(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Vec<RoundMetrics>>> {
    let slot = state.slot(&id)?;
    let s = slot.session.lock().await;
    let rounds = s.metrics()?;
    Ok(Json(
        rounds
            .into_iter()
            .map(|r| {
                let scores: Vec<ObjectScore> = r.scores.into_iter().flatten().collect();
                let counted: Vec<&ObjectScore> = {
                    let c: Vec<_> = scores.iter().filter(|s| !r.interacted.contains(&s.frame)).collect();
                    if c.is_empty() { scores.iter().collect() } else { c }
                };
                let n = counted.len().max(1) as f64;
                let mean_j = counted.iter().map(|s| s.j).sum::<f64>() / n;
                let mean_f = counted.iter().map(|s| s.f).sum::<f64>() / n;
                RoundMetrics {
                    round: r.round,
                    interacted: r.interacted,
                    mean_j,
                    mean_f,
                    mean_jf: (mean_j + mean_f) / 2.0,
                    wall_ms: r.wall_ms,
                    scores,
                }
            })
            .collect(),
    ))
}

async fn get_state(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<StateView>> {
    let slot = state.slot(&id)?;
    let s = slot.session.lock().await;
    Ok(Json(view(&id, &s)))
}

async fn events(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    ws: WebSocketUpgrade,
) -> ApiResult<Response> {
    let slot = state.slot(&id)?;
    let rx = slot.events.subscribe();
    Ok(ws.on_upgrade(move |socket| forward_events(socket, rx)))
}

async fn forward_events(mut socket: WebSocket, mut rx: broadcast::Receiver<ProgressEvent>) {
    loop {
        tokio::select! {
            ev = rx.recv() => match ev {
                Ok(ev) => {
                    let text = serde_json::to_string(&ev).expect("event serializes");
                    if socket.send(Message::Text(text.into())).await.is_err() {
                        return;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    tracing::warn!("event stream lagged by {n} records");
                }
                Err(broadcast::error::RecvError::Closed) => return,
            },
            msg = socket.recv() => match msg {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}
