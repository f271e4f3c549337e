//! The running installation: worker threads for frames, perception and the
//! engine, plus the HTTP and websocket surface for the display and the
//! operator console.
//!
//! ```text
//! source --latest frame--> perception --events--> engine --DisplayEvent--> /events
//!                                                   |  ^
//!                                       RequestPoem v  | PoemReady
//!                                                generator thread
//! ```
//!
//! The frame slot holds only the newest frame, so a slow detector drops
//! stale frames instead of falling behind. Engine input is an ordered,
//! lossless channel. Generation runs on its own thread, and HTTP handlers
//! read a status snapshot, so neither waits on the language model.

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::thread::JoinHandle;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mirror_core::affect::AffectParams;
use mirror_core::engine::{Action, EngineConfig, EngineEvent, EngineSettings, Phase};
use mirror_core::poem::{BackendKind, Poem};
use mirror_core::sampling::SamplingParams;
use mirror_core::Frame;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::{broadcast, oneshot};

use crate::assets::{self, AssetError};
use crate::config::{ConfigError, GatewayConfig};
use crate::persistence::{self, PersistError, PoemArchive, SessionLog};
use crate::pipeline::{self, Backend, Perception, Session, SessionError, SharedBackend};
use crate::source::{self, FrameSource, Pacing, SourceError};

/// How often the engine sees a `Tick` when nothing else arrives.
const TICK_MS: u64 = 100;
/// Perception latencies kept for the status median.
const LATENCY_WINDOW: usize = 120;

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("cannot bind {addr}: {source}")]
    BindFailure { addr: String, source: std::io::Error },
    #[error("model load failed: {0}")]
    ModelLoadFailure(#[from] AssetError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid detection parameters: {0}")]
    DetectParams(String),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("runtime: {0}")]
    Runtime(std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DisplayKind {
    Poem,
    State,
    Presence,
    Heartbeat,
}

/// One message on `/events`. `seq` counts up from 1 on each connection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplayEvent {
    pub kind: DisplayKind,
    pub payload: Value,
    pub ts: u64,
    pub seq: u64,
}

#[derive(Debug, Clone)]
struct Published {
    kind: DisplayKind,
    payload: Value,
    ts: u64,
}

#[derive(Debug, Clone)]
struct Snapshot {
    state: Published,
    presence: Published,
    poem: Option<Published>,
}

/// Broadcast fan-out plus the snapshot sent to clients that join late or
/// fall behind.
pub struct Hub {
    tx: broadcast::Sender<Published>,
    snapshot: Mutex<Snapshot>,
}

impl Hub {
    fn new() -> Self {
        let (tx, _) = broadcast::channel(64);
        Self {
            tx,
            snapshot: Mutex::new(Snapshot {
                state: Published {
                    kind: DisplayKind::State,
                    payload: state_payload(Phase::Idle, 0, 0),
                    ts: 0,
                },
                presence: Published {
                    kind: DisplayKind::Presence,
                    payload: json!({ "present": false }),
                    ts: 0,
                },
                poem: None,
            }),
        }
    }

    fn publish(&self, kind: DisplayKind, payload: Value, ts: u64) {
        let event = Published { kind, payload, ts };
        {
            let mut snap = self.snapshot.lock().expect("hub lock");
            match kind {
                DisplayKind::Poem => snap.poem = Some(event.clone()),
                DisplayKind::State => {
                    if event.payload["phase"] != json!(Phase::Presenting) {
                        snap.poem = None;
                    }
                    snap.state = event.clone();
                }
                DisplayKind::Presence => snap.presence = event.clone(),
                DisplayKind::Heartbeat => {}
            }
        }
        let _ = self.tx.send(event);
    }

    fn snapshot(&self) -> Vec<Published> {
        let snap = self.snapshot.lock().expect("hub lock");
        let mut out = vec![snap.state.clone(), snap.presence.clone()];
        out.extend(snap.poem.clone());
        out
    }
}

fn state_payload(phase: Phase, phase_since: u64, cycle: u64) -> Value {
    json!({ "phase": phase, "phase_since": phase_since, "cycle": cycle })
}

/// What `GET /status` returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Status {
    pub phase: Phase,
    pub phase_since: u64,
    pub face_present: bool,
    pub cycle: u64,
    pub active_poem: Option<String>,
    pub last_ts: u64,
    pub backend: BackendKind,
    pub generating: bool,
    pub frames: u64,
    pub frames_dropped: u64,
    pub source_ended: bool,
    /// Median detect + classify time over recent frames.
    pub frame_latency_ms: Option<f64>,
    pub engine: EngineConfig,
    pub affect: AffectParams,
    pub sampling: SamplingParams,
    pub session_log: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    fn new(field: impl Into<String>, message: impl ToString) -> Self {
        Self {
            field: field.into(),
            message: message.to_string(),
        }
    }
}

/// Applies a `POST /config` body to `current`. Recognised keys are
/// `engine`, `affect` and `sampling` (objects whose fields replace the
/// current values) and `reload_lexicon` (boolean). All problems are
/// reported, each against the field that caused it.
pub fn apply_config_patch(
    current: &EngineSettings,
    patch: &Value,
    reload_lexicon: impl FnOnce() -> Result<mirror_core::affect::Lexicon, String>,
) -> Result<EngineSettings, Vec<FieldError>> {
    let Some(obj) = patch.as_object() else {
        return Err(vec![FieldError::new("", "body must be a JSON object")]);
    };
    let mut errors = Vec::new();
    let mut next = current.clone();
    for (key, value) in obj {
        match key.as_str() {
            "engine" => {
                if let Some(v) = merge_section(&current.timing, key, value, &mut errors) {
                    let v: EngineConfig = v;
                    match v.validate() {
                        Ok(()) => next.timing = v,
                        Err(mirror_core::engine::EngineError::InvalidConfig { field }) => {
                            errors.push(FieldError::new(format!("engine.{field}"), "must be positive"))
                        }
                        Err(e) => errors.push(FieldError::new("engine", e)),
                    }
                }
            }
            "affect" => {
                if let Some(v) = merge_section::<AffectParams>(&current.affect, key, value, &mut errors) {
                    match v.validate() {
                        Ok(()) => next.affect = v,
                        Err(e) => errors.push(FieldError::new("affect", e)),
                    }
                }
            }
            "sampling" => {
                if let Some(v) = merge_section::<SamplingParams>(&current.sampling, key, value, &mut errors) {
                    match v.validate() {
                        Ok(()) => next.sampling = v,
                        Err(e) => errors.push(FieldError::new("sampling", e)),
                    }
                }
            }
            "reload_lexicon" => match value.as_bool() {
                Some(false) => {}
                Some(true) => continue,
                None => errors.push(FieldError::new(key.as_str(), "must be a boolean")),
            },
            other => errors.push(FieldError::new(other, "not a tunable setting")),
        }
    }
    if errors.is_empty() && obj.get("reload_lexicon") == Some(&Value::Bool(true)) {
        match reload_lexicon() {
            Ok(lexicon) => next.lexicon = lexicon,
            Err(e) => errors.push(FieldError::new("reload_lexicon", e)),
        }
    }
    if errors.is_empty() {
        Ok(next)
    } else {
        Err(errors)
    }
}

fn merge_section<T: Serialize + for<'de> Deserialize<'de>>(
    current: &T,
    section: &str,
    patch: &Value,
    errors: &mut Vec<FieldError>,
) -> Option<T> {
    let Some(fields) = patch.as_object() else {
        errors.push(FieldError::new(section, "must be an object"));
        return None;
    };
    let mut base = serde_json::to_value(current).expect("settings serialise");
    let before = errors.len();
    for (name, value) in fields {
        let target = base.as_object_mut().expect("settings are objects");
        match target.get_mut(name) {
            Some(slot) => *slot = value.clone(),
            None => errors.push(FieldError::new(format!("{section}.{name}"), "unknown field")),
        }
    }
    if errors.len() > before {
        return None;
    }
    match serde_json::from_value(base) {
        Ok(v) => Some(v),
        Err(e) => {
            // Re-deserialise field by field to blame the right one.
            let blamed = fields.keys().find(|name| {
                let mut probe = serde_json::to_value(current).expect("settings serialise");
                probe[name.as_str()] = fields[name.as_str()].clone();
                serde_json::from_value::<T>(probe).is_err()
            });
            let field = blamed.map_or(section.to_string(), |n| format!("{section}.{n}"));
            errors.push(FieldError::new(field, e));
            None
        }
    }
}

/// A fresh session nonce from the wall clock and the process id.
pub fn live_nonce() -> u64 {
    let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos() as u64);
    nanos ^ ((std::process::id() as u64) << 32).rotate_left(17)
}

/// Loaded models and settings, ready to start.
pub struct GatewayParts {
    pub config: GatewayConfig,
    pub perception: Perception,
    pub backend: SharedBackend,
    pub settings: EngineSettings,
    pub nonce: u64,
}

impl GatewayParts {
    /// Loads every asset the config names.
    pub fn load(config: GatewayConfig) -> Result<Self, GatewayError> {
        let cascade = assets::load_cascade(&config.cascade)?;
        let classifier = assets::load_classifier(&config.classifier)?;
        let perception = Perception::new(cascade, classifier, config.detect).map_err(GatewayError::DetectParams)?;
        let backend: SharedBackend = match config.lm_path() {
            None => Arc::new(Backend::Template),
            Some(path) => {
                let tok = config.tokenizer.as_ref().map(|t| (t.vocab.as_path(), t.merges.as_path()));
                let (model, tokenizer) = assets::load_lm_with_tokenizer(path, tok)?;
                Arc::new(Backend::Transformer { model, tokenizer })
            }
        };
        let settings = config.engine_settings()?;
        Ok(Self {
            config,
            perception,
            backend,
            settings,
            nonce: live_nonce(),
        })
    }
}

enum EngineMsg {
    Perceived(EngineEvent),
    Generated(Result<Poem, String>),
    Configure {
        patch: Value,
        reply: oneshot::Sender<Result<Status, Vec<FieldError>>>,
    },
}

#[derive(Default)]
struct FrameSlot {
    frame: Option<Frame>,
    ended: bool,
}

#[derive(Default)]
struct Metrics {
    frames: AtomicU64,
    dropped: AtomicU64,
    ended: AtomicBool,
    latencies: Mutex<VecDeque<f64>>,
}

impl Metrics {
    fn median_latency(&self) -> Option<f64> {
        let mut v: Vec<f64> = self.latencies.lock().expect("metrics lock").iter().copied().collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        Some(v[v.len() / 2])
    }
}

#[derive(Clone)]
struct AppState {
    hub: Arc<Hub>,
    status: Arc<RwLock<Status>>,
    metrics: Arc<Metrics>,
    engine_tx: mpsc::Sender<EngineMsg>,
    archive_dir: PathBuf,
}

impl AppState {
    fn status(&self) -> Status {
        let mut s = self.status.read().expect("status lock").clone();
        s.frames = self.metrics.frames.load(Ordering::Relaxed);
        s.frames_dropped = self.metrics.dropped.load(Ordering::Relaxed);
        s.source_ended = self.metrics.ended.load(Ordering::Relaxed);
        s.frame_latency_ms = self.metrics.median_latency();
        s
    }
}

/// A running gateway. Dropping it without [`Gateway::shutdown`] leaves
/// the worker threads running until the process exits.
pub struct Gateway {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    server_stop: Option<oneshot::Sender<()>>,
    threads: Vec<JoinHandle<()>>,
    runtime: Option<tokio::runtime::Runtime>,
    session_log: PathBuf,
}

impl Gateway {
    pub fn start(config: GatewayConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        Self::start_with(GatewayParts::load(config)?)
    }

    pub fn start_with(parts: GatewayParts) -> Result<Self, GatewayError> {
        let GatewayParts {
            config,
            perception,
            backend,
            settings,
            nonce,
        } = parts;
        let listener = std::net::TcpListener::bind(&config.bind).map_err(|source| GatewayError::BindFailure {
            addr: config.bind.clone(),
            source,
        })?;
        listener.set_nonblocking(true).map_err(GatewayError::Runtime)?;
        let addr = listener.local_addr().map_err(GatewayError::Runtime)?;

        for dir in [&config.log_dir, &config.archive_dir] {
            std::fs::create_dir_all(dir).map_err(|source| PersistError::Io {
                path: dir.clone(),
                source,
            })?;
        }
        let session_log = config.log_dir.join(format!("session-{nonce:016x}.jsonl"));
        let log = SessionLog::open(&session_log)?;
        let archive = PoemArchive::open(&config.archive_dir)?;
        let session = Session::new(settings.clone(), nonce, Some(log), Some(archive))?;
        let epoch = Instant::now();
        let frames = source::open_source(&config.source, Pacing::RealTime)?;

        let stop = Arc::new(AtomicBool::new(false));
        let hub = Arc::new(Hub::new());
        let metrics = Arc::new(Metrics::default());
        let status = Arc::new(RwLock::new(Status {
            phase: Phase::Idle,
            phase_since: 0,
            face_present: false,
            cycle: 0,
            active_poem: None,
            last_ts: 0,
            backend: backend.kind(),
            generating: false,
            frames: 0,
            frames_dropped: 0,
            source_ended: false,
            frame_latency_ms: None,
            engine: settings.timing,
            affect: settings.affect,
            sampling: settings.sampling,
            session_log: session_log.clone(),
        }));
        let (engine_tx, engine_rx) = mpsc::channel();
        let slot = Arc::new((Mutex::new(FrameSlot::default()), Condvar::new()));

        let mut threads = Vec::new();
        threads.push(spawn("frames", {
            let (stop, slot, metrics) = (stop.clone(), slot.clone(), metrics.clone());
            move || frame_worker(frames, slot, metrics, stop)
        }));
        threads.push(spawn("perception", {
            let (stop, slot, metrics, tx) = (stop.clone(), slot.clone(), metrics.clone(), engine_tx.clone());
            move || perception_worker(perception, slot, metrics, tx, stop)
        }));
        threads.push(spawn("engine", {
            let worker = EngineWorker {
                session,
                backend,
                hub: hub.clone(),
                status: status.clone(),
                tx: engine_tx.clone(),
                epoch,
                heartbeat: Duration::from_millis(config.heartbeat_ms),
                lexicon_path: config.lexicon.clone(),
                generating: false,
            };
            let stop = stop.clone();
            move || worker.run(engine_rx, stop)
        }));

        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .map_err(GatewayError::Runtime)?;
        let app = AppState {
            hub,
            status,
            metrics,
            engine_tx,
            archive_dir: config.archive_dir.clone(),
        };
        let (server_stop, stopped) = oneshot::channel::<()>();
        let listener = {
            let _guard = runtime.enter();
            tokio::net::TcpListener::from_std(listener).map_err(GatewayError::Runtime)?
        };
        runtime.spawn(async move {
            let server = axum::serve(listener, router(app)).with_graceful_shutdown(async {
                let _ = stopped.await;
            });
            if let Err(e) = server.await {
                tracing::error!(error = %e, "http server stopped");
            }
        });
        tracing::info!(%addr, log = %session_log.display(), "gateway running");
        Ok(Self {
            addr,
            stop,
            server_stop: Some(server_stop),
            threads,
            runtime: Some(runtime),
            session_log,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn session_log(&self) -> &std::path::Path {
        &self.session_log
    }

    /// Blocks until Ctrl-C.
    pub fn wait_for_interrupt(&self) {
        if let Some(rt) = &self.runtime {
            let _ = rt.block_on(tokio::signal::ctrl_c());
        }
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(tx) = self.server_stop.take() {
            let _ = tx.send(());
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
        if let Some(rt) = self.runtime.take() {
            rt.shutdown_timeout(Duration::from_secs(2));
        }
    }
}

fn spawn(name: &str, f: impl FnOnce() + Send + 'static) -> JoinHandle<()> {
    std::thread::Builder::new()
        .name(format!("mirror-{name}"))
        .spawn(f)
        .expect("spawning a worker thread")
}

fn frame_worker(
    mut frames: Box<dyn FrameSource>,
    slot: Arc<(Mutex<FrameSlot>, Condvar)>,
    metrics: Arc<Metrics>,
    stop: Arc<AtomicBool>,
) {
    let (lock, ready) = &*slot;
    while !stop.load(Ordering::Relaxed) {
        let next = frames.next_frame();
        let mut s = lock.lock().expect("frame slot lock");
        match next {
            Ok(Some(frame)) => {
                if s.frame.replace(frame).is_some() {
                    metrics.dropped.fetch_add(1, Ordering::Relaxed);
                }
            }
            Ok(None) => {
                s.ended = true;
                metrics.ended.store(true, Ordering::Relaxed);
            }
            Err(e) => {
                tracing::error!(error = %e, "frame source failed");
                s.ended = true;
                metrics.ended.store(true, Ordering::Relaxed);
            }
        }
        let ended = s.ended;
        drop(s);
        ready.notify_one();
        if ended {
            break;
        }
    }
    frames.close();
}

fn perception_worker(
    perception: Perception,
    slot: Arc<(Mutex<FrameSlot>, Condvar)>,
    metrics: Arc<Metrics>,
    tx: mpsc::Sender<EngineMsg>,
    stop: Arc<AtomicBool>,
) {
    let (lock, ready) = &*slot;
    while !stop.load(Ordering::Relaxed) {
        let frame = {
            let mut s = lock.lock().expect("frame slot lock");
            if s.frame.is_none() && !s.ended {
                s = ready.wait_timeout(s, Duration::from_millis(TICK_MS)).expect("frame slot lock").0;
            }
            match s.frame.take() {
                Some(f) => f,
                None if s.ended => break,
                None => continue,
            }
        };
        let start = Instant::now();
        match perception.observe(&frame) {
            Ok(event) => {
                let ms = start.elapsed().as_secs_f64() * 1e3;
                metrics.frames.fetch_add(1, Ordering::Relaxed);
                let mut l = metrics.latencies.lock().expect("metrics lock");
                if l.len() == LATENCY_WINDOW {
                    l.pop_front();
                }
                l.push_back(ms);
                drop(l);
                if tx.send(EngineMsg::Perceived(event)).is_err() {
                    break;
                }
            }
            Err(e) => tracing::warn!(error = %e, "frame skipped"),
        }
    }
}

struct EngineWorker {
    session: Session,
    backend: SharedBackend,
    hub: Arc<Hub>,
    status: Arc<RwLock<Status>>,
    tx: mpsc::Sender<EngineMsg>,
    epoch: Instant,
    heartbeat: Duration,
    lexicon_path: Option<PathBuf>,
    generating: bool,
}

impl EngineWorker {
    fn now(&self) -> u64 {
        (self.epoch.elapsed().as_millis() as u64).max(self.session.state().last_ts)
    }

    fn run(mut self, rx: mpsc::Receiver<EngineMsg>, stop: Arc<AtomicBool>) {
        let tick = Duration::from_millis(TICK_MS);
        let mut last_event = Instant::now();
        let mut last_heartbeat = Instant::now();
        while !stop.load(Ordering::Relaxed) {
            let wait = tick.saturating_sub(last_event.elapsed());
            match rx.recv_timeout(wait) {
                Ok(EngineMsg::Perceived(event)) => {
                    let ts = event.ts().max(self.session.state().last_ts);
                    self.apply(pipeline::with_ts(event, ts));
                    last_event = Instant::now();
                }
                Ok(EngineMsg::Generated(result)) => {
                    self.generating = false;
                    let ts = self.now();
                    let event = match result {
                        Ok(poem) => EngineEvent::PoemReady { ts, poem },
                        Err(reason) => EngineEvent::PoemFailed { ts, reason },
                    };
                    self.apply(event);
                    last_event = Instant::now();
                }
                Ok(EngineMsg::Configure { patch, reply }) => {
                    let _ = reply.send(self.configure(&patch));
                }
                Err(mpsc::RecvTimeoutError::Timeout) => {
                    let ts = self.now();
                    self.apply(EngineEvent::Tick { ts });
                    last_event = Instant::now();
                }
                Err(mpsc::RecvTimeoutError::Disconnected) => break,
            }
            if last_heartbeat.elapsed() >= self.heartbeat {
                let s = self.session.state();
                self.hub
                    .publish(DisplayKind::Heartbeat, json!({ "phase": s.phase }), self.now());
                last_heartbeat = Instant::now();
            }
        }
    }

    fn apply(&mut self, event: EngineEvent) {
        let before = self.session.state().clone();
        let actions = match self.session.apply(&event) {
            Ok(a) => a,
            Err(e) => {
                tracing::error!(error = %e, event = event.name(), "engine rejected event");
                return;
            }
        };
        let ts = event.ts();
        let after = self.session.state().clone();
        let mut outbox = Vec::new();
        if after.face_present != before.face_present {
            outbox.push((DisplayKind::Presence, json!({ "present": after.face_present }), ts));
        }
        for action in &actions {
            match action {
                Action::RequestPoem { ts, selection } => {
                    self.generating = true;
                    let backend = self.backend.clone();
                    let settings = self.session.settings().clone();
                    let selection = selection.clone();
                    let tx = self.tx.clone();
                    let created_at = *ts;
                    spawn("generate", move || {
                        let params = pipeline::poem_params(&settings, &selection);
                        let result = backend
                            .generate(&selection, &params, &settings.poem, created_at)
                            .map_err(|e| e.to_string());
                        let _ = tx.send(EngineMsg::Generated(result));
                    });
                }
                Action::Display { ts, poem } => {
                    outbox.push((DisplayKind::State, state_payload(Phase::Presenting, *ts, after.cycle), *ts));
                    outbox.push((DisplayKind::Poem, serde_json::to_value(poem).expect("poems serialise"), *ts));
                }
                Action::RequestSeed { .. } | Action::ClearDisplay { .. } => {}
            }
        }
        let presenting_announced = actions.iter().any(|a| matches!(a, Action::Display { .. }));
        if after.phase != before.phase && !(presenting_announced && after.phase == Phase::Presenting) {
            outbox.push((DisplayKind::State, state_payload(after.phase, after.phase_since, after.cycle), ts));
        }
        // Status first, so a client reacting to an event reads matching state.
        self.refresh_status();
        for (kind, payload, ts) in outbox {
            self.hub.publish(kind, payload, ts);
        }
    }

    fn configure(&mut self, patch: &Value) -> Result<Status, Vec<FieldError>> {
        let path = self.lexicon_path.clone();
        let next = apply_config_patch(self.session.settings(), patch, || match &path {
            Some(p) => assets::load_lexicon(p).map_err(|e| e.to_string()),
            None => Ok(mirror_core::affect::Lexicon::builtin()),
        })?;
        let ts = self.now();
        self.session
            .update_settings(next, ts)
            .map_err(|e| vec![FieldError::new("", e)])?;
        self.refresh_status();
        Ok(self.status.read().expect("status lock").clone())
    }

    fn refresh_status(&self) {
        let s = self.session.state();
        let settings = self.session.settings();
        let mut status = self.status.write().expect("status lock");
        status.phase = s.phase;
        status.phase_since = s.phase_since;
        status.face_present = s.face_present;
        status.cycle = s.cycle;
        status.active_poem = s.active_poem.as_ref().map(|p| p.id.clone());
        status.last_ts = s.last_ts;
        status.generating = self.generating;
        status.engine = settings.timing;
        status.affect = settings.affect;
        status.sampling = settings.sampling;
    }
}

fn router(state: AppState) -> Router {
    Router::new()
        .route("/status", get(get_status))
        .route("/archive", get(get_archive))
        .route("/archive/{id}", get(get_archive_entry))
        .route("/config", post(post_config))
        .route("/events", get(events))
        .with_state(state)
}

async fn get_status(State(app): State<AppState>) -> Json<Status> {
    Json(app.status())
}

fn internal(e: impl ToString) -> Response {
    (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({ "error": e.to_string() }))).into_response()
}

async fn get_archive(State(app): State<AppState>) -> Response {
    let dir = app.archive_dir.clone();
    match tokio::task::spawn_blocking(move || persistence::read_index(&dir)).await {
        Ok(Ok(index)) => Json(index).into_response(),
        Ok(Err(e)) => internal(e),
        Err(e) => internal(e),
    }
}

async fn get_archive_entry(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> Response {
    let dir = app.archive_dir.clone();
    match tokio::task::spawn_blocking(move || persistence::read_record(&dir, &id)).await {
        Ok(Ok(Some(record))) => Json(record).into_response(),
        Ok(Ok(None)) => (StatusCode::NOT_FOUND, Json(json!({ "error": "no such poem" }))).into_response(),
        Ok(Err(e)) => internal(e),
        Err(e) => internal(e),
    }
}

async fn post_config(State(app): State<AppState>, body: axum::body::Bytes) -> Response {
    let patch: Value = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(e) => return (StatusCode::BAD_REQUEST, Json(json!({ "error": e.to_string() }))).into_response(),
    };
    let (reply, answer) = oneshot::channel();
    if app.engine_tx.send(EngineMsg::Configure { patch, reply }).is_err() {
        return internal("engine is not running");
    }
    match answer.await {
        Ok(Ok(_)) => Json(app.status()).into_response(),
        Ok(Err(errors)) => (StatusCode::UNPROCESSABLE_ENTITY, Json(json!({ "errors": errors }))).into_response(),
        Err(e) => internal(e),
    }
}

async fn events(State(app): State<AppState>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| display_client(socket, app.hub))
}

async fn display_client(mut socket: WebSocket, hub: Arc<Hub>) {
    // Subscribe before reading the snapshot so nothing falls in between.
    let mut rx = hub.tx.subscribe();
    let mut seq = 0u64;
    let mut send = |p: Published| {
        seq += 1;
        let event = DisplayEvent {
            kind: p.kind,
            payload: p.payload,
            ts: p.ts,
            seq,
        };
        Message::Text(serde_json::to_string(&event).expect("display events serialise").into())
    };
    for p in hub.snapshot() {
        if socket.send(send(p)).await.is_err() {
            return;
        }
    }
    loop {
        tokio::select! {
            msg = rx.recv() => {
                let batch = match msg {
                    Ok(p) => vec![p],
                    // Too slow: skip ahead to the current state and poem.
                    Err(broadcast::error::RecvError::Lagged(_)) => hub.snapshot(),
                    Err(broadcast::error::RecvError::Closed) => return,
                };
                for p in batch {
                    if socket.send(send(p)).await.is_err() {
                        return;
                    }
                }
            }
            incoming = socket.recv() => match incoming {
                None | Some(Err(_)) | Some(Ok(Message::Close(_))) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_merges_and_validates() {
        let current = EngineSettings::default();
        let ok = apply_config_patch(&current, &json!({ "engine": { "present_for_ms": 20000 } }), || unreachable!()).unwrap();
        assert_eq!(ok.timing.present_for_ms, 20_000);
        assert_eq!(ok.timing.cooldown_ms, current.timing.cooldown_ms);

        let err = apply_config_patch(&current, &json!({ "engine": { "present_for_ms": 0 } }), || unreachable!()).unwrap_err();
        assert_eq!(err, vec![FieldError::new("engine.present_for_ms", "must be positive")]);

        let err = apply_config_patch(&current, &json!({ "sampling": { "top_p": "x" }, "colour": 1 }), || unreachable!())
            .unwrap_err();
        let fields: Vec<&str> = err.iter().map(|e| e.field.as_str()).collect();
        assert_eq!(fields, ["colour", "sampling.top_p"]);

        let err = apply_config_patch(&current, &json!({ "affect": { "dwel_ms": 5 } }), || unreachable!()).unwrap_err();
        assert_eq!(err[0].field, "affect.dwel_ms");
    }

    #[test]
    fn lexicon_reload_only_when_valid() {
        let current = EngineSettings::default();
        let err = apply_config_patch(&current, &json!({ "reload_lexicon": true }), || Err("bad file".into())).unwrap_err();
        assert_eq!(err[0].field, "reload_lexicon");
        let ok = apply_config_patch(&current, &json!({ "reload_lexicon": true }), || Ok(current.lexicon.clone()));
        assert!(ok.is_ok());
    }

    #[test]
    fn hub_snapshot_tracks_poem() {
        let hub = Hub::new();
        assert_eq!(hub.snapshot().len(), 2);
        hub.publish(DisplayKind::State, state_payload(Phase::Presenting, 5, 1), 5);
        hub.publish(DisplayKind::Poem, json!({ "id": "p" }), 5);
        assert_eq!(hub.snapshot().len(), 3);
        hub.publish(DisplayKind::State, state_payload(Phase::Cooldown, 9, 1), 9);
        assert_eq!(hub.snapshot().len(), 2);
    }
}
