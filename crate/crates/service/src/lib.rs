//! Session-oriented HTTP API for blind human play.
//!
//! A player sees only the nine agent utterances and the simulated user's
//! replies. The scene stays hidden until the session ends, after which
//! `/reveal` returns the dataset record and its oracle solve length.
//! Finished sessions go to an append-only JSONL log that backs `/api/stats`.

mod session;
pub mod store;

use std::collections::HashMap;
use std::future::Future;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gridtalk_core::dialogue::{AgentUtterance, SimulatedUser};
use gridtalk_core::grid::{EpisodeConfig, DEFAULT_TURN_LIMIT};
use gridtalk_core::scenegen::{read_scene_lines, SceneGenError, SceneRecord, Split, Strictness};
use gridtalk_protocol::{
    ActRequest, ActResponse, CreateSessionRequest, CreateSessionResponse, ErrorBody,
    RevealResponse, SessionView, StatsResponse,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde_json::value::RawValue;
use thiserror::Error;

use session::Session;
pub use store::{Store, StoredEpisode};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Dataset(#[from] SceneGenError),
    #[error("dataset {0} holds no scenes")]
    EmptyDataset(PathBuf),
    #[error("transcript store {path}: {source}")]
    Store {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid service config: {0}")]
    Config(String),
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data: PathBuf,
    pub store_dir: PathBuf,
    /// Idle sessions older than this are closed as failures.
    pub session_ttl: Duration,
    pub turn_limit: usize,
    /// Probability that the user flips a relational answer.
    pub noise: f64,
    /// Split used when a request names neither split nor scene.
    pub default_split: Split,
    /// Directory of built console assets served under `/`.
    pub static_dir: Option<PathBuf>,
}

impl ServiceConfig {
    pub fn new(data: impl Into<PathBuf>, store_dir: impl Into<PathBuf>) -> Self {
        Self {
            data: data.into(),
            store_dir: store_dir.into(),
            session_ttl: Duration::from_secs(3600),
            turn_limit: DEFAULT_TURN_LIMIT,
            noise: 0.0,
            default_split: Split::Test,
            static_dir: None,
        }
    }
}

struct Scenes {
    records: Vec<SceneRecord>,
    lines: Vec<String>,
    by_id: HashMap<String, usize>,
}

impl Scenes {
    fn load(path: &Path) -> Result<Scenes, ServiceError> {
        let (records, lines): (Vec<_>, Vec<_>) = read_scene_lines(path, Strictness::Lenient)?
            .into_iter()
            .unzip();
        if records.is_empty() {
            return Err(ServiceError::EmptyDataset(path.to_path_buf()));
        }
        let by_id = records
            .iter()
            .enumerate()
            .map(|(i, r): (usize, &SceneRecord)| (r.id.clone(), i))
            .collect();
        Ok(Scenes {
            records,
            lines,
            by_id,
        })
    }
}

type SessionMap = HashMap<String, Arc<Mutex<Session>>>;

/// Shared state behind every handler.
pub struct AppState {
    config: ServiceConfig,
    scenes: Scenes,
    sessions: Mutex<SessionMap>,
    store: Mutex<Store>,
}

impl AppState {
    pub fn load(config: ServiceConfig) -> Result<AppState, ServiceError> {
        if config.turn_limit == 0 {
            return Err(ServiceError::Config("turn limit must be positive".into()));
        }
        if !(0.0..=1.0).contains(&config.noise) {
            return Err(ServiceError::Config(format!(
                "noise {} is not a probability",
                config.noise
            )));
        }
        let scenes = Scenes::load(&config.data)?;
        let store = Store::open(&config.store_dir).map_err(|source| ServiceError::Store {
            path: config.store_dir.clone(),
            source,
        })?;
        Ok(AppState {
            config,
            scenes,
            sessions: Mutex::new(HashMap::new()),
            store: Mutex::new(store),
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn scene_count(&self) -> usize {
        self.scenes.records.len()
    }

    pub fn live_sessions(&self) -> usize {
        self.sessions.lock().unwrap().len()
    }

    pub fn stats(&self) -> StatsResponse {
        self.store.lock().unwrap().stats()
    }

    fn record(&self, ep: &StoredEpisode) -> Result<(), ApiError> {
        let mut store = self.store.lock().unwrap();
        store.append(ep).map_err(|e| {
            tracing::error!("cannot append to {}: {e}", store.path().display());
            ApiError::Internal("could not persist the finished session".into())
        })
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions
            .lock()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("no session {id:?}")))
    }

    /// Closes idle sessions and forgets finished ones nobody has touched for
    /// a full TTL. Returns how many sessions were closed.
    pub fn sweep(&self, now: Instant) -> usize {
        let all: Vec<(String, Arc<Mutex<Session>>)> = self
            .sessions
            .lock()
            .unwrap()
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let ttl = self.config.session_ttl;
        let mut closed = 0;
        let mut stale = Vec::new();
        for (id, s) in all {
            let mut s = s.lock().unwrap();
            if s.status().is_terminal() {
                if now.saturating_duration_since(s.last_active) > ttl {
                    stale.push(id);
                }
                continue;
            }
            let scene_id = &self.scenes.records[s.scene].id;
            if let Some(ep) = s.expire_if_idle(now, ttl, scene_id) {
                if self.record(&ep).is_ok() {
                    closed += 1;
                }
            }
        }
        let mut map = self.sessions.lock().unwrap();
        for id in stale {
            map.remove(&id);
        }
        closed
    }
}

#[derive(Debug)]
enum ApiError {
    BadRequest(String),
    NotFound(String),
    Forbidden(String),
    Conflict(String),
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (code, error) = match self {
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, m),
            ApiError::Forbidden(m) => (StatusCode::FORBIDDEN, m),
            ApiError::Conflict(m) => (StatusCode::CONFLICT, m),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
        };
        (code, Json(ErrorBody { error })).into_response()
    }
}

/// An empty body reads as `{}`.
fn parse_body<T: DeserializeOwned + Default>(body: &Bytes) -> Result<T, ApiError> {
    if body.iter().all(|b| b.is_ascii_whitespace()) {
        return Ok(T::default());
    }
    serde_json::from_slice(body)
        .map_err(|e| ApiError::BadRequest(format!("malformed request body: {e}")))
}

fn choices() -> Vec<String> {
    AgentUtterance::ALL
        .iter()
        .map(|u| u.render().to_string())
        .collect()
}

async fn create_session(
    State(app): State<Arc<AppState>>,
    body: Bytes,
) -> Result<(StatusCode, Json<CreateSessionResponse>), ApiError> {
    let req: CreateSessionRequest = parse_body(&body)?;
    let split = req
        .split
        .as_deref()
        .map(|s| {
            s.parse::<Split>()
                .map_err(|e| ApiError::BadRequest(format!("bad split: {e}")))
        })
        .transpose()?;
    let seed = req.seed.unwrap_or_else(rand::random);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scenes = &app.scenes;
    let index = match &req.scene_id {
        Some(id) => {
            let i = *scenes
                .by_id
                .get(id)
                .ok_or_else(|| ApiError::NotFound(format!("no scene {id:?}")))?;
            if let Some(split) = split {
                if scenes.records[i].split != split {
                    return Err(ApiError::BadRequest(format!(
                        "scene {id:?} is not in the {split} split"
                    )));
                }
            }
            i
        }
        None => {
            let split = split.unwrap_or(app.config.default_split);
            let pool: Vec<usize> = (0..scenes.records.len())
                .filter(|&i| scenes.records[i].split == split)
                .collect();
            if pool.is_empty() {
                return Err(ApiError::NotFound(format!(
                    "the {split} split holds no scenes"
                )));
            }
            pool[rng.gen_range(0..pool.len())]
        }
    };
    let id = uuid::Uuid::new_v4().simple().to_string();
    let session = Session::new(
        id.clone(),
        index,
        Arc::new(scenes.records[index].scene.clone()),
        EpisodeConfig {
            turn_limit: app.config.turn_limit,
            ..EpisodeConfig::default()
        },
        SimulatedUser::with_noise(app.config.noise),
        rng,
        Instant::now(),
    );
    app.sessions
        .lock()
        .unwrap()
        .insert(id.clone(), Arc::new(Mutex::new(session)));
    tracing::debug!("session {id} started");
    Ok((
        StatusCode::CREATED,
        Json(CreateSessionResponse {
            session_id: id,
            choices: choices(),
            turn: 0,
            scene_id: req.scene_id,
        }),
    ))
}

async fn act(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<ActResponse>, ApiError> {
    let handle = app.session(&id)?;
    let mut s = handle.lock().unwrap();
    let now = Instant::now();
    let scene_id = &app.scenes.records[s.scene].id;
    if let Some(ep) = s.expire_if_idle(now, app.config.session_ttl, scene_id) {
        app.record(&ep)?;
    }
    if s.status().is_terminal() {
        return Err(ApiError::Conflict(format!(
            "session {id:?} has already ended ({})",
            s.status_str()
        )));
    }
    let req: ActRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::BadRequest(format!("malformed request body: {e}")))?;
    let utterance = AgentUtterance::from_index(req.action_index)
        .map_err(|e| ApiError::BadRequest(e.to_string()))?;
    let (response, finished) = s
        .act(utterance, now, scene_id)
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    if let Some(ep) = finished {
        app.record(&ep)?;
    }
    Ok(Json(response))
}

async fn view(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<SessionView>, ApiError> {
    let handle = app.session(&id)?;
    let mut s = handle.lock().unwrap();
    let scene_id = &app.scenes.records[s.scene].id;
    if let Some(ep) = s.expire_if_idle(Instant::now(), app.config.session_ttl, scene_id) {
        app.record(&ep)?;
    }
    Ok(Json(s.view(choices())))
}

async fn reveal(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<RevealResponse>, ApiError> {
    let handle = app.session(&id)?;
    let mut s = handle.lock().unwrap();
    let scene_id = &app.scenes.records[s.scene].id;
    if let Some(ep) = s.expire_if_idle(Instant::now(), app.config.session_ttl, scene_id) {
        app.record(&ep)?;
    }
    if !s.status().is_terminal() {
        return Err(ApiError::Forbidden(
            "the scene is revealed only after the episode ends".into(),
        ));
    }
    let record = app
        .scenes
        .records
        .get(s.scene)
        .expect("session scene index is valid");
    let raw = RawValue::from_string(app.scenes.lines[s.scene].clone())
        .map_err(|e| ApiError::Internal(format!("stored scene line is not JSON: {e}")))?;
    Ok(Json(RevealResponse {
        record: raw,
        solve_length: record.solve_length,
        moves_taken: s.moves(),
        status: s.status(),
        cumulative_reward: s.reward,
    }))
}

async fn stats(State(app): State<Arc<AppState>>) -> Json<StatsResponse> {
    Json(app.stats())
}

async fn not_found() -> ApiError {
    ApiError::NotFound("no such endpoint".into())
}

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(view))
        .route("/api/sessions/{id}/act", post(act))
        .route("/api/sessions/{id}/reveal", get(reveal))
        .route("/api/stats", get(stats))
        .route("/api/{*rest}", axum::routing::any(not_found));
    let api = match &state.config.static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api.fallback(not_found),
    };
    api.with_state(state)
}

/// Periodically closes idle sessions.
pub fn spawn_expiry(state: Arc<AppState>) -> tokio::task::JoinHandle<()> {
    let period =
        (state.config.session_ttl / 4).clamp(Duration::from_millis(10), Duration::from_secs(60));
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(period);
        tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            tick.tick().await;
            let closed = state.sweep(Instant::now());
            if closed > 0 {
                tracing::info!("closed {closed} idle sessions");
            }
        }
    })
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let expiry = spawn_expiry(state.clone());
    let result = axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await;
    expiry.abort();
    result
}
