//! HTTP routes under `/api/v1` and the server-sent event feed.

use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::Path as FsPath;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, PathRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use capdet_core::detect::WindowClassifier;
use capdet_core::nn::load_weights;
use capdet_core::sim::SimParams;
use capdet_core::types::{DetectorConfig, DEFAULT_THRESHOLD};
use futures::Stream;
use serde::Deserialize;

use crate::protocol::{
    ControlRequest, CreateSessionRequest, ErrorBody, SessionSummary, SourceRequest, ThresholdRequest,
};
use crate::session::{Session, SessionConfig, SessionManager};
use crate::source::{live_sim_sources, replay_sources, DEFAULT_DEAD_FRACTION};

pub const DEFAULT_MAX_POINTS: usize = 2000;

#[derive(Clone)]
pub struct AppState {
    pub sessions: Arc<SessionManager>,
}

impl AppState {
    pub fn new() -> Self {
        AppState {
            sessions: Arc::new(SessionManager::default()),
        }
    }
}

impl Default for AppState {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn bad_request(m: impl ToString) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            message: m.to_string(),
        }
    }

    fn not_found(m: impl ToString) -> Self {
        ApiError {
            status: StatusCode::NOT_FOUND,
            message: m.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

impl From<PathRejection> for ApiError {
    fn from(e: PathRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/v1/sessions", get(list_sessions).post(create_session))
        .route("/api/v1/sessions/{id}", get(get_session).delete(delete_session))
        .route("/api/v1/sessions/{id}/control", post(control))
        .route("/api/v1/sessions/{id}/threshold", put(set_threshold))
        .route("/api/v1/sessions/{id}/channels", get(list_channels))
        .route("/api/v1/sessions/{id}/channels/{ch}/signal", get(signal))
        .route("/api/v1/sessions/{id}/channels/{ch}/export", get(export_channel))
        .route("/api/v1/sessions/{id}/export", get(export_session))
        .route("/api/v1/sessions/{id}/events", get(events))
        .fallback(|| async { ApiError::not_found("no such route") })
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

fn session(state: &AppState, id: &str) -> ApiResult<Arc<Session>> {
    state
        .sessions
        .get(id)
        .ok_or_else(|| ApiError::not_found(format!("unknown session `{id}`")))
}

/// Builds a session from a request: loads the weights and opens the sources.
pub fn session_config(req: &CreateSessionRequest) -> capdet_core::Result<SessionConfig> {
    let model = load_weights(&req.weights)?;
    let window = model.arch.window_size().unwrap_or(capdet_core::types::DEFAULT_WINDOW_SIZE);
    let mut detector = DetectorConfig::for_window(window);
    detector.threshold = req.threshold.unwrap_or(DEFAULT_THRESHOLD);
    let sources = match &req.source {
        SourceRequest::Replay { files } => replay_sources(files)?,
        SourceRequest::LiveSim {
            n_channels,
            seed,
            samples_per_channel,
            dead_fraction,
        } => live_sim_sources(
            *n_channels,
            *seed,
            samples_per_channel.unwrap_or(capdet_core::sim::DEFAULT_RUN_SAMPLES),
            dead_fraction.unwrap_or(DEFAULT_DEAD_FRACTION),
            &SimParams::default(),
        )?,
    };
    let model: Arc<dyn WindowClassifier> = Arc::new(model);
    let mut cfg = SessionConfig::new(sources, model, detector);
    cfg.speed = req.speed;
    if let Some(d) = req.dead_pore {
        cfg.dead_pore = d;
    }
    Ok(cfg)
}

async fn list_sessions(State(state): State<AppState>) -> Json<Vec<SessionSummary>> {
    Json(state.sessions.list().iter().map(|s| s.summary()).collect())
}

async fn create_session(
    State(state): State<AppState>,
    payload: Result<Json<CreateSessionRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<SessionSummary>)> {
    let Json(req) = payload?;
    if !FsPath::new(&req.weights).exists() {
        return Err(ApiError::bad_request(format!("weights file {} not found", req.weights.display())));
    }
    let cfg = tokio::task::spawn_blocking(move || session_config(&req))
        .await
        .map_err(|e| ApiError::bad_request(e.to_string()))?
        .map_err(ApiError::bad_request)?;
    let s = state.sessions.create(cfg).map_err(ApiError::bad_request)?;
    Ok((StatusCode::CREATED, Json(s.summary())))
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionSummary>> {
    Ok(Json(session(&state, &id)?.summary()))
}

async fn delete_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    state
        .sessions
        .remove(&id)
        .map(|_| StatusCode::NO_CONTENT)
        .ok_or_else(|| ApiError::not_found(format!("unknown session `{id}`")))
}

async fn control(
    State(state): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<ControlRequest>, JsonRejection>,
) -> ApiResult<Json<SessionSummary>> {
    let s = session(&state, &id)?;
    let Json(req) = payload?;
    s.control(&req).map_err(ApiError::bad_request)?;
    Ok(Json(s.summary()))
}

async fn set_threshold(
    State(state): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<ThresholdRequest>, JsonRejection>,
) -> ApiResult<Json<ThresholdRequest>> {
    let s = session(&state, &id)?;
    let Json(req) = payload?;
    s.set_threshold(req.threshold).map_err(ApiError::bad_request)?;
    Ok(Json(ThresholdRequest { threshold: s.threshold() }))
}

async fn list_channels(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(session(&state, &id)?.channels()))
}

#[derive(Deserialize)]
struct SignalQuery {
    max_points: Option<usize>,
}

fn channel_path(path: Result<Path<(String, u16)>, PathRejection>) -> ApiResult<(String, u16)> {
    let Path(p) = path?;
    Ok(p)
}

fn unknown_channel(ch: u16) -> ApiError {
    ApiError::not_found(format!("unknown channel {ch}"))
}

async fn signal(
    State(state): State<AppState>,
    path: Result<Path<(String, u16)>, PathRejection>,
    query: Result<Query<SignalQuery>, QueryRejection>,
) -> ApiResult<impl IntoResponse> {
    let (id, ch) = channel_path(path)?;
    let Query(q) = query?;
    let s = session(&state, &id)?;
    let max_points = q.max_points.unwrap_or(DEFAULT_MAX_POINTS);
    if max_points < 2 {
        return Err(ApiError::bad_request("max_points must be at least 2"));
    }
    s.signal(ch, max_points).map(Json).ok_or_else(|| unknown_channel(ch))
}

async fn export_channel(
    State(state): State<AppState>,
    path: Result<Path<(String, u16)>, PathRejection>,
) -> ApiResult<impl IntoResponse> {
    let (id, ch) = channel_path(path)?;
    let s = session(&state, &id)?;
    s.export_channel(ch).map(Json).ok_or_else(|| unknown_channel(ch))
}

async fn export_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(session(&state, &id)?.export()))
}

async fn events(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let sub = session(&state, &id)?.subscribe();
    let stream = futures::stream::unfold(sub, |sub| async move {
        let env = sub.recv().await?;
        let event = Event::default()
            .event(env.event.kind())
            .id(env.seq.to_string())
            .json_data(&env.event)
            .expect("events serialize");
        Some((Ok(event), sub))
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}
