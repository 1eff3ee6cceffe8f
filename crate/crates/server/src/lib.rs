//! hexgait service: batch operations under `/api`, live teleoperation on
//! `/ws` and `GET /state`.

pub mod handlers;
pub mod live;
mod ws;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use handlers::ApiError;
use hexgait_core::api::*;
use hexgait_core::teleop::ServerMessage;
use live::Live;
use std::future::Future;
use std::path::PathBuf;
use std::sync::Arc;
use tokio::net::TcpListener;

pub use live::LiveConfig;

#[derive(Clone, Default)]
pub struct AppState {
    /// Absent when the service only runs batch operations.
    pub live: Option<Arc<Live>>,
    pub cache_dir: Option<PathBuf>,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self.0.kind {
            ErrorKind::Validation => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorKind::Runtime => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(self.0)).into_response()
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<Json<T>, ApiError> {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map(Json),
        Err(e) => Err(ApiError::runtime(format!("worker failed: {e}"))),
    }
}

async fn validate(Json(req): Json<ModelInput>) -> Result<Json<ValidateResponse>, ApiError> {
    blocking(move || handlers::validate(&req)).await
}

async fn workspace(State(s): State<AppState>, Json(req): Json<WorkspaceRequest>) -> Result<Json<WorkspaceResponse>, ApiError> {
    blocking(move || handlers::workspace(&req, s.cache_dir.as_deref())).await
}

async fn trajectory(Json(req): Json<TrajectoryRequest>) -> Result<Json<TrajectoryResponse>, ApiError> {
    blocking(move || handlers::trajectory(&req)).await
}

async fn run(State(s): State<AppState>, Json(req): Json<RunRequest>) -> Result<Json<RunResponse>, ApiError> {
    blocking(move || handlers::run(&req, s.cache_dir.as_deref())).await
}

async fn sweep(State(s): State<AppState>, Json(req): Json<RunRequest>) -> Result<Json<SweepResponse>, ApiError> {
    blocking(move || handlers::sweep(&req, s.cache_dir.as_deref())).await
}

fn no_live() -> ApiError {
    ApiError::runtime("no live robot on this server")
}

async fn current_state(State(s): State<AppState>) -> Result<Json<ServerMessage>, Response> {
    let live = s.live.ok_or_else(|| (StatusCode::SERVICE_UNAVAILABLE, Json(no_live().0)).into_response())?;
    Ok(Json(ServerMessage::State((*live.latest()).clone())))
}

async fn health() -> &'static str {
    "ok"
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/state", get(current_state))
        .route("/ws", get(ws::upgrade))
        .route("/api/validate", post(validate))
        .route("/api/workspace", post(workspace))
        .route("/api/trajectory", post(trajectory))
        .route("/api/run", post(run))
        .route("/api/sweep", post(sweep))
        .with_state(state)
}

/// Serves until `shutdown` resolves, then stops the tick thread.
pub async fn serve(listener: TcpListener, state: AppState, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    let live = state.live.clone();
    let r = axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await;
    if let Some(l) = live {
        l.shutdown();
    }
    r
}
