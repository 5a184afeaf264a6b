//! HTTP/JSON front end over `tcdst-core`.
//!
//! | method | path                        | body                 | response          |
//! |--------|-----------------------------|----------------------|-------------------|
//! | GET    | /health                     |                      | `Health`          |
//! | POST   | /v1/train                   | `RunConfig`          | `TrainSummary`    |
//! | POST   | /v1/eval                    | `EvalRequest`        | `EvalReport`      |
//! | POST   | /v1/generate                | `GenerateRequest`    | `GenerateResponse`|
//! | POST   | /v1/analyze                 | `AnalyzeRequest`     | `AnalysisReport`  |
//! | POST   | /v1/gradcheck               | `GradCheckConfig`    | `GradCheckReport` |
//! | POST   | /v1/sessions                | `OpenSessionRequest` | `SessionInfo`     |
//! | GET    | /v1/sessions/{id}           |                      | `SessionStatus`   |
//! | DELETE | /v1/sessions/{id}           |                      | 204               |
//! | POST   | /v1/sessions/{id}/turns     | `TurnRequest`        | `SessionTurn`     |
//! | POST   | /v1/sessions/{id}/reset     |                      | `SessionStatus`   |
//!
//! Failures return `ErrorBody` with 422 for bad input, 404 for unknown
//! sessions and 500 otherwise. CPU-bound work runs on the blocking pool.

mod error;
mod handlers;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, RwLock};

use axum::routing::{get, post};
use axum::Router;
use tcdst_core::model::AnyModel;
use tcdst_core::session::TrackingSession;
use tokio::net::{TcpListener, ToSocketAddrs};
use tokio::task::JoinHandle;

pub use error::ApiError;

pub(crate) struct SessionEntry {
    pub model: Arc<AnyModel>,
    pub session: TrackingSession,
}

#[derive(Clone, Default)]
pub struct AppState {
    pub(crate) sessions: Arc<RwLock<HashMap<String, Arc<Mutex<SessionEntry>>>>>,
}

impl AppState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().unwrap().len()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(handlers::health))
        .route("/v1/train", post(handlers::train))
        .route("/v1/eval", post(handlers::eval))
        .route("/v1/generate", post(handlers::generate))
        .route("/v1/analyze", post(handlers::analyze))
        .route("/v1/gradcheck", post(handlers::gradcheck))
        .route("/v1/sessions", post(handlers::open_session))
        .route(
            "/v1/sessions/{id}",
            get(handlers::session_status).delete(handlers::close_session),
        )
        .route("/v1/sessions/{id}/turns", post(handlers::session_turn))
        .route("/v1/sessions/{id}/reset", post(handlers::reset_session))
        .with_state(state)
}

/// A server running on a background task.
pub struct RunningServer {
    pub addr: SocketAddr,
    pub handle: JoinHandle<std::io::Result<()>>,
}

impl RunningServer {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

/// Binds `addr` (port 0 picks a free port) and serves in the background.
pub async fn start(addr: impl ToSocketAddrs) -> std::io::Result<RunningServer> {
    let listener = TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;
    let app = router(AppState::new());
    let handle = tokio::spawn(async move { axum::serve(listener, app).await });
    Ok(RunningServer { addr, handle })
}
