//! HTTP and WebSocket API over the session engine.
//!
//! Every route lives under `/api/v1`; anything else is served from the
//! dashboard bundle directory when one is configured.

mod error;
mod handlers;
mod models;
mod stream;

use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::DefaultBodyLimit;
use axum::routing::{get, post};
use axum::Router;
use easyrl_core::engine::Engine;
use tokio::net::TcpListener;
use tower_http::services::ServeDir;

pub use error::{status_for, ApiError};
pub use models::{ModelInfo, ModelStore};

/// Environment variable holding the listen address.
pub const ADDR_ENV: &str = "EASYRL_ADDR";
pub const DEFAULT_ADDR: &str = "127.0.0.1:8080";

/// JSON Schema covering every response body.
pub const API_SCHEMA: &str = include_str!("../schema/api.schema.json");

const MAX_UPLOAD_BYTES: usize = 256 * 1024 * 1024;

#[derive(Clone)]
pub struct AppState {
    pub engine: Engine,
    pub models: Arc<ModelStore>,
}

impl AppState {
    pub fn new(engine: Engine) -> Self {
        Self {
            engine,
            models: Arc::default(),
        }
    }
}

pub fn api_router(state: AppState) -> Router {
    use handlers::*;
    Router::new()
        .route("/agents", get(list_agents))
        .route("/environments", get(list_environments))
        .route("/sessions", get(list_sessions).post(post_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/control", post(control_session))
        .route("/sessions/{id}/results", get(session_results))
        .route("/sessions/{id}/summary", get(session_summary))
        .route(
            "/sessions/{id}/model",
            get(download_session_model).post(store_session_model),
        )
        .route("/sessions/{id}/stream", get(stream::stream_session))
        .route("/models", get(list_models).post(upload_model))
        .route("/models/{id}", get(download_model))
        .route("/plugins", post(register_plugin))
        .route("/schema", get(schema))
        .fallback(api_not_found)
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state)
}

/// The full application: the API plus optional static dashboard files.
pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let app = Router::new().nest("/api/v1", api_router(state));
    match static_dir {
        Some(dir) => {
            app.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true))
        }
        None => app,
    }
}

pub async fn bind(addr: &str) -> std::io::Result<(TcpListener, SocketAddr)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    Ok((listener, local))
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    app: Router,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, app)
        .with_graceful_shutdown(shutdown)
        .await
}
