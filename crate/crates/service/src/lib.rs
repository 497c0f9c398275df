//! HTTP review service: browse explanations ranked by activation recall,
//! choose one good and one bad exemplar, launch refinement and follow it.
//!
//! The service reads and writes the same run directories as the CLI.

mod api;
mod error;
mod jobs;
mod state;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::http::HeaderValue;
use axum::Router;
use tower_http::cors::{AllowOrigin, CorsLayer};
use tower_http::services::{ServeDir, ServeFile};

pub use api::{apply_overrides, order_candidates, CandidatePage, Order, RunSummary};
pub use error::ApiError;
pub use jobs::{JobResult, JobState, JobStatus};
pub use state::{AppState, Candidate};

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub runs_dir: PathBuf,
    pub data_dir: PathBuf,
    pub addr: SocketAddr,
    /// Built review UI served at `/`.
    pub static_dir: Option<PathBuf>,
    /// Allowed browser origin; any origin when unset.
    pub cors_origin: Option<String>,
}

pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>, cors_origin: Option<&str>) -> Router {
    let cors = match cors_origin.and_then(|o| HeaderValue::from_str(o).ok()) {
        Some(origin) => CorsLayer::new().allow_origin(AllowOrigin::exact(origin)),
        None => CorsLayer::new().allow_origin(AllowOrigin::any()),
    }
    .allow_methods(tower_http::cors::Any)
    .allow_headers(tower_http::cors::Any);
    let mut app = api::routes().with_state(state);
    if let Some(dir) = static_dir {
        let index = dir.join("index.html");
        app = app.fallback_service(ServeDir::new(dir).fallback(ServeFile::new(index)));
    }
    app.layer(cors)
}

/// Serves until interrupted.
pub async fn serve(opts: ServeOptions) -> std::io::Result<()> {
    let state = AppState::new(&opts.runs_dir, &opts.data_dir);
    let app = router(state, opts.static_dir.clone(), opts.cors_origin.as_deref());
    let listener = tokio::net::TcpListener::bind(opts.addr).await?;
    tracing::info!(addr = %listener.local_addr()?, runs = %opts.runs_dir.display(), "review service listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
