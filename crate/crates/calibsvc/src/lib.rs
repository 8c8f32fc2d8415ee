//! Calibration service: serves frames and precomputed cue maps, recomputes
//! fusion and proposals per request, and writes tuned parameters back to
//! the pipeline's TOML config.
//!
//! | method | path | response |
//! |---|---|---|
//! | GET | `/meta` | frame count, dims, video names, cue roles |
//! | GET | `/frames/{t}` | frame PNG |
//! | GET | `/cues/{role}/{t}` | cue heatmap PNG |
//! | POST | `/fuse` | base64 overlay PNG + box list |
//! | GET | `/score?frame=t` | IoU/Dice against ground truth |
//! | GET, PUT | `/config` | current config; PUT merges, validates, persists |

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

mod api;
mod session;

pub use api::{router, ApiError, FuseRequest, FuseResponse, ScoreQuery, ScoreResponse};
pub use session::Session;

use turbseg::pipeline::PipelineError;

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("port {0} is already in use")]
    PortBusy(u16),
    #[error("cue maps missing under {}; run the `cues` stage first", .0.display())]
    CuesMissing(PathBuf),
    #[error("invalid parameters: {0}")]
    Invalid(turbseg::Error),
    #[error("config: {0}")]
    Config(turbseg::Error),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("server: {0}")]
    Io(#[from] std::io::Error),
}

/// Binds `127.0.0.1:port` (0 picks a free port) and returns the listener.
pub async fn bind(port: u16) -> Result<tokio::net::TcpListener, ServeError> {
    let addr = SocketAddr::from(([127, 0, 0, 1], port));
    tokio::net::TcpListener::bind(addr).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse => ServeError::PortBusy(port),
        _ => ServeError::Io(e),
    })
}

/// Serves `session` until ctrl-c.
pub async fn serve(session: Session, port: u16) -> Result<(), ServeError> {
    let listener = bind(port).await?;
    log::info!("calibration service on http://{}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(session)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
