//! Local HTTP service: job store, worker pool and routes.

pub mod http;
pub mod store;

use std::net::SocketAddr;
use std::sync::Arc;

pub use http::{router, AppState, MANIFEST_HEADER};
pub use store::{JobRecord, JobStore, ARTIFACT_ROOT_ENV};

use crate::error::Result;
use crate::jobs::BackendRef;

/// Serves until Ctrl-C.
pub async fn serve(addr: SocketAddr, store: JobStore, backend: BackendRef, workers: usize) -> Result<()> {
    backend.build()?;
    let state = AppState::new(Arc::new(store), backend, workers);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
