//! HTTP API for chat sessions over an ingested store.

pub mod cards;
pub mod clock;
pub mod config;
pub mod error;
pub mod routes;
pub mod state;

use std::sync::Arc;

use curio_agent::tools::Toolbox;
use curio_core::store::Corpus;

use crate::clock::SystemClock;
use crate::config::{build_gateway, ConfigError, ServerConfig};
use crate::state::{AppState, Limits};

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot load store {path}: {message}")]
    Store { path: String, message: String },
    #[error("server error: {0}")]
    Io(#[from] std::io::Error),
}

/// Opens the store and pairs it with an embedder of the store's dimension.
pub fn load_toolbox(config: &ServerConfig, gateway: Arc<curio_agent::lvlm::LvlmGateway>) -> Result<Toolbox, ServeError> {
    let corpus = Corpus::open(&config.store).map_err(|e| ServeError::Store {
        path: config.store.display().to_string(),
        message: e.to_string(),
    })?;
    let embedder = config.embedder.build(corpus.lock.dimension)?;
    if embedder.describe() != corpus.lock.embedder {
        tracing::warn!(
            store = %corpus.lock.embedder,
            configured = %embedder.describe(),
            "embedder differs from the one the store was built with"
        );
    }
    let mut toolbox = Toolbox::new(Arc::new(corpus), embedder, gateway);
    toolbox.ef_search = config.ef_search;
    Ok(toolbox)
}

pub fn state_from_config(config: &ServerConfig) -> Result<AppState, ServeError> {
    let gateway = Arc::new(build_gateway(&config.models)?);
    let limits = Limits {
        session_ttl_ms: config.session_ttl_secs.saturating_mul(1000),
        max_upload_bytes: config.max_upload_bytes,
    };
    let state = AppState::new(gateway, config.agent.to_agent_config(), limits, Arc::new(SystemClock));
    Ok(match &config.trace_log {
        Some(path) => state.with_trace_log(path)?,
        None => state,
    })
}

/// Binds, starts answering (503 on `/v1/health` until the store is loaded),
/// loads the store, and serves until the process ends.
pub async fn serve(config: ServerConfig) -> Result<(), ServeError> {
    let state = Arc::new(state_from_config(&config)?);
    let listener = tokio::net::TcpListener::bind(&config.bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    let app = routes::router(state.clone(), &config.cors_origins);
    let server = async move { axum::serve(listener, app).await };

    let loader = {
        let state = state.clone();
        async move {
            let gateway = state.gateway.clone();
            let toolbox = tokio::task::spawn_blocking(move || load_toolbox(&config, gateway))
                .await
                .map_err(|e| std::io::Error::other(e.to_string()))??;
            tracing::info!(records = toolbox.corpus.store.records().len(), "store loaded");
            state.install(toolbox);
            Ok::<(), ServeError>(())
        }
    };
    tokio::pin!(server);
    tokio::select! {
        result = &mut server => return Ok(result?),
        loaded = loader => loaded?,
    }
    Ok(server.await?)
}
