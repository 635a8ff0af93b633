//! Websocket front end. `GET /ws?config=<name>` upgrades to a session using
//! `<config_dir>/<name>.toml` (or the default scenario when `config` is
//! omitted); `GET /configs` lists the available names.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use serde::Deserialize;
use steerlab_harness::ScenarioConfig;
use tokio::net::TcpListener;
use tokio::sync::mpsc;
use tokio::task::JoinHandle;

use crate::host::{host_session, SessionIo, SessionOptions};
use crate::protocol::{ClientMessage, ErrorCode, ServerMessage};

#[derive(Debug, Clone)]
pub struct ServerState {
    pub config_dir: PathBuf,
    pub record_dir: PathBuf,
}

impl ServerState {
    /// Records go to `<config_dir>/records`.
    pub fn new(config_dir: impl Into<PathBuf>) -> Self {
        let config_dir = config_dir.into();
        let record_dir = config_dir.join("records");
        Self { config_dir, record_dir }
    }

    pub fn load_config(&self, name: Option<&str>) -> Result<ScenarioConfig, String> {
        let Some(name) = name else {
            return Ok(ScenarioConfig::default());
        };
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(format!("invalid config name `{name}`"));
        }
        let path = self.config_dir.join(format!("{name}.toml"));
        ScenarioConfig::load(&path).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn config_names(&self) -> std::io::Result<Vec<String>> {
        let mut names: Vec<String> = std::fs::read_dir(&self.config_dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "toml"))
            .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
            .collect();
        names.sort();
        Ok(names)
    }
}

#[derive(Debug, Deserialize)]
struct SessionQuery {
    config: Option<String>,
}

pub fn router(state: ServerState) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/configs", get(list_configs))
        .route("/ws", get(upgrade))
        .with_state(Arc::new(state))
}

async fn list_configs(State(state): State<Arc<ServerState>>) -> Response {
    match state.config_names() {
        Ok(names) => Json(names).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

async fn upgrade(
    ws: WebSocketUpgrade,
    Query(q): Query<SessionQuery>,
    State(state): State<Arc<ServerState>>,
) -> Response {
    match state.load_config(q.config.as_deref()) {
        Ok(config) => ws.on_upgrade(move |socket| run_socket(socket, config, state)),
        Err(e) => (StatusCode::BAD_REQUEST, e).into_response(),
    }
}

async fn run_socket(socket: WebSocket, config: ScenarioConfig, state: Arc<ServerState>) {
    let (mut sink, mut stream) = socket.split();
    let (client_tx, incoming) = mpsc::channel(256);
    let (outgoing, mut out_rx) = mpsc::unbounded_channel::<ServerMessage>();

    let writer = tokio::spawn(async move {
        while let Some(msg) = out_rx.recv().await {
            if sink.send(Message::Text(msg.to_json().into())).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });
    let errors = outgoing.clone();
    let reader = tokio::spawn(async move {
        while let Some(Ok(msg)) = stream.next().await {
            match msg {
                Message::Text(text) => match ClientMessage::from_json(&text) {
                    Ok(m) => {
                        if client_tx.send(m).await.is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        let _ = errors.send(ServerMessage::error(ErrorCode::BadMessage, e.to_string()));
                    }
                },
                Message::Close(_) => break,
                _ => {}
            }
        }
    });

    let mut options = SessionOptions::new(uuid::Uuid::new_v4().to_string(), &config);
    if let Err(e) = std::fs::create_dir_all(&state.record_dir) {
        tracing::error!("cannot create {}: {e}", state.record_dir.display());
    } else {
        options.record_dir = Some(state.record_dir.clone());
    }
    if let Err(e) = host_session(&config, SessionIo { incoming, outgoing }, options).await {
        tracing::warn!("session ended: {e}");
    }
    reader.abort();
    let _ = writer.await;
}

/// Binds `addr` and serves in the background; returns the bound address.
pub async fn spawn(
    addr: SocketAddr,
    state: ServerState,
) -> std::io::Result<(SocketAddr, JoinHandle<std::io::Result<()>>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    let app = router(state);
    let handle = tokio::spawn(async move { axum::serve(listener, app).await });
    Ok((local, handle))
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, config_dir: &Path) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(ServerState::new(config_dir))).await
}
