//! The fixed-rate session loop.
//!
//! Client messages are handled as they arrive, the newest normalized input
//! overwriting a single slot; each tick samples that slot (zero-order hold),
//! advances the shared [`Simulation`], and emits a state-frame. Pending
//! messages are always drained before a tick. Ticks are scheduled on
//! absolute deadlines `start + k * ts`, so lateness does not accumulate.

use std::path::PathBuf;
use std::time::Duration;

use steerlab_core::dynamics::DriverCommand;
use steerlab_harness::config::DriverConfig;
use steerlab_harness::record::RecordStatus;
use steerlab_harness::{ScenarioConfig, Simulation, TrajectoryRecord};
use tokio::sync::mpsc;
use tokio::time::{interval_at, Instant, MissedTickBehavior};

use crate::error::{Result, SessionError};
use crate::protocol::{
    ClientMessage, ErrorCode, InputRange, ServerMessage, SessionSummary, StateFrame, PROTOCOL_VERSION,
};

/// Message channels between a transport and the session loop. The session
/// treats a closed `incoming` channel as a client disconnect.
pub struct SessionIo {
    pub incoming: mpsc::Receiver<ClientMessage>,
    pub outgoing: mpsc::UnboundedSender<ServerMessage>,
}

impl SessionIo {
    /// In-memory pair: the client half sends [`ClientMessage`]s and receives
    /// [`ServerMessage`]s.
    pub fn pair() -> (Self, ClientIo) {
        let (client_tx, incoming) = mpsc::channel(256);
        let (outgoing, client_rx) = mpsc::unbounded_channel();
        (Self { incoming, outgoing }, ClientIo { tx: client_tx, rx: client_rx })
    }
}

pub struct ClientIo {
    pub tx: mpsc::Sender<ClientMessage>,
    pub rx: mpsc::UnboundedReceiver<ServerMessage>,
}

#[derive(Debug, Clone)]
pub struct SessionOptions {
    pub session_id: String,
    pub hello_timeout: Duration,
    /// Inputs older than this are flagged stale (the held value is still used).
    pub stale_after: Duration,
    /// Directory to save the record in, as `<session_id>.txt`.
    pub record_dir: Option<PathBuf>,
}

impl SessionOptions {
    pub fn new(session_id: impl Into<String>, config: &ScenarioConfig) -> Self {
        let stale_ms = match &config.driver {
            DriverConfig::LiveSession(l) => l.stale_after_ms,
            DriverConfig::Synthetic(_) => 500,
        };
        Self {
            session_id: session_id.into(),
            hello_timeout: Duration::from_secs(30),
            stale_after: Duration::from_millis(stale_ms),
            record_dir: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SessionOutcome {
    pub record: TrajectoryRecord,
    pub summary: SessionSummary,
}

#[derive(Debug, Clone, Copy)]
struct Latest {
    command: DriverCommand<f64>,
    received: Instant,
}

/// Runs one session to completion or disconnect and returns its record.
///
/// The record is complete if every step ran and aborted otherwise.
pub async fn host_session(config: &ScenarioConfig, io: SessionIo, options: SessionOptions) -> Result<SessionOutcome> {
    let SessionIo { mut incoming, outgoing } = io;
    let mut sim = Simulation::new(config, options.session_id.clone())?;
    let range = match handshake(&mut incoming, options.hello_timeout).await {
        Ok(range) => range,
        Err(e) => {
            let code = match e {
                SessionError::Version { .. } => ErrorCode::Version,
                _ => ErrorCode::Handshake,
            };
            let _ = outgoing.send(ServerMessage::error(code, e.to_string()));
            return Err(e);
        }
    };
    let _ = outgoing.send(ServerMessage::Welcome {
        version: PROTOCOL_VERSION,
        session_id: options.session_id.clone(),
        mode: config.mode,
        ts: config.ts,
        steps: sim.total_steps(),
        lane_centers: config.lanes.centers.clone(),
        lane_width: config.lanes.width,
        delta_max: config.vehicle.delta_max,
        a_max: config.vehicle.a_max,
    });

    let ts = Duration::from_secs_f64(config.ts);
    let start = Instant::now();
    let mut ticks = interval_at(start, ts);
    ticks.set_missed_tick_behavior(MissedTickBehavior::Burst);
    let mut latest: Option<Latest> = None;
    let mut stale_steps = 0;
    while !sim.is_finished() {
        tokio::select! {
            biased;
            msg = incoming.recv() => match msg {
                Some(msg) => receive(msg, &mut latest, &outgoing, &range, config),
                None => break,
            },
            now = ticks.tick() => {
                let command = latest.map_or_else(DriverCommand::zero, |l| l.command);
                let age = now.saturating_duration_since(latest.map_or(start, |l| l.received));
                let stale = age > options.stale_after;
                stale_steps += stale as usize;
                let row = match sim.step(command, stale) {
                    Ok(row) => row,
                    Err(e) => {
                        let _ = outgoing.send(ServerMessage::error(ErrorCode::Internal, e.to_string()));
                        break;
                    }
                };
                let frame = StateFrame::from_row(row, config.mode, &config.lanes.centers);
                if outgoing.send(ServerMessage::StateFrame(frame)).is_err() {
                    break;
                }
            }
        }
    }

    let record = sim.into_record();
    let record_path = match &options.record_dir {
        Some(dir) => {
            let path = dir.join(format!("{}.txt", options.session_id));
            record.save(&path)?;
            Some(path.display().to_string())
        }
        None => None,
    };
    let summary = SessionSummary {
        session_id: options.session_id,
        mode: config.mode,
        status: record.header.status,
        steps: record.len(),
        stale_steps,
        config_hash: record.header.config_hash.clone(),
        record_path,
    };
    if summary.status == RecordStatus::Complete {
        tracing::info!(session = %summary.session_id, steps = summary.steps, "session complete");
    } else {
        tracing::warn!(session = %summary.session_id, steps = summary.steps, "session aborted");
    }
    let _ = outgoing.send(ServerMessage::Summary(summary.clone()));
    Ok(SessionOutcome { record, summary })
}

async fn handshake(incoming: &mut mpsc::Receiver<ClientMessage>, timeout: Duration) -> Result<InputRange> {
    let first = tokio::time::timeout(timeout, incoming.recv())
        .await
        .map_err(|_| SessionError::HelloTimeout(timeout.as_millis()))?;
    match first {
        None => Err(SessionError::Disconnected),
        Some(ClientMessage::Hello { version, input_range, .. }) => {
            if version != PROTOCOL_VERSION {
                return Err(SessionError::Version { found: version, supported: PROTOCOL_VERSION });
            }
            input_range.validate().map_err(SessionError::Handshake)?;
            Ok(input_range)
        }
        Some(other) => Err(SessionError::Handshake(format!("expected hello, got {}", kind(&other)))),
    }
}

fn kind(m: &ClientMessage) -> &'static str {
    match m {
        ClientMessage::Hello { .. } => "hello",
        ClientMessage::Input { .. } => "input",
        ClientMessage::SetMode { .. } => "set-mode",
    }
}

fn receive(
    msg: ClientMessage,
    latest: &mut Option<Latest>,
    outgoing: &mpsc::UnboundedSender<ServerMessage>,
    range: &InputRange,
    config: &ScenarioConfig,
) {
    match msg {
        ClientMessage::Input { steering, accel, .. } => {
            if !(steering.is_finite() && accel.is_finite()) {
                let _ = outgoing.send(ServerMessage::error(ErrorCode::BadInput, "input values must be finite"));
                return;
            }
            let command = range.normalize(steering, accel, &config.vehicle);
            *latest = Some(Latest { command, received: Instant::now() });
        }
        ClientMessage::SetMode { mode } => {
            let _ = outgoing.send(ServerMessage::error(
                ErrorCode::ModeLocked,
                format!("mode is fixed at session start ({}); requested {mode}", config.mode),
            ));
        }
        ClientMessage::Hello { .. } => {
            let _ = outgoing.send(ServerMessage::error(ErrorCode::Handshake, "session already started"));
        }
    }
}
