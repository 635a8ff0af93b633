//! Wire protocol: JSON text frames, one message per frame, tagged by `type`.
//!
//! ```text
//! client -> {"type":"hello","version":1,"client":"ui","input_range":{"steering":1.0,"accel":1.0,"rate_hz":60.0}}
//! server -> {"type":"welcome","version":1,"session_id":"...","mode":"human-in-control",...}
//! client -> {"type":"input","seq":0,"client_time_ms":16.7,"steering":-0.25,"accel":0.0}
//! server -> {"type":"state-frame","step":0,"t":0.0,...}
//! server -> {"type":"summary",...}
//! ```
//!
//! The client declares the full-deflection magnitude of its steering and
//! acceleration axes; the server maps `±steering` to `±delta_max` and
//! `±accel` to `±a_max`, clamping anything beyond.

use serde::{Deserialize, Serialize};
use steerlab_core::dynamics::{DriverCommand, Pose, VehicleParams};
use steerlab_core::ControlMode;
use steerlab_harness::record::{InputSource, RecordStatus, Row};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputRange {
    /// Client value meaning full steering deflection.
    pub steering: f64,
    /// Client value meaning full throttle or brake.
    pub accel: f64,
    /// Nominal send rate (Hz).
    #[serde(default)]
    pub rate_hz: Option<f64>,
}

impl InputRange {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.steering.is_finite() && self.steering > 0.0 && self.accel.is_finite() && self.accel > 0.0) {
            return Err(format!("input range must be positive and finite, got {self:?}"));
        }
        Ok(())
    }

    /// Maps a client reading onto physical units.
    pub fn normalize(&self, steering: f64, accel: f64, params: &VehicleParams<f64>) -> DriverCommand<f64> {
        let unit = |v: f64, full: f64| (v / full).clamp(-1.0, 1.0);
        DriverCommand::new(unit(steering, self.steering) * params.delta_max, unit(accel, self.accel) * params.a_max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ClientMessage {
    Hello {
        version: u32,
        #[serde(default)]
        client: Option<String>,
        input_range: InputRange,
    },
    Input {
        #[serde(default)]
        seq: u64,
        #[serde(default)]
        client_time_ms: Option<f64>,
        steering: f64,
        accel: f64,
    },
    /// Always rejected: the mode is fixed when the session starts.
    SetMode { mode: ControlMode },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorCode {
    Version,
    Handshake,
    ModeLocked,
    BadMessage,
    BadInput,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ServerMessage {
    Welcome {
        version: u32,
        session_id: String,
        mode: ControlMode,
        ts: f64,
        steps: usize,
        lane_centers: Vec<f64>,
        lane_width: f64,
        delta_max: f64,
        a_max: f64,
    },
    StateFrame(StateFrame),
    Error {
        code: ErrorCode,
        message: String,
    },
    Summary(SessionSummary),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    pub step: usize,
    pub t: f64,
    pub mode: ControlMode,
    pub pose: Pose<f64>,
    pub lane_centers: Vec<f64>,
    /// Command the client's input was normalized to.
    pub driver: DriverCommand<f64>,
    /// Command that reached the plant.
    pub applied: DriverCommand<f64>,
    pub source: InputSource,
    pub stale: bool,
    pub saturated: bool,
    /// Hypothesis weights (autonomy-in-control only).
    pub weights: Option<Vec<f64>>,
}

impl StateFrame {
    pub fn from_row(row: &Row, mode: ControlMode, lane_centers: &[f64]) -> Self {
        Self {
            step: row.step,
            t: row.t,
            mode,
            pose: row.pose,
            lane_centers: lane_centers.to_vec(),
            driver: row.driver,
            applied: row.applied,
            source: row.source,
            stale: row.stale,
            saturated: row.saturated,
            weights: row.weights.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub mode: ControlMode,
    pub status: RecordStatus,
    pub steps: usize,
    pub stale_steps: usize,
    pub config_hash: String,
    /// Where the server stored the record, if it did.
    pub record_path: Option<String>,
}

impl ClientMessage {
    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("client messages serialize")
    }
}

impl ServerMessage {
    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }

    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        ServerMessage::Error { code, message: message.into() }
    }
}
