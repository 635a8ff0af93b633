//! Scenario configuration, loaded from TOML.
//!
//! Every field has a default, so an empty file describes the standard
//! two-hypothesis ghost-marking scenario: true lane center at 0 m, ghost
//! center at -1.8 m, 30 s at 10 Hz, vehicle starting 0.5 m right of the true
//! center at 15 m/s.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use steerlab_core::belief::{BeliefState, MixtureComponent, NoiseConfig};
use steerlab_core::control::{closed_loop_matrix, GainSet};
use steerlab_core::dynamics::{make_plant, PlantModel, VehicleParams, VehicleState};
use steerlab_core::nalgebra::Matrix4;
use steerlab_core::steering::{DriverTuning, LaneGeometry, SteeringCoefficients, N_COEFFICIENTS};
use steerlab_core::ControlMode;

use crate::error::{HarnessError, Result};

fn identity4() -> [[f64; 4]; 4] {
    let mut m = [[0.0; 4]; 4];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub mode: ControlMode,
    /// Rollout length (s).
    pub duration: f64,
    /// Sampling period (s).
    pub ts: f64,
    /// Seed for the driver and sensor streams.
    pub seed: u64,
    /// Lateral position of the true lane center (m).
    pub true_lane_center: f64,
    /// True initial state `[xdot, y, ydot, b]`, with `y` relative to the
    /// true center and `b` the camera's offset from it.
    pub initial_state: [f64; 4],
    pub lanes: LaneConfig,
    pub vehicle: VehicleParams<f64>,
    /// One prior component per entry of `lanes.centers`, in the same order.
    pub initial_mixture: Vec<ComponentConfig>,
    pub gains: GainSet<f64>,
    pub reference: ReferenceConfig,
    pub noise: NoiseConfig<f64>,
    pub advisor: AdvisorConfig,
    pub driver: DriverConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LaneConfig {
    /// Candidate lane centers (m); index 0 is conventionally the true one.
    pub centers: Vec<f64>,
    /// Display width of one lane (m).
    pub width: f64,
    pub d_near: f64,
    pub d_far: f64,
}

impl Default for LaneConfig {
    fn default() -> Self {
        let g = LaneGeometry::<f64>::default();
        Self { centers: g.lane_centers, width: 3.7, d_near: g.d_near, d_far: g.d_far }
    }
}

impl LaneConfig {
    pub fn geometry(&self) -> Result<LaneGeometry<f64>> {
        Ok(LaneGeometry::new(self.centers.clone(), self.d_near, self.d_far)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentConfig {
    pub mean: [f64; 4],
    #[serde(default = "identity4")]
    pub covariance: [[f64; 4]; 4],
    pub weight: f64,
}

/// What lateral target the autonomy controller tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceMode {
    /// Drive the estimated camera-frame position onto the true center.
    #[default]
    TrueCenter,
    /// Drive the mixture-mean offset to zero, i.e. toward the
    /// weight-averaged candidate center.
    EstimatedCenter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceConfig {
    /// Longitudinal speed reference (m/s).
    pub speed: f64,
    pub mode: ReferenceMode,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self { speed: 15.0, mode: ReferenceMode::TrueCenter }
    }
}

/// Steering model the estimator uses to interpret suggestions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdvisorConfig {
    pub enabled: bool,
    pub coefficients: [f64; N_COEFFICIENTS],
}

impl Default for AdvisorConfig {
    fn default() -> Self {
        Self { enabled: true, coefficients: SteeringCoefficients::synthetic_reference().to_array() }
    }
}

impl AdvisorConfig {
    pub fn model(&self) -> SteeringCoefficients<f64> {
        SteeringCoefficients::from_array(self.coefficients)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DriverConfig {
    Synthetic(SyntheticDriverConfig),
    LiveSession(LiveSessionConfig),
}

impl Default for DriverConfig {
    fn default() -> Self {
        DriverConfig::Synthetic(SyntheticDriverConfig::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticDriverConfig {
    /// Index into `lanes.centers` of the center the driver steers toward.
    pub believed_lane: usize,
    pub coefficients: [f64; N_COEFFICIENTS],
    /// Multiplier applied to every coefficient.
    pub scale: f64,
    pub noise_std: f64,
    pub target_speed: f64,
    pub speed_gain: f64,
    pub warmup_gain: f64,
    pub accel_noise_std: f64,
}

impl Default for SyntheticDriverConfig {
    fn default() -> Self {
        let t = DriverTuning::<f64>::default();
        Self {
            believed_lane: 0,
            coefficients: SteeringCoefficients::synthetic_reference().to_array(),
            scale: 1.0,
            noise_std: t.noise_std,
            target_speed: t.target_speed,
            speed_gain: t.speed_gain,
            warmup_gain: t.warmup_gain,
            accel_noise_std: t.accel_noise_std,
        }
    }
}

impl SyntheticDriverConfig {
    pub fn model(&self) -> SteeringCoefficients<f64> {
        SteeringCoefficients::from_array(self.coefficients).scaled(self.scale)
    }

    pub fn tuning(&self) -> DriverTuning<f64> {
        DriverTuning {
            noise_std: self.noise_std,
            target_speed: self.target_speed,
            speed_gain: self.speed_gain,
            warmup_gain: self.warmup_gain,
            accel_noise_std: self.accel_noise_std,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiveSessionConfig {
    /// Input older than this is held and the step flagged stale (ms).
    pub stale_after_ms: u64,
    /// Lane the participant was asked to follow; used for analysis.
    pub instructed_lane: usize,
}

impl Default for LiveSessionConfig {
    fn default() -> Self {
        Self { stale_after_ms: 500, instructed_lane: 0 }
    }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            mode: ControlMode::HumanInControl,
            duration: 30.0,
            ts: 0.1,
            seed: 0,
            true_lane_center: 0.0,
            initial_state: [15.0, -0.5, 0.0, 0.0],
            lanes: LaneConfig::default(),
            vehicle: VehicleParams::default(),
            initial_mixture: vec![
                ComponentConfig { mean: [15.0, -0.5, 0.0, 0.0], covariance: identity4(), weight: 0.5 },
                ComponentConfig { mean: [15.0, 1.3, 0.0, -1.8], covariance: identity4(), weight: 0.5 },
            ],
            gains: GainSet::unit(),
            reference: ReferenceConfig::default(),
            noise: NoiseConfig::default(),
            advisor: AdvisorConfig::default(),
            driver: DriverConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let config: Self = toml::from_str(s)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn with_mode(mut self, mode: ControlMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Number of simulation steps, `duration / ts`.
    pub fn step_count(&self) -> Result<usize> {
        if !(self.ts > 0.0 && self.ts.is_finite()) {
            return Err(HarnessError::Config(format!("ts must be positive, got {}", self.ts)));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(HarnessError::Config(format!("duration must be non-negative, got {}", self.duration)));
        }
        let n = (self.duration / self.ts).round();
        if (n * self.ts - self.duration).abs() > 1e-9 * self.duration.max(1.0) {
            return Err(HarnessError::Config(format!(
                "duration {} is not a whole number of {} s steps",
                self.duration, self.ts
            )));
        }
        Ok(n as usize)
    }

    pub fn plant(&self) -> Result<PlantModel<f64>> {
        let mut plant = make_plant(self.ts)?;
        plant.kappa = self.vehicle.kappa;
        Ok(plant)
    }

    pub fn initial_belief(&self) -> Result<BeliefState<f64>> {
        let components = self
            .initial_mixture
            .iter()
            .map(|c| {
                MixtureComponent::new(
                    VehicleState::from_array(c.mean),
                    Matrix4::from_fn(|r, k| c.covariance[r][k]),
                    c.weight,
                )
            })
            .collect();
        Ok(BeliefState::new(components)?)
    }

    /// Lateral position the camera measures from, `c_true - b`.
    pub fn camera_reference(&self) -> f64 {
        self.true_lane_center - self.initial_state[3]
    }

    /// Lane index used when analysing records of this scenario.
    pub fn analysis_lane(&self) -> usize {
        match &self.driver {
            DriverConfig::Synthetic(d) => d.believed_lane,
            DriverConfig::LiveSession(l) => l.instructed_lane,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.step_count()?;
        self.vehicle.validate()?;
        self.lanes.geometry()?;
        if !(self.lanes.width > 0.0) {
            return Err(HarnessError::Config("lane width must be positive".into()));
        }
        if self.initial_state.iter().any(|v| !v.is_finite()) || !self.true_lane_center.is_finite() {
            return Err(HarnessError::Config("initial state must be finite".into()));
        }
        let speed = self.initial_state[0].hypot(self.initial_state[2]);
        if speed < self.vehicle.v_min {
            return Err(HarnessError::Config(format!(
                "initial speed {speed} m/s is below v_min {}",
                self.vehicle.v_min
            )));
        }
        let lane = self.analysis_lane();
        if lane >= self.lanes.centers.len() {
            return Err(HarnessError::Config(format!(
                "lane index {lane} out of range for {} lane centers",
                self.lanes.centers.len()
            )));
        }
        if let DriverConfig::Synthetic(d) = &self.driver {
            let finite = d.coefficients.iter().chain([&d.scale, &d.noise_std, &d.target_speed]).all(|v| v.is_finite());
            if !finite || d.noise_std < 0.0 {
                return Err(HarnessError::Config("synthetic driver parameters must be finite, noise_std >= 0".into()));
            }
        }
        if self.mode == ControlMode::AutonomyInControl {
            if self.initial_mixture.len() != self.lanes.centers.len() {
                return Err(HarnessError::Config(format!(
                    "initial_mixture has {} components but there are {} lane centers",
                    self.initial_mixture.len(),
                    self.lanes.centers.len()
                )));
            }
            self.initial_belief()?;
            self.noise.validate()?;
            closed_loop_matrix(&self.plant()?, &self.gains)?;
            if self.advisor.coefficients.iter().any(|c| !c.is_finite()) {
                return Err(HarnessError::Config("advisor coefficients must be finite".into()));
            }
            if !(self.reference.speed >= self.vehicle.v_min) {
                return Err(HarnessError::Config("reference speed must be at least v_min".into()));
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON encoding of the configuration.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}
