//! Drivers: anything that turns an [`Observation`] into a steering and
//! acceleration command.

use rand_chacha::ChaCha8Rng;
use steerlab_core::dynamics::DriverCommand;
use steerlab_core::steering::{synthetic_command, DriverTuning, LaneGeometry, RegressorWindow, SteeringCoefficients};

use crate::config::{DriverConfig, ScenarioConfig, SyntheticDriverConfig};
use crate::error::{HarnessError, Result};
use crate::sim::{rng_stream, Observation, DRIVER_STREAM};

pub trait Driver {
    fn command(&mut self, obs: &Observation) -> Result<DriverCommand<f64>>;
}

impl<F> Driver for F
where
    F: FnMut(&Observation) -> Result<DriverCommand<f64>>,
{
    fn command(&mut self, obs: &Observation) -> Result<DriverCommand<f64>> {
        self(obs)
    }
}

/// Steering-model driver with Gaussian steering noise, holding speed loosely.
pub struct SyntheticDriver {
    model: SteeringCoefficients<f64>,
    tuning: DriverTuning<f64>,
    lane: usize,
    geometry: LaneGeometry<f64>,
    window: RegressorWindow<f64>,
    rng: ChaCha8Rng,
}

impl SyntheticDriver {
    pub fn new(driver: &SyntheticDriverConfig, geometry: LaneGeometry<f64>, rng: ChaCha8Rng) -> Result<Self> {
        if driver.believed_lane >= geometry.lane_centers.len() {
            return Err(HarnessError::Config(format!("believed lane {} does not exist", driver.believed_lane)));
        }
        Ok(Self {
            model: driver.model(),
            tuning: driver.tuning(),
            lane: driver.believed_lane,
            geometry,
            window: RegressorWindow::new(),
            rng,
        })
    }

    /// The driver described by `config.driver`, on the config seed's driver stream.
    pub fn from_config(config: &ScenarioConfig) -> Result<Self> {
        match &config.driver {
            DriverConfig::Synthetic(driver) => {
                Self::new(driver, config.lanes.geometry()?, rng_stream(config.seed, DRIVER_STREAM))
            }
            DriverConfig::LiveSession(_) => {
                Err(HarnessError::Config("live-session driver needs a session host".into()))
            }
        }
    }

    pub fn model(&self) -> &SteeringCoefficients<f64> {
        &self.model
    }
}

impl Driver for SyntheticDriver {
    fn command(&mut self, obs: &Observation) -> Result<DriverCommand<f64>> {
        let a = obs.angles[self.lane];
        self.window.observe(a.phi, a.omega, obs.state.ydot);
        let cmd = synthetic_command(
            &obs.pose,
            self.geometry.lane_centers[self.lane],
            &self.geometry,
            &self.model,
            &self.window,
            &self.tuning,
            &mut self.rng,
        );
        self.window.record_steering(cmd.delta);
        Ok(cmd)
    }
}

/// Plays back a command sequence by step index, holding the last command
/// past the end (zero if empty).
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayDriver {
    commands: Vec<DriverCommand<f64>>,
}

impl ReplayDriver {
    pub fn new(commands: Vec<DriverCommand<f64>>) -> Self {
        Self { commands }
    }

    /// Replays the driver column of a record.
    pub fn from_record(record: &crate::record::TrajectoryRecord) -> Self {
        Self::new(record.rows.iter().map(|r| r.driver).collect())
    }
}

impl Driver for ReplayDriver {
    fn command(&mut self, obs: &Observation) -> Result<DriverCommand<f64>> {
        Ok(self.commands.get(obs.step).or(self.commands.last()).copied().unwrap_or_else(DriverCommand::zero))
    }
}
