//! Closed-loop rollouts in either control mode.

use steerlab_core::ControlMode;

use crate::config::ScenarioConfig;
use crate::driver::{Driver, SyntheticDriver};
use crate::error::{HarnessError, Result};
use crate::record::TrajectoryRecord;
use crate::sim::Simulation;

/// Default trajectory identifier, `<mode>-<seed>`.
pub fn trajectory_id(config: &ScenarioConfig) -> String {
    format!("{}-{:04}", config.mode, config.seed)
}

/// Runs every step of `config` with `driver`, whatever the mode.
pub fn run_with_driver(config: &ScenarioConfig, driver: &mut dyn Driver) -> Result<TrajectoryRecord> {
    let mut sim = Simulation::new(config, trajectory_id(config))?;
    while !sim.is_finished() {
        let obs = sim.observation();
        let cmd = driver.command(&obs)?;
        sim.step(cmd, false)?;
    }
    Ok(sim.into_record())
}

/// The driver's commands actuate the vehicle; no estimator runs.
pub fn run_human_in_control(config: &ScenarioConfig, driver: &mut dyn Driver) -> Result<TrajectoryRecord> {
    expect_mode(config, ControlMode::HumanInControl)?;
    run_with_driver(config, driver)
}

/// The autonomy controller actuates the vehicle; the driver's steering is
/// an advisory measurement for the estimator.
pub fn run_autonomy_in_control(config: &ScenarioConfig, driver: &mut dyn Driver) -> Result<TrajectoryRecord> {
    expect_mode(config, ControlMode::AutonomyInControl)?;
    run_with_driver(config, driver)
}

/// Rollout with the synthetic driver described by the config.
pub fn run_scenario(config: &ScenarioConfig) -> Result<TrajectoryRecord> {
    let mut driver = SyntheticDriver::from_config(config)?;
    run_with_driver(config, &mut driver)
}

fn expect_mode(config: &ScenarioConfig, mode: ControlMode) -> Result<()> {
    if config.mode != mode {
        return Err(HarnessError::Config(format!("scenario mode is {}, expected {mode}", config.mode)));
    }
    Ok(())
}
