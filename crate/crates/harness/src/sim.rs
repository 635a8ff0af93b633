//! Fixed-step simulation shared by offline rollouts and live sessions.
//!
//! One [`Simulation::step`] call takes the driver's command for the current
//! step and advances the true vehicle by `ts`. In human-in-control mode the
//! command is saturated and applied directly. In autonomy-in-control mode the
//! step runs the estimator (predict, sensor update, advisor update), the
//! reference controller on the mixture mean, and feedback linearization; the
//! driver's steering only reweights hypotheses.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use steerlab_core::belief::{mixture_mean, predict, update_advisor, update_measurement, BeliefState, Measurement};
use steerlab_core::control::{control, Reference};
use steerlab_core::dynamics::{
    apply_linearization, feedback_linearize, step_continuous, DriverCommand, LinearizedInput, Pose, VehicleState,
};
use steerlab_core::steering::{
    gaussian, predict_steering, visual_angles, visual_angles_from_offset, LaneGeometry, RegressorWindow,
    SteeringCoefficients, VisualAngles,
};
use steerlab_core::ControlMode;

use crate::config::{ReferenceMode, ScenarioConfig};
use crate::error::{HarnessError, Result};
use crate::record::{InputSource, RecordHeader, RecordStatus, Row, TrajectoryRecord, SCHEMA_VERSION};

pub const DRIVER_STREAM: u64 = 1;
pub const SENSOR_STREAM: u64 = 2;

/// Independent ChaCha8 stream `stream` of `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// What the driver can see at the start of a step.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub step: usize,
    pub t: f64,
    pub pose: Pose<f64>,
    pub state: VehicleState<f64>,
    /// Visual angles toward each lane center.
    pub angles: Vec<VisualAngles<f64>>,
}

struct Estimator {
    belief: BeliefState<f64>,
    /// Per-hypothesis regressor windows; steering history is shared.
    windows: Vec<RegressorWindow<f64>>,
    model: SteeringCoefficients<f64>,
    last_input: Option<LinearizedInput<f64>>,
}

struct AutonomyStep {
    command: DriverCommand<f64>,
    saturated: bool,
    underflow: bool,
}

pub struct Simulation {
    config: ScenarioConfig,
    trajectory_id: String,
    config_hash: String,
    n_steps: usize,
    plant: steerlab_core::dynamics::PlantModel<f64>,
    geometry: LaneGeometry<f64>,
    camera_reference: f64,
    pose: Pose<f64>,
    estimator: Option<Estimator>,
    sensor_rng: ChaCha8Rng,
    rows: Vec<Row>,
}

impl Simulation {
    pub fn new(config: &ScenarioConfig, trajectory_id: impl Into<String>) -> Result<Self> {
        config.validate()?;
        let n_steps = config.step_count()?;
        if n_steps == 0 {
            return Err(HarnessError::EmptyRecord);
        }
        let [xdot, y, ydot, _] = config.initial_state;
        let pose = Pose::new(0.0, config.true_lane_center + y, ydot.atan2(xdot), xdot.hypot(ydot));
        let estimator = match config.mode {
            ControlMode::HumanInControl => None,
            ControlMode::AutonomyInControl => {
                let belief = config.initial_belief()?;
                Some(Estimator {
                    windows: vec![RegressorWindow::new(); belief.len()],
                    belief,
                    model: config.advisor.model(),
                    last_input: None,
                })
            }
        };
        Ok(Self {
            config: config.clone(),
            trajectory_id: trajectory_id.into(),
            config_hash: config.hash(),
            n_steps,
            plant: config.plant()?,
            geometry: config.lanes.geometry()?,
            camera_reference: config.camera_reference(),
            pose,
            estimator,
            sensor_rng: rng_stream(config.seed, SENSOR_STREAM),
            rows: Vec::with_capacity(n_steps),
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn mode(&self) -> ControlMode {
        self.config.mode
    }

    pub fn step_index(&self) -> usize {
        self.rows.len()
    }

    pub fn total_steps(&self) -> usize {
        self.n_steps
    }

    pub fn is_finished(&self) -> bool {
        self.rows.len() >= self.n_steps
    }

    pub fn pose(&self) -> &Pose<f64> {
        &self.pose
    }

    pub fn geometry(&self) -> &LaneGeometry<f64> {
        &self.geometry
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    /// Current mixture, in autonomy-in-control mode.
    pub fn belief(&self) -> Option<&BeliefState<f64>> {
        self.estimator.as_ref().map(|e| &e.belief)
    }

    fn true_state(&self) -> VehicleState<f64> {
        let (xdot, ydot) = self.pose.velocity();
        VehicleState::new(
            xdot,
            self.pose.y - self.config.true_lane_center,
            ydot,
            self.config.true_lane_center - self.camera_reference,
        )
    }

    pub fn observation(&self) -> Observation {
        let step = self.rows.len();
        Observation {
            step,
            t: step as f64 * self.config.ts,
            pose: self.pose,
            state: self.true_state(),
            angles: self.geometry.lane_centers.iter().map(|c| visual_angles(&self.pose, *c, &self.geometry)).collect(),
        }
    }

    /// Advances one step with the driver's command for this step.
    ///
    /// `stale` marks that the command is a held value older than the
    /// session's staleness limit.
    pub fn step(&mut self, driver: DriverCommand<f64>, stale: bool) -> Result<&Row> {
        if self.is_finished() {
            return Err(HarnessError::Finished { steps: self.n_steps });
        }
        if !(driver.delta.is_finite() && driver.a.is_finite()) {
            return Err(steerlab_core::Error::NonFinite.into());
        }
        let obs = self.observation();
        let params = self.config.vehicle;

        let (applied, saturated, underflow, source) = match self.config.mode {
            ControlMode::HumanInControl => {
                let (applied, saturated) = driver.saturate(&params);
                (applied, saturated, false, InputSource::Human)
            }
            ControlMode::AutonomyInControl => {
                let s = self.autonomy_step(obs.step, &obs.state, driver.delta)?;
                (s.command, s.saturated, s.underflow, InputSource::Autonomy)
            }
        };
        let input = apply_linearization(&self.pose, &applied, params.kappa)?;
        let next = step_continuous(&self.pose, &applied, &params, self.config.ts)?;
        let weights = self.estimator.as_mut().map(|e| {
            e.last_input = Some(input);
            e.belief.weights()
        });

        self.rows.push(Row {
            step: obs.step,
            t: obs.t,
            pose: obs.pose,
            state: obs.state,
            driver,
            applied,
            input,
            source,
            saturated,
            stale,
            underflow,
            angles: obs.angles,
            weights,
        });
        self.pose = next;
        Ok(self.rows.last().expect("row just pushed"))
    }

    fn autonomy_step(&mut self, step: usize, truth: &VehicleState<f64>, suggested: f64) -> Result<AutonomyStep> {
        let noise = &self.config.noise;
        let z = Measurement::new(
            truth.xdot + gaussian(noise.sigma_z1, &mut self.sensor_rng),
            self.pose.y - self.camera_reference + gaussian(noise.sigma_z2, &mut self.sensor_rng),
        );
        let est = self.estimator.as_mut().expect("autonomy mode has an estimator");

        let mut belief = match est.last_input {
            Some(u) => predict(&est.belief, &u, &self.plant, noise),
            None => est.belief.clone(),
        };
        belief = update_measurement(&belief, &z, noise)?;

        for (w, c) in est.windows.iter_mut().zip(belief.components()) {
            let m = &c.mean;
            let a = visual_angles_from_offset(m.heading(), m.y, &self.geometry);
            w.observe(a.phi, a.omega, m.ydot);
        }
        let mut underflow = false;
        if self.config.advisor.enabled && est.windows.iter().all(|w| w.is_warm()) {
            let predicted = est
                .windows
                .iter()
                .map(|w| predict_steering(&est.model, w))
                .collect::<steerlab_core::Result<Vec<_>>>()?;
            let update = update_advisor(&belief, suggested, &predicted, noise)?;
            belief = update.belief;
            underflow = update.underflow;
        }
        for w in est.windows.iter_mut() {
            w.record_steering(suggested);
        }
        if !belief.is_consistent() {
            return Err(HarnessError::FilterDivergence { step });
        }

        let mean = mixture_mean(&belief);
        let y_d = match self.config.reference.mode {
            ReferenceMode::TrueCenter => (self.config.true_lane_center - self.camera_reference) - mean.b,
            ReferenceMode::EstimatedCenter => 0.0,
        };
        let target = control(&mean, &Reference::new(self.config.reference.speed, y_d, 0.0), &self.config.gains);
        let estimated_pose = Pose::new(self.pose.x, mean.y, mean.heading(), mean.speed());
        let act = feedback_linearize(&estimated_pose, &target, &self.config.vehicle)?;
        est.belief = belief;
        Ok(AutonomyStep { command: act.command, saturated: act.saturated, underflow })
    }

    /// The record so far; complete if every step ran, aborted otherwise.
    pub fn into_record(self) -> TrajectoryRecord {
        let status = if self.is_finished() { RecordStatus::Complete } else { RecordStatus::Aborted };
        TrajectoryRecord {
            header: RecordHeader {
                version: SCHEMA_VERSION,
                trajectory_id: self.trajectory_id,
                mode: self.config.mode,
                config_hash: self.config_hash,
                seed: self.config.seed,
                ts: self.config.ts,
                lanes: self.geometry.lane_centers.len(),
                analysis_lane: self.config.analysis_lane(),
                status,
            },
            rows: self.rows,
        }
    }
}
