//! Numerical core for shared-autonomy lane-keeping experiments.
//!
//! * [`dynamics`]: kinematic bicycle, feedback linearization, discrete plant.
//! * [`control`]: PD reference tracking for autonomy-in-control driving.
//! * [`belief`]: Gaussian-mixture Kalman filter over lane-center hypotheses,
//!   including reweighting by the driver's suggested steering.
//! * [`steering`]: near/far-point visual angles, the generalized two-point
//!   steering model, least-squares fitting and a synthetic driver.
//! * [`analysis`]: residuals, autocorrelation whiteness, ECDFs and
//!   Kolmogorov-Smirnov testing.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! `*F64` aliases below name the double-precision instantiations used by the
//! experiment harness.

// Negated comparisons reject NaN as well as out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod belief;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod scalar;
pub mod steering;

pub use analysis::ControlMode;
pub use error::{Error, Result};
pub use nalgebra;
pub use scalar::Scalar;

pub type PoseF64 = dynamics::Pose<f64>;
pub type VehicleStateF64 = dynamics::VehicleState<f64>;
pub type DriverCommandF64 = dynamics::DriverCommand<f64>;
pub type LinearizedInputF64 = dynamics::LinearizedInput<f64>;
pub type VehicleParamsF64 = dynamics::VehicleParams<f64>;
pub type PlantModelF64 = dynamics::PlantModel<f64>;
pub type ReferenceF64 = control::Reference<f64>;
pub type GainSetF64 = control::GainSet<f64>;
pub type BeliefStateF64 = belief::BeliefState<f64>;
pub type MixtureComponentF64 = belief::MixtureComponent<f64>;
pub type MeasurementF64 = belief::Measurement<f64>;
pub type NoiseConfigF64 = belief::NoiseConfig<f64>;
pub type VisualAnglesF64 = steering::VisualAngles<f64>;
pub type SteeringCoefficientsF64 = steering::SteeringCoefficients<f64>;
pub type RegressorWindowF64 = steering::RegressorWindow<f64>;
pub type LaneGeometryF64 = steering::LaneGeometry<f64>;
pub type SteeringSampleF64 = steering::SteeringSample<f64>;
pub type DriverTuningF64 = steering::DriverTuning<f64>;
pub type ResidualSeriesF64 = analysis::ResidualSeries<f64>;
pub type AcfReportF64 = analysis::AcfReport<f64>;
pub type EcdfF64 = analysis::Ecdf<f64>;
pub type KsResultF64 = analysis::KsResult<f64>;

pub type PoseF32 = dynamics::Pose<f32>;
pub type VehicleStateF32 = dynamics::VehicleState<f32>;
pub type PlantModelF32 = dynamics::PlantModel<f32>;
pub type BeliefStateF32 = belief::BeliefState<f32>;
pub type SteeringCoefficientsF32 = steering::SteeringCoefficients<f32>;
pub type EcdfF32 = analysis::Ecdf<f32>;
