//! Experiment harness: scenario configuration, closed-loop rollouts in
//! human-in-control and autonomy-in-control modes, trajectory records, and
//! batch residual analysis.

// Negated comparisons reject NaN as well as out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod batch;
pub mod config;
pub mod driver;
pub mod error;
pub mod record;
pub mod rollout;
pub mod sim;

pub use batch::{analyze, run_batch, run_batch_analysis, AnalysisOptions, AnalysisSummary, ConsistencyExperiment};
pub use config::ScenarioConfig;
pub use driver::{Driver, ReplayDriver, SyntheticDriver};
pub use error::{HarnessError, Result};
pub use record::{InputSource, TrajectoryRecord};
pub use rollout::{run_autonomy_in_control, run_human_in_control, run_scenario};
pub use sim::{Observation, Simulation};
