//! Batch rollouts and residual analysis summaries.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use steerlab_core::analysis::{
    autocorrelation, central_outliers, cross_test, default_max_lag, ecdf, residuals, AcfReport, CentralOutliers,
    CrossTest, Ecdf,
};
use steerlab_core::steering::{fit_coefficients, FitResult, SteeringCoefficients, N_COEFFICIENTS};
use steerlab_core::ControlMode;

use crate::config::{DriverConfig, ScenarioConfig};
use crate::error::{HarnessError, Result};
use crate::record::TrajectoryRecord;
use crate::rollout::run_scenario;

pub const SUMMARY_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunError {
    pub seed: u64,
    pub message: String,
}

/// Rollouts of one template over several seeds.
#[derive(Debug, Clone)]
pub struct BatchRuns {
    /// Successful records, in seed order.
    pub records: Vec<TrajectoryRecord>,
    pub errors: Vec<RunError>,
}

/// Runs `template` once per seed in parallel; failures are collected, not fatal.
pub fn run_batch(template: &ScenarioConfig, seeds: &[u64]) -> Result<BatchRuns> {
    if seeds.is_empty() {
        return Err(HarnessError::Config("batch needs at least one run".into()));
    }
    template.validate()?;
    let outcomes: Vec<(u64, Result<TrajectoryRecord>)> =
        seeds.par_iter().map(|&seed| (seed, run_scenario(&template.clone().with_seed(seed)))).collect();
    let mut runs = BatchRuns { records: Vec::new(), errors: Vec::new() };
    for (seed, outcome) in outcomes {
        match outcome {
            Ok(r) => runs.records.push(r),
            Err(e) => runs.errors.push(RunError { seed, message: e.to_string() }),
        }
    }
    Ok(runs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub coefficients: [f64; N_COEFFICIENTS],
    pub alpha: f64,
    /// `None` picks `min(50, N/4)` per trajectory.
    pub max_lag: Option<usize>,
}

impl AnalysisOptions {
    pub fn new(coefficients: SteeringCoefficients<f64>) -> Self {
        Self { coefficients: coefficients.to_array(), alpha: 0.05, max_lag: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryAnalysis {
    pub trajectory_id: String,
    pub mode: ControlMode,
    pub seed: u64,
    pub n_residuals: usize,
    pub residual_mean: f64,
    pub residual_std: f64,
    pub acf: Option<AcfReport<f64>>,
    /// Why residuals or the ACF could not be computed.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAnalysis {
    pub mode: ControlMode,
    pub trajectory_ids: Vec<String>,
    pub white_count: usize,
    /// Central ECDF and per-member KS results against it (two or more members).
    pub central: Option<CentralOutliers<f64>>,
    pub central_id: Option<String>,
    pub outlier_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossTestReport {
    pub group_a: ControlMode,
    pub group_b: ControlMode,
    pub result: CrossTest<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub format: u32,
    pub options: AnalysisOptions,
    pub trajectories: Vec<TrajectoryAnalysis>,
    pub groups: Vec<GroupAnalysis>,
    /// Present when both control modes have at least one analysable trajectory.
    pub cross_test: Option<CrossTestReport>,
    pub errors: Vec<RunError>,
}

impl AnalysisSummary {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 of the compact JSON encoding.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("summary serializes")))
    }

    pub fn group(&self, mode: ControlMode) -> Option<&GroupAnalysis> {
        self.groups.iter().find(|g| g.mode == mode)
    }
}

/// Residuals, whiteness, ECDFs, central CDFs and the cross-mode KS matrix.
pub fn analyze(records: &[TrajectoryRecord], options: &AnalysisOptions) -> Result<AnalysisSummary> {
    if !(options.alpha > 0.0 && options.alpha < 1.0) {
        return Err(HarnessError::Config(format!("alpha must lie in (0, 1), got {}", options.alpha)));
    }
    let coeffs = SteeringCoefficients::from_array(options.coefficients);
    let per_record: Vec<(TrajectoryAnalysis, Option<Ecdf<f64>>)> =
        records.par_iter().map(|r| analyze_one(r, &coeffs, options)).collect();

    let mut groups = Vec::new();
    let mut group_ecdfs: Vec<(ControlMode, Vec<Ecdf<f64>>)> = Vec::new();
    for mode in [ControlMode::HumanInControl, ControlMode::AutonomyInControl] {
        let members: Vec<&(TrajectoryAnalysis, Option<Ecdf<f64>>)> =
            per_record.iter().filter(|(t, e)| t.mode == mode && e.is_some()).collect();
        if members.is_empty() {
            continue;
        }
        let ids: Vec<String> = members.iter().map(|(t, _)| t.trajectory_id.clone()).collect();
        let ecdfs: Vec<Ecdf<f64>> = members.iter().map(|(_, e)| e.clone().expect("filtered")).collect();
        let white_count = members.iter().filter(|(t, _)| t.acf.as_ref().is_some_and(|a| a.is_white)).count();
        let central = if ecdfs.len() >= 2 { Some(central_outliers(&ecdfs, options.alpha)?) } else { None };
        let central_id = central.as_ref().map(|c| ids[c.central].clone());
        let outlier_ids =
            central.as_ref().map(|c| c.rejected.iter().map(|i| ids[*i].clone()).collect()).unwrap_or_default();
        groups.push(GroupAnalysis { mode, trajectory_ids: ids, white_count, central, central_id, outlier_ids });
        group_ecdfs.push((mode, ecdfs));
    }

    let cross_test = match group_ecdfs.as_slice() {
        [(a, ea), (b, eb)] => {
            Some(CrossTestReport { group_a: *a, group_b: *b, result: cross_test(ea, eb, options.alpha)? })
        }
        _ => None,
    };

    Ok(AnalysisSummary {
        format: SUMMARY_FORMAT,
        options: *options,
        trajectories: per_record.into_iter().map(|(t, _)| t).collect(),
        groups,
        cross_test,
        errors: Vec::new(),
    })
}

fn analyze_one(
    record: &TrajectoryRecord,
    coeffs: &SteeringCoefficients<f64>,
    options: &AnalysisOptions,
) -> (TrajectoryAnalysis, Option<Ecdf<f64>>) {
    let mut out = TrajectoryAnalysis {
        trajectory_id: record.header.trajectory_id.clone(),
        mode: record.header.mode,
        seed: record.header.seed,
        n_residuals: 0,
        residual_mean: f64::NAN,
        residual_std: f64::NAN,
        acf: None,
        error: None,
    };
    let series = record
        .analysis_samples()
        .and_then(|s| Ok(residuals(&s, coeffs, record.header.trajectory_id.clone(), record.header.mode)?));
    let series = match series {
        Ok(s) => s,
        Err(e) => {
            out.error = Some(e.to_string());
            return (out, None);
        }
    };
    let n = series.len();
    out.n_residuals = n;
    out.residual_mean = series.values.iter().sum::<f64>() / n as f64;
    out.residual_std =
        (series.values.iter().map(|v| (v - out.residual_mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    match autocorrelation(&series, options.max_lag.unwrap_or_else(|| default_max_lag(n))) {
        Ok(acf) => out.acf = Some(acf),
        Err(e) => out.error = Some(e.to_string()),
    }
    let e = ecdf(&series.values).ok();
    (out, e)
}

/// Rollouts plus their analysis.
#[derive(Debug, Clone)]
pub struct BatchResult {
    pub records: Vec<TrajectoryRecord>,
    pub summary: AnalysisSummary,
}

pub fn run_batch_analysis(template: &ScenarioConfig, seeds: &[u64], options: &AnalysisOptions) -> Result<BatchResult> {
    let runs = run_batch(template, seeds)?;
    let mut summary = analyze(&runs.records, options)?;
    summary.errors = runs.errors;
    Ok(BatchResult { records: runs.records, summary })
}

/// Fits the steering model to the analysis-lane samples of `records`.
pub fn fit_records(records: &[TrajectoryRecord]) -> Result<FitResult<f64>> {
    let samples = records.iter().map(|r| r.analysis_samples()).collect::<Result<Vec<_>>>()?;
    Ok(fit_coefficients(&samples)?)
}

/// Calibrate a steering model from one driver, then check whether the
/// model explains a human-in-control group driven by it and distinguishes an
/// autonomy-in-control group whose driver deviates from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyExperiment {
    /// Template for every rollout; mode and driver are overridden per group.
    pub base: ScenarioConfig,
    /// Driver that generates the calibration data.
    pub calibration_model: [f64; N_COEFFICIENTS],
    pub calibration_seeds: Vec<u64>,
    pub human_seeds: Vec<u64>,
    pub autonomy_seeds: Vec<u64>,
    /// Coefficient scale of the autonomy-group driver relative to the fit.
    pub perturbation: f64,
    /// Steering noise of the calibration driver (rad).
    pub calibration_noise_std: f64,
    /// Steering noise of the group drivers (rad).
    pub noise_std: f64,
    /// Speed-wander acceleration noise of every driver (m/s^2).
    pub accel_noise_std: f64,
    pub alpha: f64,
}

impl Default for ConsistencyExperiment {
    fn default() -> Self {
        Self {
            base: ScenarioConfig::default(),
            calibration_model: SteeringCoefficients::synthetic_reference().to_array(),
            calibration_seeds: (100..140).collect(),
            human_seeds: (1..=10).collect(),
            autonomy_seeds: (11..=20).collect(),
            perturbation: 1.5,
            calibration_noise_std: 0.03,
            noise_std: 0.0005,
            accel_noise_std: 3.0,
            alpha: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub fit: FitResult<f64>,
    pub summary: AnalysisSummary,
    pub summary_hash: String,
}

impl ConsistencyReport {
    pub fn group(&self, mode: ControlMode) -> Option<&GroupAnalysis> {
        self.summary.group(mode)
    }
}

impl ConsistencyExperiment {
    fn with_driver(
        &self,
        mode: ControlMode,
        model: [f64; N_COEFFICIENTS],
        scale: f64,
        noise_std: f64,
    ) -> ScenarioConfig {
        let mut c = self.base.clone().with_mode(mode);
        let mut d = match &c.driver {
            DriverConfig::Synthetic(d) => *d,
            DriverConfig::LiveSession(_) => Default::default(),
        };
        d.coefficients = model;
        d.scale = scale;
        d.noise_std = noise_std;
        d.accel_noise_std = self.accel_noise_std;
        c.driver = DriverConfig::Synthetic(d);
        c
    }

    pub fn run(&self) -> Result<ConsistencyReport> {
        let calibration = run_batch(
            &self.with_driver(ControlMode::HumanInControl, self.calibration_model, 1.0, self.calibration_noise_std),
            &self.calibration_seeds,
        )?;
        if let Some(e) = calibration.errors.first() {
            return Err(HarnessError::Config(format!("calibration run {} failed: {}", e.seed, e.message)));
        }
        let fit = fit_records(&calibration.records)?;
        let fitted = fit.coefficients.to_array();

        let human =
            run_batch(&self.with_driver(ControlMode::HumanInControl, fitted, 1.0, self.noise_std), &self.human_seeds)?;
        let mut autonomy_config =
            self.with_driver(ControlMode::AutonomyInControl, fitted, self.perturbation, self.noise_std);
        autonomy_config.advisor.coefficients = fitted;
        let autonomy = run_batch(&autonomy_config, &self.autonomy_seeds)?;

        let records: Vec<TrajectoryRecord> = human.records.into_iter().chain(autonomy.records).collect();
        let options = AnalysisOptions { coefficients: fitted, alpha: self.alpha, max_lag: None };
        let mut summary = analyze(&records, &options)?;
        summary.errors = human.errors.into_iter().chain(autonomy.errors).collect();
        let summary_hash = summary.hash();
        Ok(ConsistencyReport { fit, summary, summary_hash })
    }
}
