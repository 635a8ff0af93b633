//! `steerlab`: simulate rollouts, fit steering models, analyze residuals,
//! run batches and host live sessions.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use steerlab_core::steering::{SteeringCoefficients, N_COEFFICIENTS};
use steerlab_core::ControlMode;
use steerlab_harness::batch::{fit_records, ConsistencyExperiment};
use steerlab_harness::config::DriverConfig;
use steerlab_harness::{analyze, run_batch, run_scenario, AnalysisOptions, ScenarioConfig, TrajectoryRecord};

#[derive(Parser)]
#[command(name = "steerlab", version, about = "Shared-autonomy lane-keeping experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one rollout with the configured synthetic driver and save its record.
    Simulate {
        #[arg(long)]
        mode: Option<ControlMode>,
        /// Scenario TOML; defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Record path; `.stlr` writes the binary format.
        #[arg(long)]
        out: PathBuf,
    },
    /// Residual whiteness and KS tests for a set of records.
    Analyze {
        /// `human-fit`, `synthetic`, or a JSON file (array of nine, or `fit` output).
        #[arg(long)]
        coeffs: String,
        /// Record files or directories of records.
        #[arg(long, num_args = 1.., required = true)]
        records: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long)]
        max_lag: Option<usize>,
        /// Summary JSON path; stdout if omitted.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Least-squares fit of the steering model to human-in-control records.
    Fit {
        #[arg(long, num_args = 1.., required = true)]
        records: Vec<PathBuf>,
        /// Fit JSON path; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Many seeded rollouts of one scenario plus their analysis summary.
    Batch {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of runs; seeds 1..=runs unless --seeds is given.
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Analysis coefficients; the configured driver's model if omitted.
        #[arg(long)]
        coeffs: Option<String>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Directory for records and `summary.json`.
        #[arg(long, default_value = "batch-out")]
        out_dir: PathBuf,
    },
    /// Calibrate, fit, then run the matched and perturbed driver groups.
    Experiment {
        /// Summary JSON path; stdout if omitted.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Host live sessions over websockets.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Directory of scenario TOML files; records go to `<dir>/records`.
        #[arg(long, default_value = ".")]
        config_dir: PathBuf,
    },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CoeffFile {
    Array([f64; N_COEFFICIENTS]),
    Fit { coefficients: SteeringCoefficients<f64> },
    Named(SteeringCoefficients<f64>),
}

fn load_coefficients(source: &str) -> Result<SteeringCoefficients<f64>> {
    match source {
        "human-fit" => Ok(SteeringCoefficients::human_fit()),
        "synthetic" => Ok(SteeringCoefficients::synthetic_reference()),
        path => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
            let parsed: CoeffFile = serde_json::from_str(&text)
                .with_context(|| format!("{path}: expected nine numbers or a fit result"))?;
            Ok(match parsed {
                CoeffFile::Array(a) => SteeringCoefficients::from_array(a),
                CoeffFile::Fit { coefficients } | CoeffFile::Named(coefficients) => coefficients,
            })
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ScenarioConfig> {
    match path {
        Some(p) => ScenarioConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(ScenarioConfig::default()),
    }
}

fn record_paths(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "txt" || x == "stlr"))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        bail!("no record files found");
    }
    Ok(out)
}

fn load_records(inputs: &[PathBuf]) -> Result<Vec<TrajectoryRecord>> {
    record_paths(inputs)?
        .iter()
        .map(|p| {
            let loaded = TrajectoryRecord::load(p).with_context(|| format!("loading {}", p.display()))?;
            for w in &loaded.warnings {
                eprintln!("warning: {}: {w}", p.display());
            }
            Ok(loaded.record)
        })
        .collect()
}

fn emit(json: &str, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, json).with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct FitReport<'a> {
    names: [&'static str; N_COEFFICIENTS],
    #[serde(flatten)]
    fit: &'a steerlab_core::steering::FitResult<f64>,
    records: usize,
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Simulate { mode, config, seed, out } => {
            let mut config = load_config(config.as_deref())?;
            if let Some(mode) = mode {
                config = config.with_mode(mode);
            }
            if let Some(seed) = seed {
                config = config.with_seed(seed);
            }
            let record = run_scenario(&config)?;
            record.save(&out)?;
            let last = record.rows.last().expect("records are non-empty");
            eprintln!(
                "{}: {} steps, final lateral offset {:.4} m -> {}",
                record.header.trajectory_id,
                record.len(),
                last.state.y,
                out.display()
            );
        }
        Command::Analyze { coeffs, records, alpha, max_lag, report } => {
            let records = load_records(&records)?;
            let mut options = AnalysisOptions::new(load_coefficients(&coeffs)?);
            options.alpha = alpha;
            options.max_lag = max_lag;
            let summary = analyze(&records, &options)?;
            emit(&summary.to_json()?, report.as_deref())?;
        }
        Command::Fit { records, out } => {
            let records = load_records(&records)?;
            let fit = fit_records(&records)?;
            let report = FitReport { names: SteeringCoefficients::<f64>::NAMES, fit: &fit, records: records.len() };
            emit(&serde_json::to_string_pretty(&report)?, out.as_deref())?;
        }
        Command::Batch { config, runs, seeds, coeffs, alpha, out_dir } => {
            let config = load_config(config.as_deref())?;
            let seeds = match (runs, seeds.is_empty()) {
                (_, false) => seeds,
                (Some(n), true) => (1..=n as u64).collect(),
                (None, true) => bail!("give --runs or --seeds"),
            };
            if let Some(n) = runs {
                if n != seeds.len() {
                    bail!("--runs {n} disagrees with {} seeds", seeds.len());
                }
            }
            let coefficients = match (coeffs, &config.driver) {
                (Some(source), _) => load_coefficients(&source)?,
                (None, DriverConfig::Synthetic(d)) => d.model(),
                (None, DriverConfig::LiveSession(_)) => config.advisor.model(),
            };
            let mut options = AnalysisOptions::new(coefficients);
            options.alpha = alpha;
            let batch = run_batch(&config, &seeds)?;
            for e in &batch.errors {
                eprintln!("warning: seed {} failed: {}", e.seed, e.message);
            }
            let mut summary = analyze(&batch.records, &options)?;
            summary.errors = batch.errors;
            std::fs::create_dir_all(&out_dir)?;
            for r in &batch.records {
                r.save(out_dir.join(format!("{}.txt", r.header.trajectory_id)))?;
            }
            std::fs::write(out_dir.join("summary.json"), summary.to_json()?)?;
            eprintln!("{} records, summary hash {} -> {}", batch.records.len(), summary.hash(), out_dir.display());
        }
        Command::Experiment { report } => {
            let result = ConsistencyExperiment::default().run()?;
            emit(&serde_json::to_string_pretty(&result)?, report.as_deref())?;
        }
        Command::Serve { port, config_dir } => {
            let addr = SocketAddr::from(([0, 0, 0, 0], port));
            tokio::runtime::Runtime::new()?.block_on(steerlab_session::serve(addr, &config_dir))?;
        }
    }
    Ok(())
}
