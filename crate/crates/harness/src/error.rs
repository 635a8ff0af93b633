use thiserror::Error;

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] steerlab_core::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("config parse error: {0}")]
    ConfigParse(#[from] toml::de::Error),

    #[error("scenario has zero steps")]
    EmptyRecord,

    #[error("filter diverged at step {step}: covariance lost positive-definiteness")]
    FilterDivergence { step: usize },

    #[error("driver produced no input in time at step {step}")]
    DriverTimeout { step: usize },

    #[error("simulation already finished after {steps} steps")]
    Finished { steps: usize },

    #[error("malformed record (line {line}): {reason}")]
    Malformed { line: usize, reason: String },

    #[error("unsupported record schema version {found} (supported: {supported})")]
    SchemaVersion { found: u32, supported: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    pub(crate) fn malformed(line: usize, reason: impl Into<String>) -> Self {
        HarnessError::Malformed { line, reason: reason.into() }
    }
}
