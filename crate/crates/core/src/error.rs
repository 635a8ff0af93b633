use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("steering angle {delta} rad is singular (|delta| >= pi/2)")]
    SingularSteering { delta: f64 },

    #[error("speed {v} m/s is below the linearization floor {v_min} m/s")]
    LowSpeed { v: f64, v_min: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("closed loop is not asymptotically stable (spectral radius {spectral_radius})")]
    Unstable { spectral_radius: f64 },

    #[error("innovation covariance is not invertible")]
    DegenerateCovariance,

    #[error("regressor window is still warming up")]
    WarmUp,

    #[error("regressor matrix is rank deficient (rank {rank} of {columns})")]
    RankDeficient { rank: usize, columns: usize },

    #[error("insufficient data: need at least {needed} samples, have {available}")]
    InsufficientData { needed: usize, available: usize },

    #[error("series has zero variance")]
    ZeroVariance,

    #[error("empty input")]
    EmptyInput,

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("non-finite value in input")]
    NonFinite,
}
