use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("eigenvalue iteration did not converge")]
    EigenNonConvergence,

    #[error("closed loop is not Schur stable (spectral radius {0})")]
    Unstable(f64),

    #[error("no stabilizing gain found for this structure: {0}")]
    InfeasibleStructure(String),

    #[error("channel coefficient for actuator {actuator}, sensor {sensor} is absent or zero")]
    MissingChannel { actuator: usize, sensor: usize },

    #[error("refusing to write an empty table")]
    EmptyTable,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
