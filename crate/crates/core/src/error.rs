use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("simulation diverged at step {step}")]
    SimulationDiverged { step: usize },

    #[error("degenerate state-space model: q = r = 0 with non-constant observations")]
    DegenerateModel,

    #[error("need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("autocorrelation undefined for a constant series")]
    UndefinedAcf,

    #[error("zero variance series")]
    ZeroVariance,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("Sobol dimension {0} exceeds the direction-number table")]
    SobolDimension(usize),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for the command-line front end: 1 for input
    /// problems, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::SimulationDiverged { .. }
            | Error::DegenerateModel
            | Error::UndefinedAcf
            | Error::ZeroVariance
            | Error::Numerical(_) => 2,
            _ => 1,
        }
    }
}
