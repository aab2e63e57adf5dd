//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or configuration value violates its documented invariant.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A value that must be finite was NaN or infinite.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Vector or matrix dimensions do not match.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A simulated trajectory left the finite range during data collection.
    #[error("trajectory {trajectory} diverged at step {step}")]
    TrajectoryDiverged { trajectory: usize, step: usize },

    /// The dataset contains no snapshots.
    #[error("no snapshots in dataset")]
    EmptyDataset,

    /// A CSV file could not be parsed.
    #[error("{path}:{line}: {message}")]
    CsvParse {
        path: String,
        line: usize,
        message: String,
    },

    /// The QP constraint set is empty.
    #[error("QP infeasible; conflicting constraints: {}", violated.join(", "))]
    QpInfeasible { violated: Vec<String> },

    /// A numerical routine failed to meet its contract.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The closed loop had to abort.
    #[error("control loop aborted at step {step}: {message}")]
    LoopAborted { step: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("model file error: {0}")]
    ModelFormat(String),
}
