//! Error taxonomy shared across the crate.
//!
//! Every fallible operation returns one of these variants; the CLI prints the
//! variant name on stderr and exits nonzero, so names are stable interface.

use crate::zsolve::SolveReport;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A matrix or vector contained NaN/inf, or an evaluation produced one.
    #[error("NumericError: {0}")]
    Numeric(String),

    /// A linear system stayed singular even after the ridge fallback.
    #[error("SingularMatrixError: {0}")]
    SingularMatrix(String),

    /// An eigenvalue fell below the conditioning threshold for inv_sqrt.
    #[error("IllConditionedError: eigenvalue {eigenvalue:.3e} below threshold {threshold:.3e}")]
    IllConditioned { eigenvalue: f64, threshold: f64 },

    /// Shapes, column roles, or declared metadata do not line up.
    #[error("SchemaError: {0}")]
    Schema(String),

    /// The Z-solver exhausted its iteration budget; carries the best iterate.
    #[error("NonConvergenceError: {message} (best score norm {:.3e})", report.score_norm)]
    NonConvergence { message: String, report: SolveReport },

    /// A transformation hit a degenerate point (e.g. ratio denominator near zero).
    #[error("DegenerateTransformError: {0}")]
    DegenerateTransform(String),

    /// More than the allowed fraction of bootstrap replicates failed.
    #[error("BootstrapDegenerateError: {failed} of {total} replicates failed")]
    BootstrapDegenerate { failed: usize, total: usize },

    /// More than the allowed fraction of Monte Carlo replicates failed.
    #[error("ScenarioDegenerateError: {failed} of {total} replicates failed at grid value {grid_value}")]
    ScenarioDegenerate {
        failed: usize,
        total: usize,
        grid_value: f64,
    },

    /// A data split is too small to fit the requested model.
    #[error("InsufficientDataError: {0}")]
    InsufficientData(String),

    /// A run configuration value is out of range or inconsistent.
    #[error("ConfigError: {0}")]
    Config(String),

    /// File I/O wrapped with context.
    #[error("IoError: {0}")]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Schema(format!("CSV: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
