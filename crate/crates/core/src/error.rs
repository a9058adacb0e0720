use thiserror::Error;

use crate::factorize::FactorizationFit;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("row {row}: probabilities sum to {sum}, outside the simplex tolerance")]
    SimplexViolation { row: usize, sum: f64 },

    #[error("row {row}, column {col}: probability {value} is outside [0, 1]")]
    ProbabilityOutOfRange { row: usize, col: usize, value: f64 },

    #[error("row {row}: label {label} is not a valid class index for k = {k}")]
    LabelOutOfRange { row: usize, label: i64, k: usize },

    #[error("class {class} has no observations")]
    EmptyClass { class: usize },

    #[error("class count must be at least 2, got {k}")]
    InvalidK { k: usize },

    #[error("cannot compute quantiles of an empty score set")]
    EmptyScores,

    #[error("invalid quantile levels: {0}")]
    InvalidLevels(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("weight at row {row}, column {col} must be finite and positive, got {value}")]
    NonPositiveWeight { row: usize, col: usize, value: f64 },

    #[error("factorization did not converge within {iterations} iterations")]
    NoConvergence { iterations: usize, fit: Box<FactorizationFit> },

    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),

    #[error("{dropped} of {total} bootstrap replicates failed to converge")]
    InsufficientReplicates { dropped: usize, total: usize },

    #[error("models were bootstrapped with different replicate counts ({expected} vs {found})")]
    MismatchedB { expected: usize, found: usize },

    #[error("a class received no observations after {attempts} Dirichlet draws")]
    EmptyClassAfterSampling { attempts: usize },

    #[error("unknown experiment '{0}' (expected discriminative, skewness or weights)")]
    UnknownExperiment(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code: 1 for input problems, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NoConvergence { .. } | Error::NumericalDegeneracy(_) | Error::InsufficientReplicates { .. } => 2,
            _ => 1,
        }
    }
}
