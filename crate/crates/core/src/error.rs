//! Crate-wide error type.
//!
//! Validation problems (bad schemas, bad domains, missing cells) are kept
//! distinct from numerical failures (rank deficiency, separation) so callers
//! can map them to different exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid settings or an unusable combination of options.
    #[error("config error: {0}")]
    Config(String),

    /// Column-level problems: unknown names, duplicates, bad declarations.
    #[error("schema error: {0}")]
    Schema(String),

    /// Data violates a declared domain (non-binary treatment, NaN outcome, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// A cell is empty and no missingness weight column was declared.
    #[error(
        "missing value at row {row} in column '{column}' (no missingness weight column declared)"
    )]
    MissingData { row: usize, column: String },

    /// A treatment arm required by the operation has no observations.
    #[error("positivity violation: {0}")]
    Positivity(String),

    /// An unpenalized system is singular or effectively so.
    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    /// Diverging logistic coefficients; the classes are (quasi-)separated.
    #[error("separation detected: {0}; refit with a ridge or lasso penalty")]
    Separation(String),

    /// Any other numerical failure (non-finite values, degenerate folds, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(String),
}

impl Error {
    /// True for failures of the arithmetic rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient(_) | Error::Separation(_) | Error::Numerical(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
