//! Error type shared across the crate.

use thiserror::Error;

/// Unified error for panel ingestion, estimation, and chain analysis.
#[derive(Debug, Error)]
pub enum Error {
    /// I/O failure while reading or writing panel data or artifacts.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed CSV input.
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// Malformed JSON configuration or artifact.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// Input that violates the panel schema (bad column, bad wave, duplicate row).
    #[error("schema violation: {0}")]
    Schema(String),

    /// A binning request the data cannot support, e.g. percentile edges that
    /// collapse because too few distinct values exist.
    #[error("binning resolution: {0}")]
    Resolution(String),

    /// A parameter outside its documented domain (k <= 0, empty state set, ...).
    #[error("invalid parameter: {0}")]
    Param(String),

    /// A mathematical precondition violated at call time, e.g. KL divergence
    /// where the reference assigns zero mass to a supported outcome.
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical routine failed to reach its advertised accuracy.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A pipeline stage failed; carries the stage name so batch runs can
    /// report exactly where a country's analysis stopped.
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        source: Box<Error>,
    },
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
