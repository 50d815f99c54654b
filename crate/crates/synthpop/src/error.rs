use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Input text could not be parsed (malformed JSON/CSV, bad numbers).
    #[error("parse error: {0}")]
    Parse(String),
    /// Schema-level violation: duplicate names, unknown labels, cap exceeded.
    #[error("schema error: {0}")]
    Schema(String),
    /// Structural problem in tabular input: ragged rows, negative counts,
    /// missing cells, mismatched block sets.
    #[error("format error: {0}")]
    Format(String),
    /// Geography violation: level is not an ancestor, code too short,
    /// no records in the requested area.
    #[error("geography error: {0}")]
    Geo(String),
    /// Matrix/vector dimensions do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// An enumeration guard was exceeded (instance too large).
    #[error("guard violated: {0}")]
    Guard(String),
    /// A statistic is undefined on the given input (e.g. correlation of a
    /// constant vector).
    #[error("degenerate input: {0}")]
    Degenerate(String),
    /// Invalid configuration value.
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
