//! Crate-wide error type.

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by model fitting, statistics, calibration, and file I/O.
#[derive(Debug, thiserror::Error)]
#[non_exhaustive]
pub enum Error {
    /// Two inputs that must share a length disagree.
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    /// A collection that must be non-empty was empty.
    #[error("empty input: {0}")]
    Empty(&'static str),

    /// A numeric argument lies outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Too few data points for the requested fit or resampling plan.
    #[error("insufficient data: {0}")]
    Insufficient(String),

    /// The request cannot be satisfied for any amount of data.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// The input lacks a field the operation requires.
    #[error("missing capability: {0}")]
    Capability(String),

    /// A fitted quantity collapsed below a usable floor.
    #[error("degenerate: {0}")]
    Degenerate(String),

    /// The operation is well defined but deliberately not provided.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A file violated its format contract.
    #[error("format error: {0}")]
    Format(String),

    /// A run configuration failed validation.
    #[error("config error: {0}")]
    Config(String),

    /// A pipeline stage failed; wraps the underlying error.
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wraps `self` with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

/// Checks every entry of `values` for finiteness.
pub(crate) fn ensure_all_finite(values: &[f64], what: &str) -> Result<()> {
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Domain(format!(
                "{what} must be finite, got {v} at index {i}"
            )));
        }
    }
    Ok(())
}

/// Checks that two lengths agree.
pub(crate) fn ensure_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, got })
    }
}
