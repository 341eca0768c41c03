//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by sensing, recovery, and I/O routines.
#[derive(Debug, Error)]
pub enum Error {
    /// Operator dimensions violate 1 <= rows <= cols.
    #[error("invalid operator dimensions: rows={rows}, cols={cols}")]
    InvalidDimensions { rows: usize, cols: usize },

    /// A sensing-matrix column has zero norm, so coherence is undefined.
    #[error("degenerate sensing matrix: column {column} has zero norm")]
    DegenerateColumn { column: usize },

    /// Image shape is incompatible with the block geometry.
    #[error("geometry mismatch: {0}")]
    Geometry(String),

    /// Shapes of two grids or vectors disagree.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Input grid is too small for the requested patch or filter size.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A pixel was not covered by any patch during aggregation.
    #[error("coverage error: pixel ({row}, {col}) not covered by any patch")]
    Coverage { row: usize, col: usize },

    /// An iterate became non-finite.
    #[error("solver diverged at iteration {iteration}")]
    Divergence { iteration: usize },

    /// A scalar parameter is out of its valid range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// No side-information candidates were supplied.
    #[error("empty candidate list for side-information selection")]
    EmptyCandidates,

    /// Underlying I/O failure, annotated with the file path.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Malformed file contents.
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
