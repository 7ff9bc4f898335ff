use thiserror::Error;

/// Errors shared by every stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation's precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Geometry too degenerate to continue (e.g. no detectable ground plane).
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// The operation has no answer on this input (e.g. an all-minimum heatmap).
    #[error("no solution: {0}")]
    NoSolution(String),

    /// The observation yielded no usable wall geometry.
    #[error("empty segment extraction: {0}")]
    EmptyObservation(String),

    /// A file did not match its documented schema.
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn degenerate(msg: impl Into<String>) -> Self {
        Error::DegenerateGeometry(msg.into())
    }
}
