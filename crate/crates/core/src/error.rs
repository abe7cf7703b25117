use thiserror::Error;

/// Errors produced by the analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller-supplied data or parameters violate a precondition.
    #[error("invalid input: {0}")]
    Input(String),
    /// A polygon or other geometric object is degenerate.
    #[error("geometry error: {0}")]
    Geometry(String),
    /// The data is well-formed but too degenerate to analyse
    /// (no profiled cells, a single cluster, ...).
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}
