use thiserror::Error;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the estimators and the harness.
///
/// The CLI maps these onto process exit codes: `InvalidInput`/`Config` to 2,
/// `InsufficientSamples` to 3, `GoodnessViolated`/`Internal` to 4.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on the inputs was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Not enough samples to run the requested estimator.
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    /// The data violates the concentration assumptions the algorithm relies
    /// on (e.g. an empty slab intersection or an infeasible constraint set).
    #[error("goodness violated: {0}")]
    GoodnessViolated(String),

    /// An internal invariant failed; indicates a bug or inputs far outside
    /// the supported regime.
    #[error("internal invariant violated: {0}")]
    Internal(String),

    /// Malformed configuration.
    #[error("config error: {0}")]
    Config(String),

    /// I/O failure, annotated with the path involved.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
