use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration detected before any work starts.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed or inconsistent input data.
    #[error("input error: {0}")]
    Input(String),

    /// Regression input that cannot be fitted.
    #[error("fitting error: {0}")]
    Fit(String),

    /// Violation of the sender/receiver/queue protocol.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Internal invariant broken (e.g. releasing a slot that was never held).
    #[error("invariant violation: {0}")]
    Invariant(String),

    /// A trace failed one of the audit checks.
    #[error("trace audit failed: {0}")]
    Audit(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("reports are not comparable: {0}")]
    Comparison(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
