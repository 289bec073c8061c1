use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A parameter or window shape that the operation cannot work with.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input for which the metric is undefined (zero positive sequence, zero rating, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A config file entry failed to parse or validate.
    #[error("{path}:{line}: `{key}`: {message}")]
    ConfigEntry {
        path: PathBuf,
        line: usize,
        key: String,
        message: String,
    },

    #[error("network matrix is singular: {0}")]
    Singular(String),

    /// Non-finite plant state, reported at the first offending step.
    #[error("simulation diverged at step {step} (t = {time_s:.6} s)")]
    Divergence { step: u64, time_s: f64 },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
