use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Malformed input at a known byte offset.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("conversion error: {0}")]
    Conversion(String),

    /// Transport-level failure of a remote service. Retryable.
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    /// The remote provider answered, but with an error payload or an unusable body.
    #[error("provider error: {payload}")]
    Provider { payload: String },

    #[error("invariant violation: {0}")]
    Invariant(String),

    /// Training hit a non-finite loss or gradient. Carries a dump of the minibatch.
    #[error("numerical failure: {message}\n{diagnostic}")]
    Numerical { message: String, diagnostic: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Transport { .. })
    }

    /// Process exit code: 1 for errors the operator can fix, 2 for internal failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Ingestion(_)
            | Error::Config(_)
            | Error::DimensionMismatch { .. }
            | Error::InvalidArgument(_)
            | Error::Parse { .. }
            | Error::Conversion(_)
            | Error::Io { .. }
            | Error::Json(_)
            | Error::Checkpoint(_) => 1,
            Error::Transport { .. }
            | Error::Provider { .. }
            | Error::Invariant(_)
            | Error::Numerical { .. } => 2,
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
