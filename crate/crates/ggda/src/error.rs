use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type. Variants are grouped by how the CLI reports them:
/// `Config` is a usage problem, `Numerical` is a solver failure, everything
/// else is a data problem.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid argument or option combination.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Semantically invalid data (dimension mismatches, bad measures, ...).
    #[error("invalid input: {0}")]
    Invalid(String),

    /// Malformed on-disk artifact, with a 1-based line number where known.
    #[error("{path}:{line}: {msg}")]
    Format {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A solver failed to reach a valid state (non-convergence, degeneracy).
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn format(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the CLI: 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Invalid(_) | Error::Format { .. } | Error::Io { .. } => 2,
            Error::Numerical(_) => 3,
        }
    }
}
