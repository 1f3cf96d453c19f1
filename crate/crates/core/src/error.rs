use thiserror::Error;

/// Errors raised anywhere in the toolkit, grouped by the category reported
/// by the command-line harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("solver error: {message} (iterations {iterations}, residual {residual:.3e})")]
    NonConvergence {
        message: String,
        iterations: usize,
        residual: f64,
        /// Best iterate reached before giving up (full vertex vector).
        best: Vec<f64>,
    },

    #[error("solver error: {0}")]
    Solver(String),

    #[error("inconclusive: {0}")]
    Inconclusive(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Coarse error category, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Geometry,
    Solver,
    Inconclusive,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Io(_) | Error::Csv(_) => ErrorKind::Config,
            Error::Geometry(_) => ErrorKind::Geometry,
            Error::NonConvergence { .. } | Error::Solver(_) => ErrorKind::Solver,
            Error::Inconclusive(_) => ErrorKind::Inconclusive,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Config => 2,
            ErrorKind::Geometry => 3,
            ErrorKind::Solver => 4,
            ErrorKind::Inconclusive => 5,
        }
    }

    /// Prefix the message with the module or stage where it surfaced.
    pub fn context(self, ctx: &str) -> Error {
        match self {
            Error::Config(m) => Error::Config(format!("{ctx}: {m}")),
            Error::Geometry(m) => Error::Geometry(format!("{ctx}: {m}")),
            Error::NonConvergence {
                message,
                iterations,
                residual,
                best,
            } => Error::NonConvergence {
                message: format!("{ctx}: {message}"),
                iterations,
                residual,
                best,
            },
            Error::Solver(m) => Error::Solver(format!("{ctx}: {m}")),
            Error::Inconclusive(m) => Error::Inconclusive(format!("{ctx}: {m}")),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
