use std::path::PathBuf;

use crate::oscillator::ShapeSignature;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An input lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The control-parameter inversion hit `gamma - tau_i * k = 0`.
    #[error("singular configuration: {0}")]
    Singular(String),

    /// `4k - gamma^2 < 0`: the induced motion does not oscillate.
    #[error("overdamped motion (4k - gamma^2 = {discriminant:e}); omega is undefined")]
    Overdamped { discriminant: f64 },

    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("objective became non-finite at iteration {iteration}; last good iterate {last_good:?}")]
    NonFinite {
        iteration: usize,
        last_good: Box<ShapeSignature>,
    },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {message}", .path.display())]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(vec![msg.into()])
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by bad user input (missing files, malformed
    /// data, inconsistent plans) as opposed to numerical or runtime failures.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Validation(_) | Error::Parse { .. } => true,
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            _ => false,
        }
    }
}
