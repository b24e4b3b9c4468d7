use thiserror::Error;

/// Errors produced anywhere in the simulator and its analysis tools.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value for `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("non-finite state at t = {t} s")]
    NonFinite { t: f64 },

    #[error("unstable loop: |M| reached {ratio:.3e} x M0 at t = {t} s")]
    UnstableLoop { t: f64, ratio: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("fit did not converge: {0}")]
    NoConvergence(String),

    #[error("ambiguous fit: {0}")]
    Ambiguous(String),

    #[error("no transition: {0}")]
    NoTransition(String),

    #[error("no sustained point: {0}")]
    NoSustained(String),

    #[error("no sign change: {0}")]
    NoSignChange(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
