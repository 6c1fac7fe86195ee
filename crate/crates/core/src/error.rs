use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the simulator.
///
/// Variants split into two families: input problems (bad configuration,
/// malformed files, violated preconditions) and runtime failures. The CLI
/// maps the first family to exit code 1 and the second to exit code 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("no wind data")]
    NoWindData,

    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("{path}:{line}: {message}")]
    Data { path: PathBuf, line: u64, message: String },

    #[error("dose window [{start}, {end}] s is not covered by the series [{first}, {last}] s")]
    WindowOutsideSeries {
        start: f64,
        end: f64,
        first: f64,
        last: f64,
    },

    #[error("all particle weights are zero")]
    ZeroWeights,

    #[error("particle {id}: {source}")]
    Particle {
        id: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("sampler {0} does not belong to a known line")]
    UnknownLine(String),

    #[error("{0}")]
    Runtime(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    /// True for errors caused by the user's inputs rather than by the run itself.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Invalid { .. }
            | Error::NoWindData
            | Error::Config { .. }
            | Error::Data { .. }
            | Error::UnknownLine(_) => true,
            Error::Particle { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
