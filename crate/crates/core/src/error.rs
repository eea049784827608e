use std::path::PathBuf;

use impactor_mcmc::diagnostics::DiagnosticsError;
use impactor_mcmc::{Diagnostics, SamplerError};
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}, line {line}: {message}")]
    Row { path: PathBuf, line: u64, message: String },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("unknown category label {0:?}")]
    UnknownCategory(String),
    #[error("entity {0} has visits but no metadata row")]
    MissingMeta(String),
    #[error("metadata row for entity {0} is not referenced by any visit row")]
    UnreferencedMeta(String),
    #[error("invalid study windows: {0}")]
    Windows(String),
    #[error("entity {entity}: {message}")]
    Entity { entity: String, message: String },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error("sampler did not converge (max R-hat {:.4}, min ESS {:.0}, {divergences} divergences)", .diagnostics.max_rhat, .diagnostics.min_ess)]
    NonConvergence {
        diagnostics: Box<Diagnostics>,
        divergences: usize,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn entity(entity: &str, message: impl Into<String>) -> Self {
        Error::Entity {
            entity: entity.to_string(),
            message: message.into(),
        }
    }
}
