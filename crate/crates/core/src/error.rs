use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the engine can report, grouped by the stage that raises it.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("invalid spec: {0}")]
    Spec(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("shape error: {0}")]
    Shape(String),

    /// A stateful stage was offered data from a non-training partition.
    #[error("leakage fault: {0}")]
    Leakage(String),
    #[error("fit error: {0}")]
    Fit(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("repair error: {0}")]
    Repair(String),
    #[error("lookup error: {0}")]
    Lookup(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("resolution error: {0}")]
    Resolution(String),
    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("routing error: {0}")]
    Routing(String),
    #[error("context error: requested {requested} context members, only {available} available")]
    Context { requested: usize, available: usize },

    #[error("metric error: {0}")]
    Metric(String),
    #[error("descale error: {0}")]
    Descale(String),

    #[error("canonicalization error: {0}")]
    Canonicalization(String),
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },
    #[error("corrupt payload: {0}")]
    Corrupt(String),
    #[error("cache busy: could not lock {0}")]
    CacheBusy(PathBuf),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("replay error: {0}")]
    Replay(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
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

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Wraps the error with the name of the run stage that produced it.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, with stage context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_leakage(&self) -> bool {
        matches!(self.root(), Error::Leakage(_))
    }

    /// CLI exit code: 3 for leakage, 2 for validation/config problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Leakage(_) => 3,
            Error::Schema(_)
            | Error::Integrity(_)
            | Error::Spec(_)
            | Error::Contract(_)
            | Error::Configuration(_)
            | Error::Config { .. }
            | Error::Canonicalization(_)
            | Error::Json(_) => 2,
            _ => 1,
        }
    }
}
