use std::path::PathBuf;

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

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("duplicate kernel key {0}")]
    DuplicateKey(String),

    #[error("unknown kernel {0}")]
    UnknownKernel(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("zero instruction sample for {0}")]
    ZeroInstructions(String),

    #[error("invalid sample for {key}: {message}")]
    InvalidSample { key: String, message: String },

    #[error("backend {backend}: {message} ({key})")]
    Profiler {
        backend: String,
        key: String,
        message: String,
    },

    #[error("build of {source_path} with {candidate} failed:\n{output}")]
    Build {
        candidate: String,
        source_path: PathBuf,
        output: String,
    },

    #[error("run of {executable} failed: {message}")]
    Run { executable: PathBuf, message: String },

    #[error("measurement error: {0}")]
    Measurement(String),

    #[error("schema mismatch: missing {missing:?}, extra {extra:?}")]
    SchemaMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
    },

    #[error("{0}")]
    Invalid(String),

    #[error("AUC undefined: {0}")]
    AucUndefined(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad configuration rather than by a failing
    /// operation; the CLI maps these to exit status 2.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::DuplicateKey(_) | Error::Parse { .. }
        )
    }
}
