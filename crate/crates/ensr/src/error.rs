use thiserror::Error;

/// Unified error type for the whole pipeline.
///
/// Variants are grouped so the CLI can map them onto distinct exit codes:
/// configuration problems, data/container problems, shape mismatches,
/// numerical failures, and checkpoint/resume problems.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),

    #[error("io: {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("container: {0}")]
    Container(String),

    #[error("shape: {0}")]
    Shape(String),

    #[error("numeric: {0}")]
    Numeric(String),

    #[error("corpus: {0}")]
    Corpus(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Exit-code class used by the CLI. Stable across releases.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io { .. } | Error::Container(_) | Error::Json(_) => 3,
            Error::Corpus(_) => 4,
            Error::Shape(_) => 5,
            Error::Numeric(_) => 6,
            Error::Checkpoint(_) => 7,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
