//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by generation, metric, training, and pipeline code.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid argument or inconsistent input shapes/values.
    #[error("validation error: {0}")]
    Validation(String),

    /// A lookup by id failed (environment, viewpoint, token, ...).
    #[error("lookup error: {0}")]
    Lookup(String),

    /// World or episode generation could not satisfy its constraints.
    #[error("generation error in environment {env}: {msg}")]
    Generation { env: String, msg: String },

    /// A mathematically required precondition does not hold (empty
    /// training set, empty records, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A structural split produced an unusable partition.
    #[error("split error: {0}")]
    Split(String),

    /// Training diverged or produced non-finite values.
    #[error("training error ({stage}): {msg}")]
    Training { stage: String, msg: String },

    /// Bad experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    /// A data file failed schema validation.
    #[error("load error in {file} (record {record}, field {field}): {msg}")]
    Load {
        file: String,
        record: usize,
        field: String,
        msg: String,
    },

    /// IO failure, annotated with the path involved.
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// JSON (de)serialization failure, annotated with the path involved.
    #[error("serialization error at {path}: {msg}")]
    Serde { path: String, msg: String },

    /// A pipeline stage failed; wraps the underlying error with the
    /// stage name and run seed.
    #[error("stage {stage} (seed {seed}) failed: {source}")]
    Stage {
        stage: String,
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn serde(path: impl AsRef<std::path::Path>, err: impl std::fmt::Display) -> Self {
        Error::Serde {
            path: path.as_ref().display().to_string(),
            msg: err.to_string(),
        }
    }

    pub fn stage(stage: &str, seed: u64, source: Error) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            seed,
            source: Box::new(source),
        }
    }

    /// The innermost error under any stage wrappers, for classifying
    /// failures (e.g. process exit codes).
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn load(
        file: impl AsRef<std::path::Path>,
        record: usize,
        field: &str,
        msg: impl std::fmt::Display,
    ) -> Self {
        Error::Load {
            file: file.as_ref().display().to_string(),
            record,
            field: field.to_string(),
            msg: msg.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
