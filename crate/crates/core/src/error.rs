use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = AstraError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum AstraError {
    #[error("no records in {0}")]
    NoRecords(PathBuf),

    #[error("record {record}: field `{field}`: {message}")]
    Validation {
        record: String,
        field: String,
        message: String,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dimension mismatch: expected {expected}, found {found} ({context})")]
    DimensionMismatch {
        expected: usize,
        found: usize,
        context: String,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("all tokens out of vocabulary for institution {institution}, axis {axis}")]
    AllOutOfVocabulary { institution: String, axis: String },

    #[error("transport error after {attempts} attempts: {message}")]
    Transport { attempts: usize, message: String },

    #[error("missing stage: {0}")]
    MissingStage(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<AstraError>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),
}

impl AstraError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AstraError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        AstraError::InvalidParameter(msg.into())
    }

    pub(crate) fn in_stage(self, stage: &str) -> Self {
        match self {
            e @ AstraError::Stage { .. } => e,
            e => AstraError::Stage {
                stage: stage.to_string(),
                source: Box::new(e),
            },
        }
    }
}
