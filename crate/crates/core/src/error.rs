use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box ({x_min}, {y_min}, {x_max}, {y_max}): min must be below max")]
    InvalidBox {
        x_min: i64,
        y_min: i64,
        x_max: i64,
        y_max: i64,
    },

    #[error("no candidates")]
    NoCandidates,

    #[error("no representation")]
    NoRepresentation,

    #[error("no records")]
    NoRecords,

    #[error("no entries")]
    NoEntries,

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: expected {expected} components, found {found}")]
    DimensionMismatch { line: usize, expected: usize, found: usize },

    #[error("image {image_id}: {path}: {message}")]
    Schema {
        image_id: String,
        path: String,
        message: String,
    },

    #[error("unknown detector `{0}`")]
    UnknownDetector(String),

    #[error("unknown category `{0}`")]
    UnknownCategory(String),

    #[error("{0}")]
    Invalid(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
