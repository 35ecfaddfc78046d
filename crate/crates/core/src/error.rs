use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid class table: {0}")]
    ClassTable(String),

    #[error("class id {id} is not allowed here: {reason}")]
    ClassId { id: u8, reason: String },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("no class has a nonzero denominator")]
    NoScoredClasses,

    #[error("empty input: {0}")]
    Empty(String),

    #[error("missing label at sequence {sequence}, frame {frame}")]
    MissingLabel { sequence: usize, frame: usize },

    #[error("unmapped label color ({r}, {g}, {b}) at pixel (row {row}, col {col}) in {path}")]
    UnmappedColor {
        r: u8,
        g: u8,
        b: u8,
        row: usize,
        col: usize,
        path: PathBuf,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

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

    /// Process exit code for the CLI: 2 for data errors, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite(_) | Error::NoScoredClasses => 3,
            _ => 2,
        }
    }
}
