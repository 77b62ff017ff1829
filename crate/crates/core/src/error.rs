use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mask has no foreground voxels")]
    EmptyMask,
    #[error("bad sample count {count} for {available} points")]
    BadCount { count: usize, available: usize },
    #[error("bad neighbor count {k} for {available} reference points")]
    BadK { k: usize, available: usize },
    #[error("dilated centerline of branch `{0}` is empty")]
    EmptyBranch(String),
    #[error("point cloud lacks {0} needed to rebuild a voxel mask")]
    MissingProvenance(&'static str),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("batch normalization in training mode needs at least 2 rows, got {0}")]
    DegenerateBatch(usize),
    #[error("target class {target} out of range for {classes} classes")]
    BadTarget { target: usize, classes: usize },
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("neighbor index {index} out of range for {count} points")]
    BadNeighborIndex { index: usize, count: usize },
    #[error("bad downsampling rate {rate} for {count} points")]
    BadRate { rate: usize, count: usize },
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {value}")]
    NonFiniteLoss { epoch: usize, batch: usize, value: f64 },
    #[error("non-finite values produced by {0}")]
    NonFinite(&'static str),
    #[error("gradient check failed: {0}")]
    GradCheck(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Process exit code for the CLI: 2 for data or parse problems, 3 for
    /// numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFiniteLoss { .. } | Error::NonFinite(_) | Error::GradCheck(_) => 3,
            _ => 2,
        }
    }
}
