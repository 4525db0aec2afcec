use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("label {label} out of range for {n_classes} classes (row {row})")]
    InvalidLabel {
        row: usize,
        label: usize,
        n_classes: usize,
    },

    #[error("weight rows {i1} and {i2} are identical")]
    DegenerateBoundary { i1: usize, i2: usize },

    #[error("invalid {field}: {reason}")]
    Config { field: &'static str, reason: String },

    #[error("{0}")]
    Empty(&'static str),

    #[error("{path}: bad IDX magic {found:#010x}, expected {expected:#010x}")]
    IdxMagic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("{path}: truncated IDX file ({detail})")]
    IdxTruncated { path: PathBuf, detail: String },

    #[error("IDX image count {images} does not match label count {labels}")]
    IdxCountMismatch { images: usize, labels: usize },

    #[error("{path}:{line}: {reason}")]
    Csv {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{path}:{line}: malformed checkpoint: {reason}")]
    Checkpoint {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Config {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used by the CLI for its one-line
    /// diagnostics and exit codes.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::NonFinite(_) => "non_finite",
            Error::InvalidLabel { .. } => "invalid_label",
            Error::DegenerateBoundary { .. } => "degenerate_boundary",
            Error::Config { .. } => "config",
            Error::Empty(_) => "empty",
            Error::IdxMagic { .. } => "idx_magic",
            Error::IdxTruncated { .. } => "idx_truncated",
            Error::IdxCountMismatch { .. } => "idx_count_mismatch",
            Error::Csv { .. } => "csv",
            Error::Checkpoint { .. } => "checkpoint",
            Error::Io { .. } => "io",
            Error::Step { source, .. } => source.kind(),
        }
    }
}
