use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong inside the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("parameter #{0} has no gradient; run backward before stepping")]
    MissingGrad(usize),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("not a checkpoint: bad magic bytes")]
    NotCheckpoint,

    #[error("unsupported checkpoint version {found} (this build reads version {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("unexpected end of file while reading {0}")]
    UnexpectedEof(String),

    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),

    #[error("malformed CIFAR binary: {len} bytes is not a multiple of 3073")]
    MalformedCifar { len: usize },

    #[error("malformed CIFAR binary: record {record} has label {label}, expected 0..10")]
    CifarLabel { record: usize, label: u8 },

    #[error("malformed feature dump: {0}")]
    MalformedFeatures(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f32 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }
}
