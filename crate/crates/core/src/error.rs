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

    #[error("bad magic {found:?}, expected \"TEN1\"")]
    BadMagic { found: [u8; 4] },

    #[error("truncated tensor file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("tensor dimensions overflow: {0:?}")]
    DimOverflow(Vec<u64>),

    #[error("tensor file has {0} trailing bytes")]
    TrailingBytes(usize),

    #[error("manifest {path}, row {row}: {message}")]
    Manifest {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("undefined result: generalisation gap is zero (acc_train == acc_test)")]
    ZeroGap,

    #[error("empty input: {0}")]
    Empty(String),

    #[error("logs are not paired: {0}")]
    Unpaired(String),

    #[error("unknown sample id {0:?}")]
    UnknownId(String),

    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),

    #[error("{path}, line {line}: {message}")]
    LogParse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("provider transport failure: {0}")]
    Transport(String),

    #[error("provider schema violation: {0}")]
    Schema(String),

    #[error("provider failure: {0}")]
    Provider(String),

    #[error("training diverged at epoch {epoch} (loss is not finite)")]
    Diverged { epoch: usize },

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

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
