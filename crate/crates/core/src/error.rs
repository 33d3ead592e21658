use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),

    #[error("payload length mismatch: expected {expected} bytes, found {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("relative volume undefined: {0}")]
    DivisionUndefined(String),

    #[error("cannot extract a surface from an empty component")]
    EmptyMesh,

    #[error("degenerate hull: input points are coplanar or collinear")]
    DegenerateHull,

    #[error("tensor shape error: {0}")]
    Shape(String),

    #[error("template error: {0}")]
    Template(String),

    #[error("template bank cannot satisfy the sampling protocol: {0}")]
    BankCapacity(String),

    #[error("training diverged: {0}")]
    Training(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Path {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn path(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Path {
            path: path.into(),
            source,
        }
    }
}
