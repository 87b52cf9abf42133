use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error at row {row}: {detail}")]
    Row { row: usize, detail: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("class `{class}` has {count} samples, fewer than the {folds} folds requested")]
    SparseClass {
        class: String,
        count: usize,
        folds: usize,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("unsupported {what} version {found} (this build reads version {supported})")]
    UnsupportedVersion {
        what: &'static str,
        found: u32,
        supported: u32,
    },

    #[error("attribution error: {0}")]
    Attribution(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used by the CLI for one-line errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::NonFinite { .. } => "non_finite",
            Error::Config(_) => "config",
            Error::Row { .. } | Error::Data(_) | Error::Csv(_) => "data",
            Error::UnknownLabel(_) => "label",
            Error::SparseClass { .. } => "sparse_class",
            Error::Checkpoint(_) | Error::UnsupportedVersion { .. } => "checkpoint",
            Error::Attribution(_) => "attribution",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
