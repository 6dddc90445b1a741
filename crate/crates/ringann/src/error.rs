use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] ringann_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed vector file.
    #[error("{path}: byte offset {offset}: {reason}")]
    Format {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("index file: unsupported format version {found} (this build reads {supported})")]
    Version { found: u32, supported: u32 },

    #[error("index file: checksum mismatch in {section} (stored {stored:08x}, computed {computed:08x})")]
    Checksum {
        section: String,
        stored: u32,
        computed: u32,
    },

    #[error("index file truncated: need {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: u64,
        needed: u64,
        available: u64,
    },

    #[error("index file: {0}")]
    Corrupt(String),

    #[error("config: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("worker: {0}")]
    Worker(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Short machine-readable category for CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Core(e) => match e {
                ringann_core::Error::DimensionMismatch { .. } => "dimension",
                ringann_core::Error::InvalidParam { .. } | ringann_core::Error::KOutOfRange { .. } => "param",
                ringann_core::Error::InvalidDataset(_) | ringann_core::Error::NonFinite { .. } => "data",
                _ => "index",
            },
            Self::Io { .. } => "io",
            Self::Format { .. } => "format",
            Self::Version { .. } => "version",
            Self::Checksum { .. } => "checksum",
            Self::Truncated { .. } => "truncated",
            Self::Corrupt(_) => "corrupt",
            Self::Config { .. } => "config",
            Self::Worker(_) => "worker",
            Self::Json(_) => "json",
            Self::Csv(_) => "csv",
        }
    }
}
