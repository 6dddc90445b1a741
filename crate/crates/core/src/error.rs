use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("k = {k} out of range for {available} entries")]
    KOutOfRange { k: usize, available: usize },

    #[error("local id {id} out of range for {len} nodes")]
    InvalidNode { id: u32, len: usize },

    #[error("empty graph")]
    EmptyGraph,

    #[error("missing {0}")]
    Missing(&'static str),

    #[error("shard mismatch: {0}")]
    ShardMismatch(String),

    #[error("visit logging was disabled for this run")]
    LoggingDisabled,
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParam {
        name,
        reason: reason.into(),
    }
}
