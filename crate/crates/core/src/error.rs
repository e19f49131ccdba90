use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {0} has (near-)zero L2 norm and cannot be normalized")]
    ZeroVectorRow(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("model mismatch: {left} vs {right}")]
    ModelMismatch { left: String, right: String },

    #[error("score {value} at position {index} lies outside [-1, 1]")]
    ValueOutOfRange { index: usize, value: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate configuration: {n_rows} rows x (1 - {filter_ratio}) / {n_chunks} chunks yields zero draws")]
    DegenerateConfig {
        n_rows: usize,
        filter_ratio: f64,
        n_chunks: usize,
    },

    #[error("cannot draw {k} distinct items from {n}")]
    KTooLarge { k: usize, n: usize },

    #[error("model {model_id} is registered with dim {expected}, got {actual}")]
    DimMismatch {
        model_id: String,
        expected: usize,
        actual: usize,
    },

    #[error("vector for model {model_id} is not unit norm (norm = {norm})")]
    NotUnitNorm { model_id: String, norm: f64 },

    #[error("conflicting vector already stored for model {model_id}, key {key}")]
    ConflictingVector { model_id: String, key: String },

    #[error("corrupt shard {path}: {reason}")]
    CorruptShard { path: PathBuf, reason: String },

    #[error("unreadable file {path}: {reason}")]
    UnreadableFile { path: PathBuf, reason: String },

    #[error("{path}:{line}: invalid UTF-8")]
    EncodingError { path: PathBuf, line: usize },

    #[error("no embedding for pair {pair_id} under model {model_id}")]
    MissingEmbedding { pair_id: u64, model_id: String },

    #[error("unknown pair id {0}")]
    UnknownId(u64),

    #[error("no noise label for selected pair {0}")]
    MissingLabel(u64),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}
