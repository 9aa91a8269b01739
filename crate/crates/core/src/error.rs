use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: String,
        column: usize,
        message: String,
    },

    #[error("duplicate series id {0:?}")]
    DuplicateId(String),

    #[error("unknown category {0:?}")]
    UnknownCategory(String),

    #[error("unknown frequency {0:?}")]
    UnknownFrequency(String),

    #[error("series {id:?} has non-positive value {value} at index {index}")]
    NonPositive { id: String, index: usize, value: f64 },

    #[error("insufficient length for {context}: need at least {needed}, got {got}")]
    InsufficientLength {
        context: String,
        needed: usize,
        got: usize,
    },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    #[error("mean over an all-zero mask is undefined")]
    EmptyMask,

    #[error("MASE undefined: in-sample seasonal differences are all zero")]
    UndefinedMase,

    #[error("backward requires a 1x1 loss, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },

    #[error("batched/looped equivalence failed: batched loss {batched}, looped loss {looped}")]
    Equivalence { batched: f64, looped: f64 },

    #[error("unknown series ids: {}", .0.join(", "))]
    UnknownIds(Vec<String>),

    #[error("checkpoint incompatible: {0}")]
    CheckpointIncompatible(String),

    #[error("no series after filtering")]
    NoSeries,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
