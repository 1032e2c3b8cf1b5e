use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // ingestion
    #[error("line {line}: unknown type `{name}`")]
    UnknownType { line: usize, name: String },
    #[error("line {line}: edge endpoint {ty}:{id} does not exist")]
    DanglingEdge { line: usize, ty: String, id: usize },
    #[error("line {line}: duplicate node id {ty}:{id}")]
    DuplicateNodeId { line: usize, ty: String, id: usize },
    #[error("line {line}: {msg}")]
    BadRecord { line: usize, msg: String },
    #[error("node type `{ty}`: {msg}")]
    Features { ty: String, msg: String },
    #[error("invalid schema: {0}")]
    Schema(String),

    // graph queries
    #[error("type mismatch: expected node type {expected}, got {got}")]
    TypeMismatch { expected: String, got: String },
    #[error("unknown relation: {0}")]
    UnknownRelation(String),

    // sampler
    #[error("node {ty}:{id} has no timestamp")]
    MissingTimestamp { ty: String, id: usize },
    #[error("seed set is empty")]
    EmptySeedSet,
    #[error("budget is empty")]
    EmptyBudget,

    // tensors / model
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("softmax group {0} is empty")]
    EmptyGroup(usize),
    #[error("target has no neighbors")]
    NoNeighbors,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("ranking has no positive item")]
    NoPositive,
    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),
    #[error("epoch {epoch} outside [0, {total}]")]
    EpochOutOfRange { epoch: usize, total: usize },
    #[error("non-finite loss in batch {batch}")]
    NonFiniteLoss { batch: usize },
    #[error("schema mismatch: checkpoint {expected}, graph {got}")]
    SchemaMismatch { expected: String, got: String },

    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 config error, 3 data error, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) | Error::EpochOutOfRange { .. } => 2,
            Error::NonFiniteLoss { .. } | Error::MissingGradient(_) => 4,
            _ => 3,
        }
    }
}
