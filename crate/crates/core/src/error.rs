use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unknown tuple format `{0}` (expected one of: src-first, rel-first)")]
    UnknownFormat(String),

    #[error("empty training split")]
    EmptyTrainingSplit,

    #[error("empty {0} split")]
    EmptySplit(&'static str),

    #[error("{0}: file is empty")]
    EmptyFile(PathBuf),

    #[error("empty token sequence")]
    EmptySequence,

    #[error("{kind} id {id} out of range (size {size})")]
    IdOutOfRange {
        kind: &'static str,
        id: usize,
        size: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty candidate list")]
    EmptyCandidates,

    #[error("gold entity {0} is not among the candidates")]
    GoldNotCandidate(u32),

    #[error("negative sampling needs at least 2 training entities, got {0}")]
    TooFewEntities(usize),

    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}: {diagnostics}")]
    NonFiniteLoss {
        loss: f64,
        epoch: usize,
        batch: usize,
        diagnostics: String,
    },

    #[error(
        "full-entity BCE needs an estimated {estimated_mb} MiB per batch \
         ({entities} candidate entities), over the {budget_mb} MiB budget; \
         use the sampled-bce objective instead"
    )]
    MemoryBudget {
        estimated_mb: u64,
        budget_mb: u64,
        entities: usize,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("unknown config key `{key}`; valid keys: {valid}")]
    UnknownConfigKey { key: String, valid: String },

    #[error("unknown relation `{relation}`; known relations: {known}")]
    UnknownRelation { relation: String, known: String },

    #[error("vocabulary mismatch: checkpoint hash {checkpoint} != data hash {data}")]
    VocabularyMismatch { checkpoint: String, data: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("no generated records")]
    NoRecords,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
