//! Commonsense knowledge-graph reasoning by selection.
//!
//! Text encoders (CNN, BiLSTM) turn entity and relation phrases into
//! embeddings, KGE scorers (TransE, TuckER) score candidate tuples, and a
//! filtered-ranking harness reports MR / MRR / Hits@k. The crate also ships
//! dataset statistics and an auditor for generation-model outputs.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod gen_analysis;
pub mod model;
pub mod params;
pub mod scoring;
pub mod training;

pub use data::{
    build_dataset, compute_stats, load_dataset_dir, load_tuples, normalize_text, word_coverage, Dataset, DatasetStats,
    EntityId, IdTuple, RawTuple, RelationId, Split, TupleFormat, Vocabulary, WordId,
};
pub use error::{Error, Result};
pub use model::{EncoderKind, Model, ModelConfig, ScorerKind};
pub use scoring::{score_transe, score_tucker, Norm, ScoreVector, TuckerCore};
