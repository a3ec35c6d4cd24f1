//! Multi-starting progressive conditional message passing for inductive
//! knowledge-graph link prediction.
//!
//! Pipeline per query `(u, q, ?)`:
//! a full-propagation pre-embedding scores every entity, the top-`n` become
//! starting entities, a highway layer seeds them with query-conditioned
//! shortcut messages from `u`, and `L2` attention-weighted layers propagate
//! outward from all of them at once before a decoder scores every candidate.

pub mod conditioning;
pub mod config;
pub mod evaluator;
pub mod highway;
pub mod kg;
pub mod model;
pub mod numerics;
pub mod objective;
pub mod pre_embed;
pub mod propagation;
pub mod selection;
pub mod trainer;

use thiserror::Error;

pub use config::{Ablations, ConfigError, ModelConfig, SelectionMode};
pub use kg::{InductiveDataset, KgError, KnowledgeGraph, Triple};
pub use model::MStar;
pub use numerics::NumericsError;

#[derive(Debug, Error)]
pub enum MstarError {
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("no rank records to summarize")]
    EmptyRecords,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("relation vocabulary mismatch: model has {model} relations, graph has {graph}")]
    VocabularyMismatch { model: usize, graph: usize },
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}
