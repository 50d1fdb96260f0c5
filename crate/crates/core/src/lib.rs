//! Cross-modal embedding alignment.
//!
//! Embeddings from two text modalities (code and pseudocode, English and
//! French, ...) live in unrelated spaces. A small ReLU MLP trained with an
//! in-batch N-pairs hinge loss maps modality-B vectors into modality-A
//! space so nearest-neighbor search works across the two. The crate also
//! carries a BM25 lexical baseline and the evaluation harness (top-1
//! metrics, latency/throughput, F1–throughput harmonic mean).

pub mod bm25;
pub mod error;
pub mod eval;
pub mod loss;
pub mod optim;
#[cfg(any(test, feature = "oracles"))]
pub mod oracle;
pub mod pipeline;
pub mod projection;
pub mod retrieval;
pub mod store;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use projection::{
    init_params, load_params, save_params, ForwardTrace, ParamGrads, ProjectionParams,
};
pub use retrieval::{build_index, project_and_query, Hit, Metric, RetrievalIndex, RetrievalResult};
pub use store::{load_embeddings, save_embeddings, EmbeddingSet, PairDataset, PairExample};
pub use synth::{generate_synthetic, SyntheticTask};
pub use train::{train, TrainConfig, TrainReport};
