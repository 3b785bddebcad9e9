//! Query-vs-gallery retrieval evaluation.

mod distance;
mod metrics;
mod rerank;
mod set;

pub use distance::distmat;
pub use metrics::{cmc, evaluate, mean_ap, ranked_match_positions, EvalReport, Variant};
pub use rerank::{k_reciprocal_rerank, RerankParams};
pub use set::{EmbeddingSet, Meta, Record, Role};
