//! PK batch sampling, batch-hard triplet loss, and the cross-iteration hard-sample pool.

mod loss;
mod pool;
mod sampler;

pub use loss::{
    batch_hard_triplet_loss, batch_hard_triplet_loss_with, pairwise_sq_distances,
    triplet_loss_backward, AnchorTerm, DistanceKind, TripletLossOut,
};
pub use pool::{update_hard_pool, HardPool, PoolEntry};
pub use sampler::{pk_sample, pk_sample_hard, pk_sample_hard_with_rng, IdIndex, PkBatch};
