use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::HardPool;
use crate::error::{Error, Result};

/// Dataset indices grouped by person id, ids in ascending order.
#[derive(Clone, Debug)]
pub struct IdIndex {
    ids: Vec<u32>,
    members: BTreeMap<u32, Vec<usize>>,
}

impl IdIndex {
    pub fn new(labels: &[u32]) -> Self {
        let mut members: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, &pid) in labels.iter().enumerate() {
            members.entry(pid).or_default().push(i);
        }
        IdIndex {
            ids: members.keys().copied().collect(),
            members,
        }
    }

    pub fn num_ids(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn members(&self, pid: u32) -> &[usize] {
        self.members.get(&pid).map_or(&[], Vec::as_slice)
    }
}

/// `P` identities × `K` instances, grouped by identity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PkBatch {
    /// Dataset indices, `K` consecutive entries per identity.
    pub indices: Vec<usize>,
    pub person_ids: Vec<u32>,
    /// Whether each slot was filled from the hard pool.
    pub from_pool: Vec<bool>,
    pub ids_per_batch: usize,
    pub instances_per_id: usize,
}

impl PkBatch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Uniform PK batch: `p` ids without replacement, `k` instances each, drawn
/// with replacement only for ids holding fewer than `k` instances.
pub fn pk_sample(index: &IdIndex, p: usize, k: usize, seed: u64) -> Result<PkBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pk_sample_hard_with_rng(index, &HardPool::new(0), p, k, 0.0, &mut rng)
}

pub fn pk_sample_hard(
    index: &IdIndex,
    pool: &HardPool,
    p: usize,
    k: usize,
    mix_ratio: f32,
    seed: u64,
) -> Result<PkBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pk_sample_hard_with_rng(index, pool, p, k, mix_ratio, &mut rng)
}

/// PK batch that draws `⌈mix_ratio·k⌉` instances per id from the hard pool
/// when that id has pooled samples, and the rest uniformly from the id's
/// remaining instances. With an empty pool this consumes the generator
/// exactly as [`pk_sample`] does.
pub fn pk_sample_hard_with_rng<R: Rng + ?Sized>(
    index: &IdIndex,
    pool: &HardPool,
    p: usize,
    k: usize,
    mix_ratio: f32,
    rng: &mut R,
) -> Result<PkBatch> {
    if p == 0 || k == 0 {
        return Err(Error::InvalidArgument("P and K must be positive".into()));
    }
    if !(0.0..=1.0).contains(&mix_ratio) {
        return Err(Error::InvalidArgument(format!("mix ratio {mix_ratio}")));
    }
    if index.num_ids() < p {
        return Err(Error::InvalidArgument(format!(
            "{} identities available, {p} requested",
            index.num_ids()
        )));
    }
    let from_pool_target = ((mix_ratio * k as f32).ceil() as usize).min(k);

    let mut batch = PkBatch {
        indices: Vec::with_capacity(p * k),
        person_ids: Vec::with_capacity(p * k),
        from_pool: Vec::with_capacity(p * k),
        ids_per_batch: p,
        instances_per_id: k,
    };
    for id_slot in sample(rng, index.num_ids(), p) {
        let pid = index.ids[id_slot];
        let members = index.members(pid);
        let pooled = pool.entries(pid);

        let mut chosen: Vec<usize> = Vec::with_capacity(k);
        if !pooled.is_empty() && from_pool_target > 0 {
            let take = from_pool_target.min(pooled.len());
            for i in sample(rng, pooled.len(), take) {
                chosen.push(pooled[i].index);
            }
        }
        let n_pooled = chosen.len();
        let rest = k - n_pooled;
        let candidates: Vec<usize> = members
            .iter()
            .copied()
            .filter(|m| !chosen.contains(m))
            .collect();
        if candidates.len() >= rest {
            for i in sample(rng, candidates.len(), rest) {
                chosen.push(candidates[i]);
            }
        } else {
            let source = if candidates.is_empty() {
                members
            } else {
                &candidates
            };
            for _ in 0..rest {
                chosen.push(source[rng.random_range(0..source.len())]);
            }
        }

        for (slot, idx) in chosen.into_iter().enumerate() {
            batch.indices.push(idx);
            batch.person_ids.push(pid);
            batch.from_pool.push(slot < n_pooled);
        }
    }
    Ok(batch)
}
