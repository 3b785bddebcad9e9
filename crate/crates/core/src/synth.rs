//! Seeded synthetic identity data standing in for re-identification datasets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::NetworkSpec;
use crate::retrieval::{EmbeddingSet, Record, Role};
use crate::tensor::Precision;
use crate::trainer::{TrainConfig, TrainData};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub ids: usize,
    pub per_id: usize,
    pub dim: usize,
    /// Spread of a record around its identity centre, camera shift included.
    pub noise: f32,
    pub cameras: u16,
    /// Standard deviation of identity centres.
    pub center_scale: f32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            ids: 10,
            per_id: 20,
            dim: 64,
            noise: 0.3,
            cameras: 3,
            center_scale: 1.0,
            seed: 0,
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f32) -> Vec<f32> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z as f32
        })
        .collect()
}

/// Gaussian identity clusters with a per-camera shift.
///
/// Record `r` of an identity is seen by camera `r mod cameras` and equals
/// `centre + noise · (camera_shift + ε)` with unit-variance `camera_shift`
/// and `ε`. The first `⌊per_id / 2⌋` records of each identity are training
/// data; of the rest, camera 0 records are queries and the others gallery.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<EmbeddingSet> {
    if cfg.ids == 0 || cfg.per_id == 0 || cfg.dim == 0 || cfg.cameras == 0 {
        return Err(Error::InvalidArgument(format!(
            "empty synthetic dataset: {cfg:?}"
        )));
    }
    if !(cfg.noise >= 0.0 && cfg.noise.is_finite() && cfg.center_scale.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise {} / centre scale {}",
            cfg.noise, cfg.center_scale
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let shifts: Vec<Vec<f32>> = (0..cfg.cameras)
        .map(|_| gaussian(&mut rng, cfg.dim, 1.0))
        .collect();
    let mut set = EmbeddingSet::new(cfg.dim, Precision::Binary32);
    let train_count = cfg.per_id / 2;
    for id in 0..cfg.ids {
        let centre = gaussian(&mut rng, cfg.dim, cfg.center_scale);
        for r in 0..cfg.per_id {
            let camera = (r % cfg.cameras as usize) as u16;
            let eps = gaussian(&mut rng, cfg.dim, 1.0);
            let vector = (0..cfg.dim)
                .map(|d| centre[d] + cfg.noise * (shifts[camera as usize][d] + eps[d]))
                .collect();
            let role = if r < train_count {
                Role::Train
            } else if camera == 0 {
                Role::Query
            } else {
                Role::Gallery
            };
            set.push(Record {
                person_id: id as u32,
                camera_id: camera,
                role,
                vector,
            })?;
        }
    }
    Ok(set)
}

/// Training rows and labels of `set`.
pub fn train_split(set: &EmbeddingSet) -> TrainData {
    let (inputs, labels) = set
        .records()
        .iter()
        .filter(|r| r.role == Role::Train)
        .map(|r| (r.vector.clone(), r.person_id))
        .unzip();
    TrainData { inputs, labels }
}

/// The seeded 10-identity convergence setup: data, network and schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceFixture {
    pub data: SynthConfig,
    pub network: NetworkSpec,
    pub train: TrainConfig,
    pub init_seed: u64,
    pub sample_seed: u64,
}

/// 64-d inputs viewed as 4×4×4 maps, a 16-wide separable network with a
/// 16-d embedding, and a 30-epoch schedule using every identity per batch.
pub fn convergence_fixture() -> ConvergenceFixture {
    ConvergenceFixture {
        data: SynthConfig {
            noise: 0.4,
            ..SynthConfig::default()
        },
        network: NetworkSpec::separable([4, 4, 4], 16, 16),
        train: TrainConfig {
            batch_size: 40,
            ids_per_batch: 10,
            instances_per_id: 4,
            lr0: 5e-3,
            epochs: 30,
            decay_start: 20,
            decay_floor_factor: 0.1,
            ..TrainConfig::default()
        },
        init_seed: 1,
        sample_seed: 11,
    }
}

/// Seed of the committed re-ranking fixture.
pub const RERANK_FIXTURE_SEED: u64 = 7;

/// Three overlapping clusters, 10 queries (camera 0) and 30 gallery entries
/// (camera 1) each, with 10% of gallery labels moved to another cluster.
pub fn rerank_fixture(seed: u64) -> EmbeddingSet {
    const DIM: usize = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<Vec<f32>> = (0..3).map(|_| gaussian(&mut rng, DIM, 1.0)).collect();
    let mut records = Vec::with_capacity(120);
    for (role, per_cluster, camera) in [(Role::Query, 10, 0u16), (Role::Gallery, 30, 1)] {
        for (c, centre) in centres.iter().enumerate() {
            for _ in 0..per_cluster {
                let eps = gaussian(&mut rng, DIM, 0.6);
                let mut label = c as u32;
                if role == Role::Gallery && rng.random_bool(0.1) {
                    label = (label + rng.random_range(1..3)) % 3;
                }
                records.push(Record {
                    person_id: label,
                    camera_id: camera,
                    role,
                    vector: centre.iter().zip(&eps).map(|(a, b)| a + b).collect(),
                });
            }
        }
    }
    EmbeddingSet::from_records(DIM, Precision::Binary32, records).expect("fixed dimension")
}
