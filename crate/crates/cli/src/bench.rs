use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reid_core::io::config_hash;
use reid_core::retrieval::distmat;
use reid_core::{Error, Precision, Result, Tensor};
use serde::{Deserialize, Serialize};

use crate::args::BenchArgs;
use crate::config::hex;
use crate::write_json;

pub const MIN_REPEATS: usize = 3;

const NOTE: &str = "binary16 is emulated in software on binary32 hardware, so it is not \
expected to run faster; the comparison shows storage and the emulation overhead";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeTiming {
    pub precision: Precision,
    pub samples_ms: Vec<f64>,
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    /// `max - min`.
    pub spread_ms: f64,
    /// Bytes needed to store the query and gallery vectors.
    pub storage_bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config_hash: String,
    pub dim: usize,
    pub queries: usize,
    pub gallery: usize,
    pub repeats: usize,
    /// Whether the symmetry gate ran (gallery equal to the queries).
    pub symmetry_checked: bool,
    pub modes: Vec<ModeTiming>,
    /// Binary32 storage over binary16 storage.
    pub storage_ratio: f64,
    pub note: String,
}

#[derive(Serialize)]
struct BenchSettings {
    dim: usize,
    queries: usize,
    gallery: usize,
    repeats: usize,
    seed: u64,
    same: bool,
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Result<Tensor> {
    let data = (0..rows * dim)
        .map(|_| rng.random_range(-1.0f32..1.0))
        .collect();
    Tensor::from_vec(vec![rows, dim], data)
}

/// Refuses to time a self-distance matrix that is not symmetric with a zero diagonal.
fn symmetry_gate(q: &Tensor, mode: Precision) -> Result<()> {
    let d = distmat(q, q, mode)?;
    let n = q.shape()[0];
    let v = d.data();
    for i in 0..n {
        if v[i * n + i] != 0.0 {
            return Err(Error::InvalidArgument(format!(
                "{} self-distance {i} is {}",
                mode.as_str(),
                v[i * n + i]
            )));
        }
        for j in 0..i {
            if v[i * n + j].to_bits() != v[j * n + i].to_bits() {
                return Err(Error::InvalidArgument(format!(
                    "{} distances ({i}, {j}) and ({j}, {i}) differ",
                    mode.as_str()
                )));
            }
        }
    }
    Ok(())
}

fn summarize(precision: Precision, samples: Vec<f64>, storage_bytes: u64) -> ModeTiming {
    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    ModeTiming {
        precision,
        median_ms: median,
        min_ms: sorted[0],
        max_ms: sorted[n - 1],
        spread_ms: sorted[n - 1] - sorted[0],
        samples_ms: samples,
        storage_bytes,
    }
}

pub fn bench(a: &BenchArgs) -> Result<BenchReport> {
    if a.repeats < MIN_REPEATS {
        return Err(Error::InvalidArgument(format!(
            "at least {MIN_REPEATS} repeats are needed, got {}",
            a.repeats
        )));
    }
    if a.dim == 0 || a.queries == 0 || (a.gallery == 0 && !a.same) {
        return Err(Error::InvalidArgument(
            "dimension, query and gallery counts must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let q = random_matrix(&mut rng, a.queries, a.dim)?;
    let g = if a.same {
        q.clone()
    } else {
        random_matrix(&mut rng, a.gallery, a.dim)?
    };
    let gallery = g.shape()[0];
    let modes = [Precision::Binary32, Precision::Binary16];
    if a.same {
        for mode in modes {
            symmetry_gate(&q, mode)?;
        }
    }
    let elements = ((a.queries + gallery) * a.dim) as u64;
    let mut timings = Vec::new();
    for mode in modes {
        // one untimed warm-up run
        black_box(distmat(&q, &g, mode)?);
        let mut samples = Vec::with_capacity(a.repeats);
        for _ in 0..a.repeats {
            let start = Instant::now();
            black_box(distmat(black_box(&q), black_box(&g), mode)?);
            samples.push(start.elapsed().as_secs_f64() * 1e3);
        }
        timings.push(summarize(
            mode,
            samples,
            elements * mode.bytes_per_element() as u64,
        ));
    }
    let settings = BenchSettings {
        dim: a.dim,
        queries: a.queries,
        gallery,
        repeats: a.repeats,
        seed: a.seed,
        same: a.same,
    };
    let report = BenchReport {
        config_hash: hex(config_hash(&settings)),
        dim: a.dim,
        queries: a.queries,
        gallery,
        repeats: a.repeats,
        symmetry_checked: a.same,
        storage_ratio: timings[0].storage_bytes as f64 / timings[1].storage_bytes as f64,
        modes: timings,
        note: NOTE.into(),
    };
    if let Some(path) = &a.json {
        write_json(path, &report)?;
    }
    Ok(report)
}
