use serde::{Deserialize, Serialize};

use super::distmat;
use crate::error::{Error, Result};
use crate::tensor::{Precision, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RerankParams {
    /// Neighbourhood size of the k-reciprocal sets.
    pub k1: usize,
    /// Neighbourhood size of the local query expansion.
    pub k2: usize,
    /// Weight of the original distance in the final blend.
    pub lambda: f32,
}

impl Default for RerankParams {
    fn default() -> Self {
        RerankParams {
            k1: 20,
            k2: 6,
            lambda: 0.3,
        }
    }
}

impl RerankParams {
    pub fn validate(&self, population: usize) -> Result<()> {
        if self.k2 == 0 || self.k1 < self.k2 {
            return Err(Error::InvalidArgument(format!(
                "re-ranking needs k1 >= k2 >= 1, got k1 = {} k2 = {}",
                self.k1, self.k2
            )));
        }
        if self.k1 > population {
            return Err(Error::InvalidArgument(format!(
                "k1 = {} exceeds the {population} queries and gallery entries",
                self.k1
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidArgument(format!("lambda {}", self.lambda)));
        }
        Ok(())
    }
}

/// Neighbour lists: row `i` holds every index sorted by ascending distance from `i`,
/// ties by index.
fn rank_rows(dist: &[f32], n: usize) -> Vec<Vec<usize>> {
    (0..n)
        .map(|i| {
            let row = &dist[i * n..(i + 1) * n];
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
            order
        })
        .collect()
}

/// Members of the first `k + 1` neighbours of `i` that also have `i` among
/// their own first `k + 1` neighbours.
fn reciprocal_set(ranks: &[Vec<usize>], i: usize, k: usize) -> Vec<usize> {
    let reach = (k + 1).min(ranks.len());
    ranks[i][..reach]
        .iter()
        .copied()
        .filter(|&c| ranks[c][..reach].contains(&i))
        .collect()
}

/// k-reciprocal re-ranking of query/gallery distances.
///
/// Neighbour structure is built on squared distances over the joint
/// query+gallery population, each row scaled by its maximum. The returned
/// `Q × G` matrix is `(1 − λ)·d_J + λ·d`, where `d_J` is the Jaccard distance
/// between the expanded reciprocal-neighbour encodings and `d` is the plain
/// Euclidean query-gallery distance, so `λ = 1` returns `d` unchanged.
pub fn k_reciprocal_rerank(
    queries: &Tensor,
    gallery: &Tensor,
    params: RerankParams,
) -> Result<Tensor> {
    let original = distmat(queries, gallery, Precision::Binary32)?;
    let (nq, dim) = queries.dims2()?;
    let ng = gallery.shape()[0];
    let n = nq + ng;
    params.validate(n)?;

    // joint population, queries first
    let mut all = Vec::with_capacity(n * dim);
    all.extend_from_slice(queries.data());
    all.extend_from_slice(gallery.data());
    let mut dist = vec![0.0f32; n * n];
    for i in 0..n {
        let a = &all[i * dim..(i + 1) * dim];
        for j in 0..n {
            let b = &all[j * dim..(j + 1) * dim];
            dist[i * n + j] = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        }
    }
    for i in 0..n {
        let row = &mut dist[i * n..(i + 1) * n];
        let max = row.iter().copied().fold(0.0f32, f32::max);
        if max > 0.0 {
            for v in row.iter_mut() {
                *v /= max;
            }
        }
    }
    let ranks = rank_rows(&dist, n);

    // sparse encodings: (index, weight) sorted by index
    let half_k1 = (params.k1 as f64 / 2.0).round() as usize;
    let mut encodings: Vec<Vec<(usize, f32)>> = Vec::with_capacity(n);
    for i in 0..n {
        let base = reciprocal_set(&ranks, i, params.k1);
        let mut expanded = base.clone();
        for &c in &base {
            let cand = reciprocal_set(&ranks, c, half_k1);
            let shared = cand.iter().filter(|x| base.contains(x)).count();
            if 3 * shared > 2 * cand.len() {
                expanded.extend_from_slice(&cand);
            }
        }
        expanded.sort_unstable();
        expanded.dedup();
        let weights: Vec<f32> = expanded.iter().map(|&j| (-dist[i * n + j]).exp()).collect();
        let total: f32 = weights.iter().sum();
        encodings.push(
            expanded
                .into_iter()
                .zip(weights.into_iter().map(|w| w / total))
                .collect(),
        );
    }

    // local query expansion: average the encodings of the k2 nearest neighbours
    if params.k2 > 1 {
        let mut dense = vec![0.0f32; n];
        let expanded: Vec<Vec<(usize, f32)>> = (0..n)
            .map(|i| {
                dense.iter_mut().for_each(|v| *v = 0.0);
                let neigh = &ranks[i][..params.k2.min(n)];
                for &j in neigh {
                    for &(idx, w) in &encodings[j] {
                        dense[idx] += w;
                    }
                }
                let scale = neigh.len() as f32;
                dense
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(idx, &v)| (idx, v / scale))
                    .collect()
            })
            .collect();
        encodings = expanded;
    }

    // inverted index over gallery rows: column -> [(gallery row, weight)]
    let mut inverted: Vec<Vec<(usize, f32)>> = vec![Vec::new(); n];
    for (j, enc) in encodings.iter().enumerate().skip(nq) {
        for &(idx, w) in enc {
            inverted[idx].push((j - nq, w));
        }
    }

    let lambda = params.lambda;
    let mut out = vec![0.0f32; nq * ng];
    let mut overlap = vec![0.0f32; ng];
    for i in 0..nq {
        overlap.iter_mut().for_each(|v| *v = 0.0);
        for &(idx, w) in &encodings[i] {
            for &(g, wg) in &inverted[idx] {
                overlap[g] += w.min(wg);
            }
        }
        for g in 0..ng {
            let jaccard = 1.0 - overlap[g] / (2.0 - overlap[g]);
            out[i * ng + g] = (1.0 - lambda) * jaccard + lambda * original.data()[i * ng + g];
        }
    }
    Tensor::from_vec(vec![nq, ng], out)
}
