use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Precision, Tensor};

/// Distance inside the hinge. `Squared` follows the triplet formula literally.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistanceKind {
    #[default]
    Squared,
    Euclidean,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnchorTerm {
    /// Farthest same-id sample.
    pub positive: usize,
    /// Nearest different-id sample.
    pub negative: usize,
    pub hinge: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TripletLossOut {
    /// Mean of the per-anchor hinges.
    pub loss: f32,
    pub per_anchor: Vec<AnchorTerm>,
}

/// Row-major `n × n` matrix of squared Euclidean distances.
pub fn pairwise_sq_distances(x: &[f32], n: usize, dim: usize) -> Vec<f32> {
    let mut d = vec![0.0f32; n * n];
    for i in 0..n {
        let a = &x[i * dim..(i + 1) * dim];
        for j in i + 1..n {
            let b = &x[j * dim..(j + 1) * dim];
            let s: f32 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
            d[i * n + j] = s;
            d[j * n + i] = s;
        }
    }
    d
}

fn embedding_rows(emb: &Tensor, labels: &[u32]) -> Result<(Tensor, usize, usize)> {
    let (n, dim) = emb.dims2()?;
    if n != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{n} embeddings but {} labels",
            labels.len()
        )));
    }
    if dim == 0 || n == 0 {
        return Err(Error::InvalidArgument("empty embedding batch".into()));
    }
    if !emb.all_finite() {
        return Err(Error::NonFinite("triplet loss input".into()));
    }
    // the loss is always evaluated in binary32
    Ok((emb.to_mode(Precision::Binary32), n, dim))
}

pub fn batch_hard_triplet_loss(
    emb: &Tensor,
    labels: &[u32],
    margin: f32,
) -> Result<TripletLossOut> {
    batch_hard_triplet_loss_with(emb, labels, margin, DistanceKind::Squared)
}

/// Batch-hard triplet loss: every sample anchors once against its farthest
/// positive and nearest negative; `hinge = max(0, margin + d(a,p) − d(a,n))`.
/// Distance ties resolve to the lower batch index.
pub fn batch_hard_triplet_loss_with(
    emb: &Tensor,
    labels: &[u32],
    margin: f32,
    kind: DistanceKind,
) -> Result<TripletLossOut> {
    let (emb, n, dim) = embedding_rows(emb, labels)?;
    let sq = pairwise_sq_distances(emb.data(), n, dim);
    let dist = |i: usize, j: usize| match kind {
        DistanceKind::Squared => sq[i * n + j],
        DistanceKind::Euclidean => sq[i * n + j].sqrt(),
    };

    let mut per_anchor = Vec::with_capacity(n);
    for a in 0..n {
        let mut pos: Option<(usize, f32)> = None;
        let mut neg: Option<(usize, f32)> = None;
        for j in 0..n {
            if j == a {
                continue;
            }
            let d = dist(a, j);
            if labels[j] == labels[a] {
                if pos.is_none_or(|(_, best)| d > best) {
                    pos = Some((j, d));
                }
            } else if neg.is_none_or(|(_, best)| d < best) {
                neg = Some((j, d));
            }
        }
        let (positive, dp) = pos.ok_or_else(|| {
            Error::InvalidArgument(format!("label {} has a single instance", labels[a]))
        })?;
        let (negative, dn) = neg.ok_or_else(|| {
            Error::InvalidArgument("batch holds a single identity; no negatives".into())
        })?;
        per_anchor.push(AnchorTerm {
            positive,
            negative,
            hinge: (margin + dp - dn).max(0.0),
        });
    }
    let total: f32 = per_anchor.iter().map(|t| t.hinge).sum();
    Ok(TripletLossOut {
        loss: total / n as f32,
        per_anchor,
    })
}

/// Gradient of the mean hinge with respect to the embeddings, with the mined
/// triplets held fixed. Returned in binary32.
pub fn triplet_loss_backward(
    emb: &Tensor,
    out: &TripletLossOut,
    kind: DistanceKind,
) -> Result<Tensor> {
    let (n, dim) = emb.dims2()?;
    if out.per_anchor.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} anchor terms for {n} embeddings",
            out.per_anchor.len()
        )));
    }
    let x = emb.to_mode(Precision::Binary32);
    let x = x.data();
    let inv_n = 1.0 / n as f32;
    let mut grad = vec![0.0f32; n * dim];

    // d/da of dist(a, b) is coef * (a - b)
    let coef = |a: usize, b: usize| -> f32 {
        match kind {
            DistanceKind::Squared => 2.0,
            DistanceKind::Euclidean => {
                let d: f32 = (0..dim)
                    .map(|k| (x[a * dim + k] - x[b * dim + k]).powi(2))
                    .sum::<f32>()
                    .sqrt();
                if d > 0.0 {
                    1.0 / d
                } else {
                    0.0
                }
            }
        }
    };

    for (a, term) in out.per_anchor.iter().enumerate() {
        if term.hinge <= 0.0 {
            continue;
        }
        let (p, ng) = (term.positive, term.negative);
        let cp = coef(a, p) * inv_n;
        let cn = coef(a, ng) * inv_n;
        for k in 0..dim {
            let dap = x[a * dim + k] - x[p * dim + k];
            let dan = x[a * dim + k] - x[ng * dim + k];
            grad[a * dim + k] += cp * dap - cn * dan;
            grad[p * dim + k] -= cp * dap;
            grad[ng * dim + k] += cn * dan;
        }
    }
    Tensor::from_vec(vec![n, dim], grad)
}
