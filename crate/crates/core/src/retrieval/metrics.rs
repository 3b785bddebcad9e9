use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{distmat, k_reciprocal_rerank, EmbeddingSet, Meta, RerankParams, Role};
use crate::error::{Error, Result};
use crate::tensor::{Precision, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Plain,
    ReRanked,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Plain => "plain",
            Variant::ReRanked => "reranked",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: Variant,
    /// Precision the distances were computed in.
    pub precision: Precision,
    /// Rank → CMC rate.
    pub cmc: BTreeMap<usize, f64>,
    pub map: f64,
    pub queries_evaluated: usize,
    pub queries_dropped: usize,
}

/// 1-based positions of the true matches for one query, after removing gallery
/// entries that share both identity and camera with the query. Gallery order
/// is ascending distance, ties broken by gallery index. `None` when no true
/// match remains.
pub fn ranked_match_positions(row: &[f32], query: Meta, gallery: &[Meta]) -> Option<Vec<usize>> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
    let mut positions = Vec::new();
    let mut pos = 0;
    for j in order {
        let g = gallery[j];
        let same_id = g.person_id == query.person_id;
        if same_id && g.camera_id == query.camera_id {
            continue;
        }
        pos += 1;
        if same_id {
            positions.push(pos);
        }
    }
    (!positions.is_empty()).then_some(positions)
}

fn per_query(dist: &Tensor, queries: &[Meta], gallery: &[Meta]) -> Result<Vec<Vec<usize>>> {
    let (nq, ng) = dist.dims2()?;
    if nq != queries.len() || ng != gallery.len() {
        return Err(Error::ShapeMismatch(format!(
            "distance matrix {nq}×{ng} for {} queries and {} gallery entries",
            queries.len(),
            gallery.len()
        )));
    }
    let kept: Vec<Vec<usize>> = (0..nq)
        .filter_map(|i| {
            ranked_match_positions(&dist.data()[i * ng..(i + 1) * ng], queries[i], gallery)
        })
        .collect();
    if kept.is_empty() {
        return Err(Error::InvalidArgument(
            "no query has a valid match in the gallery".into(),
        ));
    }
    Ok(kept)
}

fn cmc_from(kept: &[Vec<usize>], ranks: &[usize]) -> Result<BTreeMap<usize, f64>> {
    let mut out = BTreeMap::new();
    for &k in ranks {
        if k == 0 {
            return Err(Error::InvalidArgument("CMC ranks start at 1".into()));
        }
        let hits = kept.iter().filter(|p| p[0] <= k).count();
        out.insert(k, hits as f64 / kept.len() as f64);
    }
    Ok(out)
}

fn map_from(kept: &[Vec<usize>]) -> f64 {
    let total: f64 = kept
        .iter()
        .map(|positions| {
            positions
                .iter()
                .enumerate()
                .map(|(i, &r)| (i + 1) as f64 / r as f64)
                .sum::<f64>()
                / positions.len() as f64
        })
        .sum();
    total / kept.len() as f64
}

/// CMC rate at each requested rank over the queries that keep a true match.
pub fn cmc(
    dist: &Tensor,
    queries: &[Meta],
    gallery: &[Meta],
    ranks: &[usize],
) -> Result<BTreeMap<usize, f64>> {
    cmc_from(&per_query(dist, queries, gallery)?, ranks)
}

/// Mean average precision over the queries that keep a true match.
pub fn mean_ap(dist: &Tensor, queries: &[Meta], gallery: &[Meta]) -> Result<f64> {
    Ok(map_from(&per_query(dist, queries, gallery)?))
}

fn report(
    dist: &Tensor,
    qmeta: &[Meta],
    gmeta: &[Meta],
    ranks: &[usize],
    variant: Variant,
    precision: Precision,
) -> Result<EvalReport> {
    let kept = per_query(dist, qmeta, gmeta)?;
    Ok(EvalReport {
        variant,
        precision,
        cmc: cmc_from(&kept, ranks)?,
        map: map_from(&kept),
        queries_evaluated: kept.len(),
        queries_dropped: qmeta.len() - kept.len(),
    })
}

/// Plain evaluation of the query and gallery records of `set`, followed by a
/// re-ranked row when `rerank` is given.
pub fn evaluate(
    set: &EmbeddingSet,
    ranks: &[usize],
    precision: Precision,
    rerank: Option<RerankParams>,
) -> Result<Vec<EvalReport>> {
    let (q, qmeta) = set.matrix(Role::Query)?;
    let (g, gmeta) = set.matrix(Role::Gallery)?;
    if gmeta.is_empty() {
        return Err(Error::InvalidArgument(
            "embedding set has no gallery records".into(),
        ));
    }
    let plain = distmat(&q, &g, precision)?;
    let mut out = vec![report(
        &plain,
        &qmeta,
        &gmeta,
        ranks,
        Variant::Plain,
        precision,
    )?];
    if let Some(params) = rerank {
        let (q, g) = (q.to_mode(precision), g.to_mode(precision));
        let dist = k_reciprocal_rerank(&q, &g, params)?;
        out.push(report(
            &dist,
            &qmeta,
            &gmeta,
            ranks,
            Variant::ReRanked,
            precision,
        )?);
    }
    Ok(out)
}
