use reid_core::io::{config_hash, read_embeddings, write_atomic};
use reid_core::retrieval::{evaluate, EvalReport, RerankParams};
use reid_core::{Error, Precision, Result};
use serde::{Deserialize, Serialize};

use crate::args::EvalArgs;
use crate::config::hex;
use crate::{at, write_json};

/// Settings that determine an evaluation, independent of file locations.
#[derive(Debug, Serialize)]
struct EvalSettings<'a> {
    ranks: &'a [usize],
    precision: Precision,
    rerank: Option<RerankParams>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub config_hash: String,
    pub rows: Vec<EvalReport>,
}

pub fn eval(a: &EvalArgs) -> Result<EvalOutput> {
    if a.ranks.is_empty() || a.ranks.contains(&0) {
        return Err(Error::InvalidArgument("ranks must be positive".into()));
    }
    let set = read_embeddings(&a.embeddings).map_err(at(&a.embeddings))?;
    let precision = a.precision.unwrap_or(set.precision());
    let rerank = a.rerank.then_some(RerankParams {
        k1: a.k1,
        k2: a.k2,
        lambda: a.lambda,
    });
    let rows = evaluate(&set, &a.ranks, precision, rerank)?;
    let settings = EvalSettings {
        ranks: &a.ranks,
        precision,
        rerank,
    };
    let out = EvalOutput {
        config_hash: hex(config_hash(&settings)),
        rows,
    };
    if let Some(path) = &a.json {
        write_json(path, &out)?;
    }
    if let Some(path) = &a.csv {
        write_atomic(path, eval_csv(&out).as_bytes()).map_err(at(path))?;
    }
    Ok(out)
}

/// One row per variant: `variant,precision,cmc@r...,map,queries_evaluated,queries_dropped`.
pub fn eval_csv(out: &EvalOutput) -> String {
    let ranks: Vec<usize> = out
        .rows
        .first()
        .map(|r| r.cmc.keys().copied().collect())
        .unwrap_or_default();
    let mut text = String::from("variant,precision");
    for r in &ranks {
        text.push_str(&format!(",cmc@{r}"));
    }
    text.push_str(",map,queries_evaluated,queries_dropped\n");
    for row in &out.rows {
        text.push_str(&format!(
            "{},{}",
            row.variant.as_str(),
            row.precision.as_str()
        ));
        for r in &ranks {
            text.push_str(&format!(",{}", row.cmc[r]));
        }
        text.push_str(&format!(
            ",{},{},{}\n",
            row.map, row.queries_evaluated, row.queries_dropped
        ));
    }
    text
}
