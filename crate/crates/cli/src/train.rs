use reid_core::io::{read_embeddings, write_atomic, write_checkpoint, Checkpoint};
use reid_core::net::Init;
use reid_core::synth::train_split;
use reid_core::trainer::{fit, AdamState, EpochLog, MixedModel};
use reid_core::{Error, Result};
use serde::Serialize;

use crate::at;
use crate::config::{hex, resolve_plan, RunConfig};

const LOSS_LOG_HEADER: &str = "epoch,lr,mean_loss,steps,skipped";

#[derive(Debug, Serialize)]
pub struct TrainSummary {
    pub config_hash: String,
    pub epochs: usize,
    pub steps: u64,
    pub skipped: usize,
    /// Mean loss of the last epoch that took a step.
    pub final_loss: Option<f32>,
    pub checkpoint: String,
    pub loss_log: String,
    /// Set when every attempted step overflowed binary16 under the loss scale.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Builds the model from `cfg`, trains it, and writes the checkpoint and loss log.
/// Zero epochs writes the initial model.
pub fn train(cfg: &RunConfig) -> Result<TrainSummary> {
    let data_path = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("no training data given (--data)".into()))?;
    let set = read_embeddings(data_path).map_err(at(data_path))?;
    let data = train_split(&set);
    if data.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} holds no training records",
            data_path.display()
        )));
    }
    let spec = cfg.network.build(set.dim())?;
    let plan = resolve_plan(&cfg.plan, &spec.manifest()?)?;
    let mut model = MixedModel::new(spec, plan, Init::KaimingUniform { seed: cfg.seed })?;
    let mut opt = AdamState::new(&model.masters, &cfg.train);
    // separate streams for initialization and batch sampling
    let logs = fit(
        &mut model,
        &mut opt,
        &data,
        &cfg.train,
        cfg.seed ^ 0x5eed,
        |_| {},
    )?;

    let hash = cfg.hash();
    let steps: u64 = logs.iter().map(|l| l.steps as u64).sum();
    let skipped: usize = logs.iter().map(|l| l.skipped).sum();
    let ck = Checkpoint {
        config_hash: hash,
        step: steps,
        model,
        opt,
    };
    write_checkpoint(&cfg.checkpoint, &ck).map_err(at(&cfg.checkpoint))?;
    write_atomic(&cfg.loss_log, format_loss_log(&logs).as_bytes()).map_err(at(&cfg.loss_log))?;
    Ok(TrainSummary {
        config_hash: hex(hash),
        epochs: logs.len(),
        steps,
        skipped,
        final_loss: logs.iter().rev().find(|l| l.steps > 0).map(|l| l.mean_loss),
        checkpoint: cfg.checkpoint.display().to_string(),
        loss_log: cfg.loss_log.display().to_string(),
        warning: (steps == 0 && skipped > 0).then(|| {
            format!(
                "all {skipped} steps overflowed binary16 at loss scale {}; try a smaller --loss-scale",
                cfg.train.loss_scale
            )
        }),
    })
}

pub fn format_loss_log(logs: &[EpochLog]) -> String {
    let mut out = format!("{LOSS_LOG_HEADER}\n");
    for l in logs {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            l.epoch, l.lr, l.mean_loss, l.steps, l.skipped
        ));
    }
    out
}

pub fn parse_loss_log(text: &str) -> Result<Vec<EpochLog>> {
    let bad = |line: usize, detail: String| Error::Format {
        what: "loss log",
        detail: format!("line {line}: {detail}"),
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == LOSS_LOG_HEADER => {}
        _ => return Err(bad(1, format!("expected header `{LOSS_LOG_HEADER}`"))),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 5 {
                return Err(bad(i + 1, format!("expected 5 fields, got {}", f.len())));
            }
            let e = |err: &dyn std::fmt::Display| bad(i + 1, err.to_string());
            Ok(EpochLog {
                epoch: f[0].parse().map_err(|x| e(&x))?,
                lr: f[1].parse().map_err(|x| e(&x))?,
                mean_loss: f[2].parse().map_err(|x| e(&x))?,
                steps: f[3].parse().map_err(|x| e(&x))?,
                skipped: f[4].parse().map_err(|x| e(&x))?,
            })
        })
        .collect()
}
