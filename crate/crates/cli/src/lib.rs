//! Library behind the `reid` binary. Each subcommand is a function that takes
//! its parsed arguments, writes its files atomically, and returns a
//! serializable summary that the binary prints as JSON.

pub mod args;
pub mod bench;
pub mod config;
pub mod eval;
pub mod plan;
pub mod train;

use std::path::Path;

use reid_core::io::{
    config_hash, read_checkpoint, read_embeddings, write_atomic, write_embeddings,
};
use reid_core::retrieval::Role;
use reid_core::synth::{synth_dataset, SynthConfig};
use reid_core::trainer::embed_set;
use reid_core::{Error, Precision, Result};
use serde::Serialize;

use args::{Command, EmbedArgs, SynthArgs};
use config::{hex, resolve_plan};

/// Runs one subcommand and returns its JSON summary.
pub fn run(command: Command) -> Result<serde_json::Value> {
    match command {
        Command::Synth(a) => to_value(synth(&a)?),
        Command::Train(a) => to_value(train::train(&(*a).into_config()?)?),
        Command::Embed(a) => to_value(embed(&a)?),
        Command::Eval(a) => to_value(eval::eval(&a)?),
        Command::Plan(a) => to_value(plan::plan(&a)?),
        Command::Bench(a) => to_value(bench::bench(&a)?),
    }
}

fn to_value<T: Serialize>(summary: T) -> Result<serde_json::Value> {
    serde_json::to_value(summary).map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// Adds the file path to I/O errors, which otherwise only name the OS failure.
pub(crate) fn at(path: &Path) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(
            io.kind(),
            format!("{}: {io}", path.display()),
        )),
        other => other,
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes()).map_err(at(path))
}

#[derive(Debug, Serialize)]
pub struct SynthSummary {
    pub config_hash: String,
    pub records: usize,
    pub train: usize,
    pub query: usize,
    pub gallery: usize,
    pub dim: usize,
    pub out: String,
}

pub fn synth(a: &SynthArgs) -> Result<SynthSummary> {
    let cfg = SynthConfig {
        ids: a.ids,
        per_id: a.per_id,
        dim: a.dim,
        noise: a.noise,
        cameras: a.cameras,
        center_scale: a.center_scale,
        seed: a.seed,
    };
    let set = synth_dataset(&cfg)?;
    write_embeddings(&a.out, &set).map_err(at(&a.out))?;
    let count = |role| set.with_role(role).count();
    Ok(SynthSummary {
        config_hash: hex(config_hash(&cfg)),
        records: set.len(),
        train: count(Role::Train),
        query: count(Role::Query),
        gallery: count(Role::Gallery),
        dim: set.dim(),
        out: a.out.display().to_string(),
    })
}

#[derive(Debug, Serialize)]
pub struct EmbedSummary {
    /// Config hash stored in the checkpoint.
    pub config_hash: String,
    pub records: usize,
    pub dim: usize,
    pub precision: Precision,
    pub out: String,
}

pub fn embed(a: &EmbedArgs) -> Result<EmbedSummary> {
    let ck = read_checkpoint(&a.checkpoint).map_err(at(&a.checkpoint))?;
    let mut model = ck.model;
    if let Some(choice) = &a.plan {
        model.plan = resolve_plan(choice, &model.spec.manifest()?)?;
        model.sync_working();
    }
    let inputs = read_embeddings(&a.inputs).map_err(at(&a.inputs))?;
    let out = embed_set(&model, &inputs, a.precision)?;
    write_embeddings(&a.out, &out).map_err(at(&a.out))?;
    Ok(EmbedSummary {
        config_hash: hex(ck.config_hash),
        records: out.len(),
        dim: out.dim(),
        precision: out.precision(),
        out: a.out.display().to_string(),
    })
}
