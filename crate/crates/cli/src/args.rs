use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use reid_core::triplet::DistanceKind;
use reid_core::{Precision, Result};

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "reid",
    version,
    about = "Mixed-precision person re-identification toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic identity dataset.
    Synth(SynthArgs),
    /// Train the separable embedding network with batch-hard triplet loss.
    Train(Box<TrainArgs>),
    /// Embed the records of a dataset with a trained checkpoint.
    Embed(EmbedArgs),
    /// CMC and mAP of query records against gallery records.
    Eval(EvalArgs),
    /// Precision partition, parameter bytes and MACs of layer manifests.
    Plan(PlanArgs),
    /// Time binary32 against emulated binary16 distance matrices.
    Bench(BenchArgs),
}

fn parse_precision(s: &str) -> std::result::Result<Precision, String> {
    Precision::parse(s).map_err(|e| e.to_string())
}

fn parse_distance(s: &str) -> std::result::Result<DistanceKind, String> {
    match s {
        "squared" => Ok(DistanceKind::Squared),
        "euclidean" => Ok(DistanceKind::Euclidean),
        other => Err(format!("unknown distance `{other}` (squared, euclidean)")),
    }
}

fn parse_view(s: &str) -> std::result::Result<[usize; 3], String> {
    let dims: Vec<usize> = s
        .split('x')
        .map(|d| d.trim().parse::<usize>().map_err(|e| format!("`{d}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    <[usize; 3]>::try_from(dims).map_err(|_| format!("expected CxHxW, got `{s}`"))
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    pub ids: usize,
    #[arg(long, default_value_t = 20)]
    pub per_id: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.3)]
    pub noise: f32,
    #[arg(long, default_value_t = 3)]
    pub cameras: u16,
    #[arg(long, default_value_t = 1.0)]
    pub center_scale: f32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Flags override the `--config` file, which overrides the defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Defaults to half of `--epochs` when the configured value would exceed it.
    #[arg(long)]
    pub decay_start: Option<usize>,
    #[arg(long)]
    pub decay_floor: Option<f32>,
    #[arg(long)]
    pub lr0: Option<f32>,
    /// Identities per batch (P).
    #[arg(long)]
    pub ids_per_batch: Option<usize>,
    /// Instances per identity (K).
    #[arg(long)]
    pub instances_per_id: Option<usize>,
    /// Defaults to P·K.
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub margin: Option<f32>,
    #[arg(long)]
    pub loss_scale: Option<f32>,
    #[arg(long)]
    pub mix_ratio: Option<f32>,
    #[arg(long)]
    pub pool_capacity: Option<usize>,
    #[arg(long, value_parser = parse_distance)]
    pub distance: Option<DistanceKind>,
    /// `mixed`, `binary32`, or a plan file.
    #[arg(long)]
    pub plan: Option<String>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// View of each record as network input, e.g. `4x4x4`.
    #[arg(long, value_parser = parse_view)]
    pub input_view: Option<[usize; 3]>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub loss_log: Option<PathBuf>,
}

impl TrainArgs {
    pub fn into_config(self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let t = &mut cfg.train;
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$field { $target = v; })*
            };
        }
        set!(
            epochs => t.epochs,
            decay_floor => t.decay_floor_factor,
            lr0 => t.lr0,
            ids_per_batch => t.ids_per_batch,
            instances_per_id => t.instances_per_id,
            margin => t.margin,
            loss_scale => t.loss_scale,
            mix_ratio => t.mix_ratio,
            distance => t.distance,
        );
        if self.pool_capacity.is_some() {
            t.pool_capacity = self.pool_capacity;
        }
        match self.decay_start {
            Some(d) => t.decay_start = d,
            None if t.decay_start > t.epochs => t.decay_start = t.epochs / 2,
            None => {}
        }
        t.batch_size = self
            .batch_size
            .unwrap_or(t.ids_per_batch * t.instances_per_id);
        if self.data.is_some() {
            cfg.data = self.data;
        }
        set!(
            seed => cfg.seed,
            plan => cfg.plan,
            width => cfg.network.width,
            embed_dim => cfg.network.embed_dim,
            checkpoint => cfg.checkpoint,
            loss_log => cfg.loss_log,
        );
        if self.input_view.is_some() {
            cfg.network.input_view = self.input_view;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset whose records are network inputs.
    #[arg(long)]
    pub inputs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Storage precision of the written embeddings.
    #[arg(long, value_parser = parse_precision, default_value = "binary32")]
    pub precision: Precision,
    /// Forward-pass plan: `mixed`, `binary32`, or a plan file. Defaults to the
    /// plan stored in the checkpoint.
    #[arg(long)]
    pub plan: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    pub ranks: Vec<usize>,
    /// Distance precision; defaults to the precision of the embedding file.
    #[arg(long, value_parser = parse_precision)]
    pub precision: Option<Precision>,
    /// Also report k-reciprocal re-ranked results.
    #[arg(long)]
    pub rerank: bool,
    #[arg(long, default_value_t = 20)]
    pub k1: usize,
    #[arg(long, default_value_t = 6)]
    pub k2: usize,
    #[arg(long, default_value_t = 0.3)]
    pub lambda: f32,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PlanArgs {
    /// Layer manifest; repeat for several models. With two, the cross-model
    /// ratio is the first model's binary32 size over the second's mixed size.
    #[arg(long = "manifest", required = true)]
    pub manifests: Vec<PathBuf>,
    /// Directory receiving one `<manifest stem>.plan` file per manifest.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Per-layer table.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 128)]
    pub dim: usize,
    #[arg(long, default_value_t = 256)]
    pub queries: usize,
    #[arg(long, default_value_t = 1024)]
    pub gallery: usize,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Use the query set as the gallery; distance symmetry is verified before timing.
    #[arg(long)]
    pub same: bool,
    #[arg(long)]
    pub json: Option<PathBuf>,
}
