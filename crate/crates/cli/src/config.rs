use std::path::{Path, PathBuf};

use reid_core::io::config_hash;
use reid_core::net::NetworkSpec;
use reid_core::planner::{partition, LayerManifest, PrecisionPlan};
use reid_core::retrieval::RerankParams;
use reid_core::trainer::TrainConfig;
use reid_core::{Error, Precision, Result};
use serde::{Deserialize, Serialize};

/// Shape of the separable network trained by `reid train`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub width: usize,
    pub embed_dim: usize,
    /// `[C, H, W]` view of each input record; `None` reads a D-dim record as `[D, 1, 1]`.
    pub input_view: Option<[usize; 3]>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            width: 16,
            embed_dim: 16,
            input_view: None,
        }
    }
}

impl NetworkConfig {
    pub fn build(&self, record_dim: usize) -> Result<NetworkSpec> {
        let view = self.input_view.unwrap_or([record_dim, 1, 1]);
        if view.iter().product::<usize>() != record_dim {
            return Err(Error::ShapeMismatch(format!(
                "input view {}x{}x{} does not hold {record_dim}-dim records",
                view[0], view[1], view[2]
            )));
        }
        if self.width == 0 || self.embed_dim == 0 {
            return Err(Error::InvalidArgument(
                "network width and embedding size must be positive".into(),
            ));
        }
        Ok(NetworkSpec::separable(view, self.width, self.embed_dim))
    }
}

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    /// Embedding file whose `train` records are the training inputs.
    pub data: Option<PathBuf>,
    pub seed: u64,
    /// `mixed`, `binary32`, or the path of a plan file.
    pub plan: String,
    pub network: NetworkConfig,
    pub rerank: RerankParams,
    pub checkpoint: PathBuf,
    pub loss_log: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            data: None,
            seed: 0,
            plan: "mixed".into(),
            network: NetworkConfig::default(),
            rerank: RerankParams::default(),
            checkpoint: PathBuf::from("model.ckpt"),
            loss_log: PathBuf::from("loss.csv"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| crate::at(path)(e.into()))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            what: "run config",
            detail: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run config serializes")
    }

    pub fn hash(&self) -> u64 {
        config_hash(self)
    }
}

/// Resolves `mixed`, `binary32`, or a plan file against `manifest`.
pub fn resolve_plan(choice: &str, manifest: &LayerManifest) -> Result<PrecisionPlan> {
    let plan = match choice {
        "mixed" | "partition" => partition(manifest),
        "binary32" => PrecisionPlan::uniform(manifest, Precision::Binary32),
        path => PrecisionPlan::load(Path::new(path)).map_err(crate::at(Path::new(path)))?,
    };
    plan.validate(manifest)?;
    Ok(plan)
}

pub fn hex(hash: u64) -> String {
    format!("{hash:016x}")
}
