use std::path::Path;

use reid_core::io::write_atomic;
use reid_core::planner::{model_size_bytes, partition, LayerManifest, PrecisionPlan};
use reid_core::{Error, Precision, Result};
use serde::{Deserialize, Serialize};

use crate::args::PlanArgs;
use crate::{at, write_json};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelPlan {
    /// Manifest file stem.
    pub model: String,
    pub layers: usize,
    pub params: u64,
    pub binary32_bytes: u64,
    pub mixed_bytes: u64,
    pub binary32_mb: f64,
    pub mixed_mb: f64,
    /// Binary32 bytes over mixed bytes.
    pub ratio: f64,
    pub macs: u64,
    pub plan_file: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub models: Vec<ModelPlan>,
    /// First model's binary32 size over the second model's mixed size.
    pub cross_model_ratio: Option<f64>,
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into())
}

pub fn plan(a: &PlanArgs) -> Result<PlanReport> {
    if let Some(dir) = &a.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| at(dir)(e.into()))?;
    }
    let mut models = Vec::new();
    let mut table = String::from("model,layer,op,params,precision,bytes\n");
    for path in &a.manifests {
        let manifest = LayerManifest::load(path).map_err(at(path))?;
        let name = stem(path);
        if models.iter().any(|m: &ModelPlan| m.model == name) {
            return Err(Error::InvalidArgument(format!(
                "two manifests share the name `{name}`"
            )));
        }
        let mixed = partition(&manifest);
        let full = model_size_bytes(
            &manifest,
            &PrecisionPlan::uniform(&manifest, Precision::Binary32),
        )?;
        let part = model_size_bytes(&manifest, &mixed)?;
        for (entry, (_, bytes)) in manifest.entries().iter().zip(&part.per_layer) {
            table.push_str(&format!(
                "{name},{},{},{},{},{bytes}\n",
                entry.name,
                entry.op.as_str(),
                entry.param_count,
                mixed
                    .get(&entry.name)
                    .unwrap_or(Precision::Binary32)
                    .as_str(),
            ));
        }
        let plan_file = match &a.out_dir {
            Some(dir) => {
                let file = dir.join(format!("{name}.plan"));
                write_atomic(&file, mixed.to_text().as_bytes()).map_err(at(&file))?;
                Some(file.display().to_string())
            }
            None => None,
        };
        models.push(ModelPlan {
            model: name,
            layers: manifest.len(),
            params: manifest.param_count(),
            binary32_bytes: full.total_bytes,
            mixed_bytes: part.total_bytes,
            binary32_mb: full.megabytes(),
            mixed_mb: part.megabytes(),
            ratio: full.total_bytes as f64 / part.total_bytes.max(1) as f64,
            macs: manifest.mac_total()?,
            plan_file,
        });
    }
    let cross_model_ratio = match models.as_slice() {
        [first, second, ..] => Some(first.binary32_mb / second.mixed_mb),
        _ => None,
    };
    let report = PlanReport {
        models,
        cross_model_ratio,
    };
    if let Some(path) = &a.json {
        write_json(path, &report)?;
    }
    if let Some(path) = &a.csv {
        write_atomic(path, table.as_bytes()).map_err(at(path))?;
    }
    Ok(report)
}
