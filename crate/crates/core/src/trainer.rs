//! Mixed-precision training: binary32 master weights, per-plan working copies,
//! static loss scaling with skip-on-overflow, and Adam.

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{self, BnStats, Init, NetworkSpec, ParamSet};
use crate::planner::PrecisionPlan;
use crate::retrieval::{EmbeddingSet, Record};
use crate::tensor::{Precision, Tensor};
use crate::triplet::{
    batch_hard_triplet_loss_with, pk_sample_hard_with_rng, triplet_loss_backward, DistanceKind,
    HardPool, IdIndex, PkBatch, TripletLossOut,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Identities per batch (P).
    pub ids_per_batch: usize,
    /// Instances per identity (K).
    pub instances_per_id: usize,
    pub lr0: f32,
    pub epochs: usize,
    /// First epoch of exponential decay.
    pub decay_start: usize,
    pub margin: f32,
    /// Backbone input height and width.
    pub input_shape: (usize, usize),
    /// Static loss scale; a positive power of two.
    pub loss_scale: f32,
    /// Learning-rate multiplier reached at the final epoch.
    pub decay_floor_factor: f32,
    pub adam_beta1: f32,
    pub adam_beta2: f32,
    pub adam_eps: f32,
    /// Per-identity hard-pool size; `None` means `2·K`.
    pub pool_capacity: Option<usize>,
    /// Fraction of each identity's K slots drawn from the hard pool.
    pub mix_ratio: f32,
    pub distance: DistanceKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            ids_per_batch: 32,
            instances_per_id: 4,
            lr0: 2e-4,
            epochs: 300,
            decay_start: 150,
            margin: 0.3,
            input_shape: (256, 128),
            loss_scale: 1024.0,
            decay_floor_factor: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            pool_capacity: None,
            mix_ratio: 0.5,
            distance: DistanceKind::Squared,
        }
    }
}

fn is_power_of_two(s: f32) -> bool {
    s.is_normal() && s > 0.0 && s.to_bits() & 0x007F_FFFF == 0
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.ids_per_batch == 0 || self.instances_per_id < 2 {
            return bad(format!(
                "P = {} and K = {} (need P ≥ 1 and K ≥ 2)",
                self.ids_per_batch, self.instances_per_id
            ));
        }
        if self.batch_size != self.ids_per_batch * self.instances_per_id {
            return bad(format!(
                "batch size {} is not P·K = {}",
                self.batch_size,
                self.ids_per_batch * self.instances_per_id
            ));
        }
        if !is_power_of_two(self.loss_scale) {
            return bad(format!(
                "loss scale {} is not a power of two",
                self.loss_scale
            ));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("initial learning rate {}", self.lr0));
        }
        if self.decay_start > self.epochs {
            return bad(format!(
                "decay start {} after {} epochs",
                self.decay_start, self.epochs
            ));
        }
        if !(self.decay_floor_factor > 0.0 && self.decay_floor_factor <= 1.0) {
            return bad(format!("decay floor factor {}", self.decay_floor_factor));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return bad(format!("margin {}", self.margin));
        }
        if !(0.0..=1.0).contains(&self.mix_ratio) {
            return bad(format!("mix ratio {}", self.mix_ratio));
        }
        Ok(())
    }

    pub fn pool_capacity(&self) -> usize {
        self.pool_capacity.unwrap_or(2 * self.instances_per_id)
    }
}

/// `lr0` until `decay_start`, then `lr0 · f^((e − decay_start + 1) / (epochs − decay_start))`.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> Result<f32> {
    if epoch >= cfg.epochs {
        return Err(Error::InvalidArgument(format!(
            "epoch {epoch} outside 0..{}",
            cfg.epochs
        )));
    }
    if epoch < cfg.decay_start {
        return Ok(cfg.lr0);
    }
    let span = (cfg.epochs - cfg.decay_start) as f64;
    let progress = (epoch - cfg.decay_start + 1) as f64 / span;
    Ok((cfg.lr0 as f64 * (cfg.decay_floor_factor as f64).powf(progress)) as f32)
}

/// Adam moments per master tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: IndexMap<String, Vec<f32>>,
    pub v: IndexMap<String, Vec<f32>>,
    pub t: u64,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl AdamState {
    pub fn new(masters: &ParamSet, cfg: &TrainConfig) -> Self {
        let zeros: IndexMap<String, Vec<f32>> = masters
            .iter()
            .map(|(k, t)| (k.clone(), vec![0.0; t.len()]))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
        }
    }
}

/// One bias-corrected Adam step on `masters`.
pub fn adam_update(
    opt: &mut AdamState,
    masters: &mut ParamSet,
    grads: &ParamSet,
    lr: f32,
) -> Result<()> {
    for (key, master) in masters.iter() {
        let g = grads
            .get(key)
            .ok_or_else(|| Error::InvalidArgument(format!("no gradient for `{key}`")))?;
        if g.shape() != master.shape() {
            return Err(Error::ShapeMismatch(format!(
                "gradient {:?} for `{key}` {:?}",
                g.shape(),
                master.shape()
            )));
        }
        if !g.all_finite() {
            return Err(Error::NonFinite(format!("gradient of `{key}`")));
        }
        if opt.m.get(key).map(Vec::len) != Some(master.len()) {
            return Err(Error::ShapeMismatch(format!("optimizer state for `{key}`")));
        }
    }
    opt.t += 1;
    let t = opt.t as i32;
    let bc1 = 1.0 - opt.beta1.powi(t);
    let bc2 = 1.0 - opt.beta2.powi(t);
    let (b1, b2, eps) = (opt.beta1, opt.beta2, opt.eps);
    for (key, master) in masters.iter_mut() {
        let g = grads[key].data();
        let m = opt.m.get_mut(key).expect("checked above");
        let v = opt.v.get_mut(key).expect("checked above");
        let mut w = std::mem::replace(master, Tensor::scalar(0.0)).into_data();
        for i in 0..w.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            w[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        *master = Tensor::from_vec(grads[key].shape().to_vec(), w)?;
    }
    Ok(())
}

/// Network with binary32 masters and working copies stored per the plan.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedModel {
    pub spec: NetworkSpec,
    pub plan: PrecisionPlan,
    pub masters: ParamSet,
    pub working: ParamSet,
    pub bn: BnStats,
}

impl MixedModel {
    pub fn new(spec: NetworkSpec, plan: PrecisionPlan, init: Init) -> Result<Self> {
        let masters = net::init_params(&spec, init);
        MixedModel::from_parts(spec, plan, masters, None)
    }

    /// Assembles a model from saved masters and (optionally) running statistics.
    pub fn from_parts(
        spec: NetworkSpec,
        plan: PrecisionPlan,
        masters: ParamSet,
        bn: Option<BnStats>,
    ) -> Result<Self> {
        plan.validate(&spec.manifest()?)?;
        let expected = spec.param_shapes();
        if expected.len() != masters.len()
            || expected
                .iter()
                .any(|(k, s)| masters.get(k).map(Tensor::shape) != Some(s.as_slice()))
        {
            return Err(Error::ShapeMismatch(
                "master weights do not match the network".into(),
            ));
        }
        let masters = masters
            .into_iter()
            .map(|(k, t)| (k, t.into_mode(Precision::Binary32)))
            .collect();
        let bn = bn.unwrap_or_else(|| BnStats::new(&spec));
        let mut model = MixedModel {
            spec,
            plan,
            masters,
            working: ParamSet::new(),
            bn,
        };
        model.sync_working();
        Ok(model)
    }

    pub fn layer_mode(&self, key: &str) -> Precision {
        self.plan
            .get(net::param_layer(key))
            .unwrap_or(Precision::Binary32)
    }

    /// Re-derives working weights: binary16 images or exact copies of the masters.
    pub fn sync_working(&mut self) {
        self.working = self
            .masters
            .iter()
            .map(|(k, t)| (k.clone(), t.to_mode(self.layer_mode(k))))
            .collect();
    }

    /// Whether the working weights are exactly the per-plan images of the masters.
    pub fn is_synced(&self) -> bool {
        self.masters.len() == self.working.len()
            && self.masters.iter().all(|(k, m)| {
                let w = match self.working.get(k) {
                    Some(w) => w,
                    None => return false,
                };
                let image = m.to_mode(self.layer_mode(k));
                w.mode() == image.mode()
                    && w.shape() == image.shape()
                    && w.data()
                        .iter()
                        .zip(image.data())
                        .all(|(a, b)| a.to_bits() == b.to_bits())
            })
    }

    /// Inference-mode embeddings of `x: [N, ...input_shape]`.
    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        let mut stats = self.bn.clone();
        let (y, _) = net::forward(&self.spec, &self.plan, &self.working, &mut stats, x, false)?;
        let n = y.shape()[0];
        let dim = y.len() / n.max(1);
        y.into_mode(Precision::Binary32).reshape(vec![n, dim])
    }
}

/// Embeds every record of `set` (which holds network inputs), keeping
/// identity metadata and storing the vectors in `precision`.
pub fn embed_set(
    model: &MixedModel,
    set: &EmbeddingSet,
    precision: Precision,
) -> Result<EmbeddingSet> {
    const CHUNK: usize = 256;
    let width = model.spec.input_len();
    if set.dim() != width {
        return Err(Error::ShapeMismatch(format!(
            "records of dimension {} for a network taking {width} inputs",
            set.dim()
        )));
    }
    let dim = model.spec.embed_dim()?;
    let mut out = EmbeddingSet::new(dim, precision);
    for chunk in set.records().chunks(CHUNK) {
        let mut shape = vec![chunk.len()];
        shape.extend_from_slice(&model.spec.input_shape);
        let x = Tensor::from_vec(
            shape,
            chunk
                .iter()
                .flat_map(|r| r.vector.iter().copied())
                .collect(),
        )?;
        let e = model.embed(&x)?.into_mode(precision);
        for (r, v) in chunk.iter().zip(e.data().chunks_exact(dim)) {
            out.push(Record {
                vector: v.to_vec(),
                ..r.clone()
            })?;
        }
    }
    Ok(out)
}

/// Loss and gradients of one batch, multiplied by the loss scale.
#[derive(Clone, Debug)]
pub struct ScaledGradients {
    /// `None` when the forward pass already overflowed.
    pub loss: Option<TripletLossOut>,
    pub grads: ParamSet,
    /// Running statistics after this batch, committed only if the step is taken.
    pub bn: BnStats,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    /// Binary32 batch loss; infinite when the forward pass overflowed.
    pub loss: f32,
    pub step_taken: bool,
    pub mined: Option<TripletLossOut>,
}

/// Forward, binary32 loss, and backward of the loss multiplied by `cfg.loss_scale`.
pub fn scaled_gradients(
    model: &MixedModel,
    x: &Tensor,
    labels: &[u32],
    cfg: &TrainConfig,
) -> Result<ScaledGradients> {
    let mut bn = model.bn.clone();
    let (emb, tape) = net::forward(&model.spec, &model.plan, &model.working, &mut bn, x, true)?;
    let n = emb.shape()[0];
    let emb = emb.into_mode(Precision::Binary32);
    let emb = emb.clone().reshape(vec![n, emb.len() / n.max(1)])?;
    if !emb.all_finite() {
        return Ok(ScaledGradients {
            loss: None,
            grads: ParamSet::new(),
            bn,
        });
    }
    let out = batch_hard_triplet_loss_with(&emb, labels, cfg.margin, cfg.distance)?;
    let scale = cfg.loss_scale;
    let g = triplet_loss_backward(&emb, &out, cfg.distance)?.map(|v| v * scale);
    let out_shape = net::forward_output_shape(&model.spec, n)?;
    let g = g.reshape(out_shape)?;
    let grads = net::backward(
        &model.spec,
        &model.plan,
        &model.working,
        &model.bn,
        tape,
        &g,
    )?;
    Ok(ScaledGradients {
        loss: Some(out),
        grads,
        bn,
    })
}

/// Unscales `scaled` by `1/S` and, if every gradient is finite, applies Adam,
/// re-syncs the working weights and commits `bn`. Returns whether the step was
/// taken; a skipped step leaves model and optimizer untouched.
pub fn apply_scaled_gradients(
    model: &mut MixedModel,
    opt: &mut AdamState,
    scaled: &ParamSet,
    bn: BnStats,
    loss_scale: f32,
    lr: f32,
) -> Result<bool> {
    if !is_power_of_two(loss_scale) {
        return Err(Error::InvalidArgument(format!("loss scale {loss_scale}")));
    }
    let inv = 1.0 / loss_scale;
    let grads: ParamSet = scaled
        .iter()
        .map(|(k, g)| (k.clone(), g.to_mode(Precision::Binary32).map(|v| v * inv)))
        .collect();
    if grads.len() != model.masters.len() || grads.values().any(|g| !g.all_finite()) {
        return Ok(false);
    }
    adam_update(opt, &mut model.masters, &grads, lr)?;
    model.sync_working();
    model.bn = bn;
    Ok(true)
}

/// One mixed-precision step on a batch `x` with identity `labels`.
pub fn train_step(
    model: &mut MixedModel,
    opt: &mut AdamState,
    x: &Tensor,
    labels: &[u32],
    cfg: &TrainConfig,
    lr: f32,
) -> Result<StepOutcome> {
    if let Some((key, _)) = model.masters.iter().find(|(_, t)| !t.all_finite()) {
        return Err(Error::NonFinite(format!("master weights of `{key}`")));
    }
    let scaled = scaled_gradients(model, x, labels, cfg)?;
    let Some(out) = scaled.loss else {
        return Ok(StepOutcome {
            loss: f32::INFINITY,
            step_taken: false,
            mined: None,
        });
    };
    let taken = apply_scaled_gradients(model, opt, &scaled.grads, scaled.bn, cfg.loss_scale, lr)?;
    Ok(StepOutcome {
        loss: out.loss,
        step_taken: taken,
        mined: Some(out),
    })
}

/// Training inputs as flat rows with identity labels.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub inputs: Vec<Vec<f32>>,
    pub labels: Vec<u32>,
}

impl TrainData {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Stacks the rows of `batch` into `[N, ...input_shape]`.
    pub fn gather(&self, batch: &PkBatch, input_shape: &[usize]) -> Result<Tensor> {
        let width: usize = input_shape.iter().product();
        let mut data = Vec::with_capacity(batch.len() * width);
        for &i in &batch.indices {
            let row = &self.inputs[i];
            if row.len() != width {
                return Err(Error::ShapeMismatch(format!(
                    "sample {i} has {} values, network takes {width}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        let mut shape = vec![batch.len()];
        shape.extend_from_slice(input_shape);
        Tensor::from_vec(shape, data)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f32,
    /// Mean loss over the epoch's taken steps (infinite if none were taken).
    pub mean_loss: f32,
    pub steps: usize,
    pub skipped: usize,
}

/// Steps per epoch: enough batches to cover the training set once.
pub fn iterations_per_epoch(n_train: usize, batch_size: usize) -> usize {
    n_train.div_ceil(batch_size.max(1)).max(1)
}

/// Runs `cfg.epochs` epochs of PK-sampled mixed-precision training.
pub fn fit(
    model: &mut MixedModel,
    opt: &mut AdamState,
    data: &TrainData,
    cfg: &TrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    let index = IdIndex::new(&data.labels);
    let mut pool = HardPool::new(cfg.pool_capacity());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let iters = iterations_per_epoch(data.len(), cfg.batch_size);
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(epoch, cfg)?;
        let (mut total, mut steps, mut skipped) = (0.0f64, 0usize, 0usize);
        for _ in 0..iters {
            let batch = pk_sample_hard_with_rng(
                &index,
                &pool,
                cfg.ids_per_batch,
                cfg.instances_per_id,
                cfg.mix_ratio,
                &mut rng,
            )?;
            let x = data.gather(&batch, &model.spec.input_shape)?;
            let outcome = train_step(model, opt, &x, &batch.person_ids, cfg, lr)?;
            if outcome.step_taken {
                total += outcome.loss as f64;
                steps += 1;
            } else {
                skipped += 1;
            }
            if let Some(out) = &outcome.mined {
                pool.update(&batch, out);
            }
        }
        let log = EpochLog {
            epoch,
            lr,
            mean_loss: if steps > 0 {
                (total / steps as f64) as f32
            } else {
                f32::INFINITY
            },
            steps,
            skipped,
        };
        on_epoch(&log);
        logs.push(log);
    }
    Ok(logs)
}
