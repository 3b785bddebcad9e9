//! Oracle sweeps shared by the module suites and the acceptance target.
//! Each one panics on the first disagreement.

use std::collections::BTreeMap;

use rand::Rng;
use reid_core::half::{f16_arith, f16_to_f32, f32_to_f16, ArithOp};
use reid_core::planner::{model_size_bytes, partition, LayerManifest, OpKind, PrecisionPlan};
use reid_core::retrieval::{cmc, mean_ap, Meta};
use reid_core::triplet::{batch_hard_triplet_loss_with, DistanceKind};
use reid_core::{Half16, Precision, Tensor};

use super::*;

/// Every finite binary16 pattern survives widening to binary32 and back.
/// Returns the number of patterns checked.
pub fn half_round_trip_exhaustive() -> usize {
    let table = Binary16Table::new();
    let mut checked = 0;
    for bits in 0..=u16::MAX {
        let h = Half16::from_bits(bits);
        if !h.is_finite() {
            continue;
        }
        let wide = f16_to_f32(h);
        assert_eq!(wide as f64, table.value(bits), "widening of {bits:#06x}");
        assert_eq!(
            f32_to_f16(wide).to_bits(),
            bits,
            "round trip of {bits:#06x}"
        );
        checked += 1;
    }
    for bits in [0x7C00u16, 0xFC00] {
        assert_eq!(
            f32_to_f16(f16_to_f32(Half16::from_bits(bits))).to_bits(),
            bits
        );
    }
    checked
}

/// Binary32 draws spread over the whole binary16 range and beyond: half take
/// raw random bit patterns, half take a random exponent in [-27, 17].
pub fn random_f32(r: &mut impl Rng) -> f32 {
    if r.random_bool(0.5) {
        f32::from_bits(r.random())
    } else {
        let exp: i32 = r.random_range(-27..=17);
        let mantissa: u32 = r.random_range(0..1 << 23);
        let sign = if r.random_bool(0.5) { 0x8000_0000 } else { 0 };
        f32::from_bits(sign | (((exp + 127) as u32) << 23) | mantissa)
    }
}

/// Conversion of `n` random binary32 values against the table reference.
pub fn half_random_conversions(n: usize, seed: u64) {
    let table = Binary16Table::new();
    let mut r = rng(seed);
    for _ in 0..n {
        let x = random_f32(&mut r);
        let got = f32_to_f16(x).to_bits();
        let want = table.round(x as f64);
        assert_eq!(got, want, "conversion of {x:e} ({:#010x})", x.to_bits());
    }
}

/// Add/sub/mul/div of `n` random operand pairs against exact-then-table rounding.
pub fn half_random_arithmetic(n: usize, seed: u64) {
    let table = Binary16Table::new();
    let mut r = rng(seed);
    let ops = [ArithOp::Add, ArithOp::Sub, ArithOp::Mul, ArithOp::Div];
    let mut done = 0;
    while done < n {
        let (a, b) = (Half16::from_bits(r.random()), Half16::from_bits(r.random()));
        if !a.is_finite() || !b.is_finite() {
            continue;
        }
        let op = ops[done % 4];
        let (x, y) = (table.value(a.to_bits()), table.value(b.to_bits()));
        let exact = match op {
            ArithOp::Add => x + y,
            ArithOp::Sub => x - y,
            ArithOp::Mul => x * y,
            ArithOp::Div => x / y,
        };
        let got = f16_arith(op, a, b);
        if exact.is_nan() {
            assert!(got.is_nan(), "{op:?} {a:?} {b:?}");
        } else if exact.is_infinite() {
            assert_eq!(got.to_bits(), if exact > 0.0 { 0x7C00 } else { 0xFC00 });
        } else if exact == 0.0 {
            assert!(got.is_zero(), "{op:?} {a:?} {b:?}");
        } else {
            let want = table.round(exact);
            // a zero result keeps the sign of the exact value
            assert_eq!(got.to_bits(), want, "{op:?} {a:?} {b:?} exact {exact:e}");
        }
        done += 1;
    }
}

/// Random labels with at least two instances per identity and one other identity.
pub fn random_labels(r: &mut impl Rng, n: usize) -> Vec<u32> {
    loop {
        let ids = r.random_range(2..=(n / 2).max(2)) as u32;
        let labels: Vec<u32> = (0..n).map(|_| r.random_range(0..ids)).collect();
        let mut counts = BTreeMap::new();
        for &l in &labels {
            *counts.entry(l).or_insert(0) += 1;
        }
        if counts.len() >= 2 && counts.values().all(|&c| c >= 2) {
            return labels;
        }
    }
}

/// Batch-hard loss and mined indices against exhaustive enumeration on
/// `count` random batches with n ≤ 32, D ≤ 16. Returns the largest loss gap
/// relative to `max(1, |loss|)`.
pub fn triplet_oracle_batches(count: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for case in 0..count {
        let n = r.random_range(4..=32);
        let dim = r.random_range(1..=16);
        let labels = random_labels(&mut r, n);
        // a coarse grid makes distance ties common
        let x: Vec<f32> = if case % 3 == 0 {
            (0..n * dim)
                .map(|_| r.random_range(-2i32..=2) as f32 * 0.5)
                .collect()
        } else {
            uniform_vec(&mut r, n * dim, -1.0, 1.0)
        };
        let margin = r.random_range(0.0f32..1.0);
        for kind in [DistanceKind::Squared, DistanceKind::Euclidean] {
            let squared = kind == DistanceKind::Squared;
            let emb = Tensor::from_vec(vec![n, dim], x.clone()).unwrap();
            let got = batch_hard_triplet_loss_with(&emb, &labels, margin, kind).unwrap();
            let want = oracle_on_binary32(&x, &labels, dim, margin, squared);
            let gap = (got.loss as f64 - want.loss).abs() / want.loss.abs().max(1.0);
            assert!(
                gap < 1e-6,
                "case {case} {kind:?}: loss {} vs {}",
                got.loss,
                want.loss
            );
            worst = worst.max(gap);
            for (a, (term, &(p, q, _))) in got.per_anchor.iter().zip(&want.anchors).enumerate() {
                assert_eq!(
                    (term.positive, term.negative),
                    (p, q),
                    "case {case} {kind:?} anchor {a}"
                );
            }
        }
    }
    worst
}

/// Oracle mining on the same binary32 distances the implementation sees, so
/// that ties are ties in both.
fn oracle_on_binary32(
    x: &[f32],
    labels: &[u32],
    dim: usize,
    margin: f32,
    squared: bool,
) -> OracleTriplets {
    let n = labels.len();
    let d = |i: usize, j: usize| -> f32 {
        let mut s = 0.0f32;
        for k in 0..dim {
            let diff = x[i * dim + k] - x[j * dim + k];
            s += diff * diff;
        }
        if squared {
            s
        } else {
            s.sqrt()
        }
    };
    let mut anchors = Vec::with_capacity(n);
    let mut total = 0.0f64;
    for a in 0..n {
        // (distance, index) of the hardest positive and negative so far
        let mut hp: Option<(f32, usize)> = None;
        let mut hn: Option<(f32, usize)> = None;
        for j in 0..n {
            if j == a {
                continue;
            }
            let dj = d(a, j);
            if labels[j] == labels[a] {
                if hp.is_none_or(|(best, _)| dj > best) {
                    hp = Some((dj, j));
                }
            } else if hn.is_none_or(|(best, _)| dj < best) {
                hn = Some((dj, j));
            }
        }
        let ((dp, p), (dn, q)) = (hp.unwrap(), hn.unwrap());
        let arg = dp as f64 - dn as f64 + margin as f64;
        total += arg.max(0.0);
        anchors.push((p, q, arg));
    }
    OracleTriplets {
        loss: total / n as f64,
        anchors,
        min_gap: 0.0,
    }
}

/// Reference CMC and mAP by counting, per gallery entry, the valid entries
/// ranked ahead of it. `None` when no query keeps a match.
pub fn retrieval_oracle(
    dist: &[f32],
    queries: &[Meta],
    gallery: &[Meta],
    ranks: &[usize],
) -> Option<(BTreeMap<usize, f64>, f64)> {
    let ng = gallery.len();
    let mut first_hits = Vec::new();
    let mut aps = Vec::new();
    for (i, q) in queries.iter().enumerate() {
        let row = &dist[i * ng..(i + 1) * ng];
        let junk =
            |j: usize| gallery[j].person_id == q.person_id && gallery[j].camera_id == q.camera_id;
        let ahead = |j: usize| {
            (0..ng)
                .filter(|&k| !junk(k) && (row[k] < row[j] || (row[k] == row[j] && k < j)))
                .count()
        };
        let mut match_ranks: Vec<usize> = (0..ng)
            .filter(|&j| !junk(j) && gallery[j].person_id == q.person_id)
            .map(|j| ahead(j) + 1)
            .collect();
        if match_ranks.is_empty() {
            continue;
        }
        match_ranks.sort_unstable();
        first_hits.push(match_ranks[0]);
        let ap = match_ranks
            .iter()
            .enumerate()
            .map(|(i, &r)| (i + 1) as f64 / r as f64)
            .sum::<f64>()
            / match_ranks.len() as f64;
        aps.push(ap);
    }
    if aps.is_empty() {
        return None;
    }
    let curve = ranks
        .iter()
        .map(|&k| {
            (
                k,
                first_hits.iter().filter(|&&h| h <= k).count() as f64 / first_hits.len() as f64,
            )
        })
        .collect();
    Some((curve, aps.iter().sum::<f64>() / aps.len() as f64))
}

/// CMC and mAP against [`retrieval_oracle`] on `count` random instances with
/// Q, G ≤ 50, exact equality. Returns the number of instances evaluated.
pub fn retrieval_oracle_instances(count: usize, seed: u64) -> usize {
    let mut r = rng(seed);
    let ranks = [1, 5, 10];
    let mut evaluated = 0;
    while evaluated < count {
        let nq = r.random_range(1..=50);
        let ng = r.random_range(1..=50);
        let ids = r.random_range(1..=8u32);
        let meta = |r: &mut rand_chacha::ChaCha8Rng| Meta {
            person_id: r.random_range(0..ids),
            camera_id: r.random_range(0..3u16),
        };
        let queries: Vec<Meta> = (0..nq).map(|_| meta(&mut r)).collect();
        let gallery: Vec<Meta> = (0..ng).map(|_| meta(&mut r)).collect();
        // quantized distances force ties
        let dist: Vec<f32> = (0..nq * ng)
            .map(|_| r.random_range(0..20) as f32 * 0.25)
            .collect();
        let t = Tensor::from_vec(vec![nq, ng], dist.clone()).unwrap();
        match retrieval_oracle(&dist, &queries, &gallery, &ranks) {
            None => assert!(cmc(&t, &queries, &gallery, &ranks).is_err()),
            Some((curve, map)) => {
                assert_eq!(cmc(&t, &queries, &gallery, &ranks).unwrap(), curve);
                assert_eq!(mean_ap(&t, &queries, &gallery).unwrap(), map);
                evaluated += 1;
            }
        }
    }
    evaluated
}

/// Storage figures of a committed backbone manifest.
#[derive(Debug)]
pub struct SizeFigures {
    pub full_mb: f64,
    pub mixed_mb: f64,
    pub ratio: f64,
    /// Trainable parameters: everything except the BN running statistics.
    pub trainable: u64,
}

pub fn load_manifest(file: &str) -> LayerManifest {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures/manifests")
        .join(file);
    LayerManifest::load(&path).unwrap()
}

pub fn size_figures(file: &str) -> SizeFigures {
    let manifest = load_manifest(file);
    let full = model_size_bytes(
        &manifest,
        &PrecisionPlan::uniform(&manifest, Precision::Binary32),
    )
    .unwrap();
    let mixed = model_size_bytes(&manifest, &partition(&manifest)).unwrap();
    let running: u64 = manifest
        .entries()
        .iter()
        .filter(|e| e.op == OpKind::BatchNorm)
        .map(|e| e.param_count / 2)
        .sum();
    SizeFigures {
        full_mb: full.megabytes(),
        mixed_mb: mixed.megabytes(),
        ratio: full.total_bytes as f64 / mixed.total_bytes as f64,
        trainable: manifest.param_count() - running,
    }
}

/// Published trainable parameter counts with the classifier heads removed.
pub const RESNET50_BACKBONE_PARAMS: u64 = 25_557_032 - 2_049_000;
pub const MOBILENET_V2_BACKBONE_PARAMS: u64 = 3_504_872 - 1_281_000;

/// Steps of PK-sampled training on the convergence fixture with an all-binary32
/// plan, once at `S = 1` and once at `S = 1024`. Masters, optimizer moments and
/// running statistics must agree bit for bit after every step. Returns the
/// number of steps taken.
pub fn loss_scale_equivalence(steps: usize) -> usize {
    use reid_core::net::Init;
    use reid_core::synth::{convergence_fixture, synth_dataset, train_split};
    use reid_core::trainer::{train_step, AdamState, MixedModel};
    use reid_core::triplet::{pk_sample, IdIndex};

    let fx = convergence_fixture();
    let data = train_split(&synth_dataset(&fx.data).unwrap());
    let index = IdIndex::new(&data.labels);
    let manifest = fx.network.manifest().unwrap();
    let plan = PrecisionPlan::uniform(&manifest, Precision::Binary32);
    let init = Init::KaimingUniform { seed: fx.init_seed };
    let mut runs: Vec<_> = [1.0f32, 1024.0]
        .into_iter()
        .map(|s| {
            let cfg = reid_core::trainer::TrainConfig {
                loss_scale: s,
                ..fx.train.clone()
            };
            let model = MixedModel::new(fx.network.clone(), plan.clone(), init).unwrap();
            let opt = AdamState::new(&model.masters, &cfg);
            (cfg, model, opt)
        })
        .collect();
    let mut taken = 0;
    for step in 0..steps {
        let batch = pk_sample(&index, 10, 4, step as u64).unwrap();
        let x = data.gather(&batch, &fx.network.input_shape).unwrap();
        let mut losses = Vec::new();
        for (cfg, model, opt) in runs.iter_mut() {
            let out = train_step(model, opt, &x, &batch.person_ids, cfg, cfg.lr0).unwrap();
            assert!(
                out.step_taken,
                "step {step} skipped at S = {}",
                cfg.loss_scale
            );
            losses.push(out.loss.to_bits());
        }
        assert_eq!(losses[0], losses[1], "loss at step {step}");
        let (a, b) = (&runs[0], &runs[1]);
        for (key, ma) in &a.1.masters {
            let mb = &b.1.masters[key];
            assert!(
                ma.data()
                    .iter()
                    .zip(mb.data())
                    .all(|(x, y)| x.to_bits() == y.to_bits()),
                "masters of `{key}` diverge at step {step}"
            );
        }
        assert_eq!(a.2, b.2, "optimizer state at step {step}");
        assert_eq!(a.1.bn, b.1.bn, "running statistics at step {step}");
        taken += 1;
    }
    taken
}

/// Flushed counts of the binary16 images of a constructed batch's gradients.
#[derive(Debug)]
pub struct FlushCounts {
    /// Smallest and largest nonzero binary32 gradient magnitude at `S = 1`.
    pub true_range: (f32, f32),
    pub nonzero: usize,
    pub unscaled: usize,
    pub scaled: usize,
}

/// A 4→4 identity linear embedding of four samples `v·a` with `v ∈ {0, 1, 3, 4}`
/// (labels `0, 0, 1, 1`) and per-feature scales `a_i = 2^-16·(1 + i/4)`. Every
/// weight gradient is `−11·a_i·a_j`, inside `[2^-30, 2^-26]`, and the bias
/// gradients vanish exactly.
pub fn small_gradient_flush() -> FlushCounts {
    use reid_core::half::count_flushed;
    use reid_core::net::{LayerSpec, NetworkSpec, ParamSet};
    use reid_core::trainer::{scaled_gradients, MixedModel, TrainConfig};

    let spec = NetworkSpec {
        input_shape: vec![4],
        layers: vec![LayerSpec::Linear {
            name: "fc".into(),
            inputs: 4,
            outputs: 4,
        }],
    };
    let plan = PrecisionPlan::uniform(&spec.manifest().unwrap(), Precision::Binary32);
    let mut masters = ParamSet::new();
    for (key, shape) in spec.param_shapes() {
        let len: usize = shape.iter().product();
        let mut data = vec![0.0f32; len];
        if key.ends_with("weight") {
            for i in 0..4 {
                data[i * 4 + i] = 1.0;
            }
        }
        masters.insert(key, Tensor::new(shape, data, Precision::Binary32).unwrap());
    }
    let model = MixedModel::from_parts(spec, plan, masters, None).unwrap();
    let scales: Vec<f32> = (0..4)
        .map(|i| 2f32.powi(-16) * (1.0 + i as f32 / 4.0))
        .collect();
    let x: Vec<f32> = [0.0f32, 1.0, 3.0, 4.0]
        .iter()
        .flat_map(|v| scales.iter().map(move |a| v * a))
        .collect();
    let x = Tensor::from_vec(vec![4, 4], x).unwrap();
    let labels = [0, 0, 1, 1];

    let image = |s: f32| -> Vec<f32> {
        let cfg = TrainConfig {
            loss_scale: s,
            ..TrainConfig::default()
        };
        let g = scaled_gradients(&model, &x, &labels, &cfg).unwrap();
        g.grads.values().flat_map(|t| t.data().to_vec()).collect()
    };
    let unscaled = image(1.0);
    let scaled = image(1024.0);
    let nonzero: Vec<f32> = unscaled
        .iter()
        .filter(|v| **v != 0.0)
        .map(|v| v.abs())
        .collect();
    FlushCounts {
        true_range: (
            nonzero.iter().copied().fold(f32::INFINITY, f32::min),
            nonzero.iter().copied().fold(0.0, f32::max),
        ),
        nonzero: nonzero.len(),
        unscaled: count_flushed(&unscaled),
        scaled: count_flushed(&scaled),
    }
}

/// End state of a convergence-fixture run under one plan.
#[derive(Debug)]
pub struct ConvergenceRun {
    pub final_loss: f32,
    pub cmc1: f64,
    pub map: f64,
    pub seconds: f64,
}

/// Trains the convergence fixture under `plan` (all-binary32 when `mixed` is
/// false, the partition otherwise) and evaluates held-out CMC-1.
pub fn convergence_run(mixed: bool) -> ConvergenceRun {
    use reid_core::net::Init;
    use reid_core::retrieval::evaluate;
    use reid_core::synth::{convergence_fixture, synth_dataset, train_split};
    use reid_core::trainer::{embed_set, fit, AdamState, MixedModel};

    let start = std::time::Instant::now();
    let fx = convergence_fixture();
    let set = synth_dataset(&fx.data).unwrap();
    let data = train_split(&set);
    let manifest = fx.network.manifest().unwrap();
    let plan = if mixed {
        partition(&manifest)
    } else {
        PrecisionPlan::uniform(&manifest, Precision::Binary32)
    };
    let mut model = MixedModel::new(
        fx.network.clone(),
        plan,
        Init::KaimingUniform { seed: fx.init_seed },
    )
    .unwrap();
    let mut opt = AdamState::new(&model.masters, &fx.train);
    let logs = fit(
        &mut model,
        &mut opt,
        &data,
        &fx.train,
        fx.sample_seed,
        |_| {},
    )
    .unwrap();
    let emb = embed_set(&model, &set, Precision::Binary32).unwrap();
    let report = &evaluate(&emb, &[1], Precision::Binary32, None).unwrap()[0];
    ConvergenceRun {
        final_loss: logs.last().unwrap().mean_loss,
        cmc1: report.cmc[&1],
        map: report.map,
        seconds: start.elapsed().as_secs_f64(),
    }
}
