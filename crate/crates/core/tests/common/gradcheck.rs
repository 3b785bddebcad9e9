//! Finite-difference checks of every backward kernel.
//!
//! The analytic gradients come from the binary32 kernels. The numeric side
//! differentiates an independent binary64 reference forward, because binary32
//! central differences carry ~1e-3 relative rounding noise at step 1e-3.
//! Each binary32 forward is also compared against its reference. Every check
//! panics on failure.

use super::*;
use rand::Rng;
use reid_core::ops::{
    avgpool2d, avgpool2d_backward, batchnorm_backward, batchnorm_forward, conv2d_backward,
    conv2d_forward, conv_weight_shape, linear_backward, linear_forward, relu, relu_backward,
    residual_add, residual_add_backward, BnParams, ConvKind, ConvSpec,
};
use reid_core::triplet::{batch_hard_triplet_loss_with, triplet_loss_backward, DistanceKind};
use reid_core::{Precision, Tensor};

const SEEDS: u64 = 20;
const STEP: f64 = 1e-3;
const TOL: f64 = 1e-4;
/// Relative error is measured against `max(|analytic|, |numeric|, FLOOR)`:
/// derivatives under 0.01 in magnitude are held to an absolute 1e-6, which is
/// the binary32 accumulation error of O(1)-sized terms.
const FLOOR: f64 = 1e-2;
const B32: Precision = Precision::Binary32;

fn t(shape: &[usize], data: Vec<f32>) -> Tensor {
    Tensor::from_vec(shape.to_vec(), data).unwrap()
}

fn check(label: &str, seed: u64, analytic: &[f32], numeric: &[f64]) -> f64 {
    let err = max_rel_error(analytic, numeric, FLOOR);
    assert!(err < TOL, "{label} seed {seed}: max relative error {err:e}");
    err
}

pub fn conv_case(spec: ConvSpec, label: &str) {
    let groups = if spec.kind == ConvKind::Depthwise {
        spec.in_channels
    } else {
        1
    };
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let (n, h, w) = (2, 5, 4);
        let xshape = [n, spec.in_channels, h, w];
        let wshape = conv_weight_shape(&spec);
        let x = uniform_vec(&mut r, xshape.iter().product(), -1.0, 1.0);
        let wt = uniform_vec(&mut r, wshape.iter().product(), -1.0, 1.0);
        let (oh, ow) = spec.output_hw(h, w).unwrap();
        let proj = uniform_vec(&mut r, n * spec.out_channels * oh * ow, -1.0, 1.0);
        let dims = (n, spec.in_channels, h, w);
        let reference = |x: &[f64], w: &[f64]| {
            naive_conv64(
                x,
                dims,
                w,
                spec.out_channels,
                spec.kernel,
                spec.stride,
                spec.padding,
                groups,
            )
        };

        let y =
            conv2d_forward(&t(&xshape, x.clone()), &t(&wshape, wt.clone()), &spec, B32).unwrap();
        assert!(max_abs_diff(y.data(), &reference(&widen(&x), &widen(&wt))) < 1e-5);

        let g = t(&[n, spec.out_channels, oh, ow], proj.clone());
        let (gx, gw) = conv2d_backward(
            &t(&xshape, x.clone()),
            &t(&wshape, wt.clone()),
            &g,
            &spec,
            B32,
        )
        .unwrap();
        let (x64, w64) = (widen(&x), widen(&wt));
        let nx = numeric_grad64(&x64, STEP, |xp| project64(&reference(xp, &w64), &proj));
        let nw = numeric_grad64(&w64, STEP, |wp| project64(&reference(&x64, wp), &proj));
        worst = worst.max(check(label, seed, gx.data(), &nx));
        worst = worst.max(check(label, seed, gw.data(), &nw));
    }
    assert!(worst < 1e-4);
}

pub fn standard_conv_gradients() {
    conv_case(ConvSpec::standard(3, 2, 3), "standard conv");
    conv_case(
        ConvSpec::standard(3, 2, 3).with_stride(2),
        "strided standard conv",
    );
}

pub fn depthwise_conv_gradients() {
    conv_case(ConvSpec::depthwise(3, 3), "depthwise conv");
}

pub fn pointwise_conv_gradients() {
    conv_case(ConvSpec::pointwise(3, 4), "pointwise conv");
}

pub fn linear_gradients() {
    let mut worst = 0.0f64;
    let (n, fan_in, fan_out) = (4, 5, 3);
    for seed in 0..SEEDS {
        let mut r = rng(100 + seed);
        let x = uniform_vec(&mut r, n * fan_in, -1.0, 1.0);
        let w = uniform_vec(&mut r, fan_in * fan_out, -1.0, 1.0);
        let b = uniform_vec(&mut r, fan_out, -1.0, 1.0);
        let proj = uniform_vec(&mut r, n * fan_out, -1.0, 1.0);
        let (x64, w64, b64) = (widen(&x), widen(&w), widen(&b));
        let obj = |x: &[f64], w: &[f64], b: &[f64]| {
            project64(&ref_linear(x, w, b, n, fan_in, fan_out), &proj)
        };
        let grads = linear_backward(
            &t(&[n, fan_in], x.clone()),
            &t(&[fan_in, fan_out], w.clone()),
            &t(&[n, fan_out], proj.clone()),
            B32,
        )
        .unwrap();
        let nx = numeric_grad64(&x64, STEP, |p| obj(p, &w64, &b64));
        let nw = numeric_grad64(&w64, STEP, |p| obj(&x64, p, &b64));
        let nb = numeric_grad64(&b64, STEP, |p| obj(&x64, &w64, p));
        worst = worst.max(check("linear x", seed, grads.x.data(), &nx));
        worst = worst.max(check("linear w", seed, grads.w.data(), &nw));
        worst = worst.max(check("linear b", seed, grads.b.data(), &nb));
    }
    assert!(worst < 1e-4);
}

pub fn batchnorm_gradients() {
    let mut worst = 0.0f64;
    let (n, c) = (8, 4);
    for seed in 0..SEEDS {
        let mut r = rng(200 + seed);
        let x = uniform_vec(&mut r, n * c, -2.0, 2.0);
        let mut p = BnParams::new(c);
        p.gamma = uniform_vec(&mut r, c, 0.5, 1.5);
        p.beta = uniform_vec(&mut r, c, -0.5, 0.5);
        let proj = uniform_vec(&mut r, n * c, -1.0, 1.0);
        let eps = p.epsilon as f64;
        let (x64, g64, b64) = (widen(&x), widen(&p.gamma), widen(&p.beta));
        let obj = |x: &[f64], g: &[f64], b: &[f64]| {
            project64(&ref_batchnorm(x, g, b, n, c, 1, eps), &proj)
        };

        let y = batchnorm_forward(&t(&[n, c], x.clone()), &mut p.clone(), true).unwrap();
        assert!(max_abs_diff(y.data(), &ref_batchnorm(&x64, &g64, &b64, n, c, 1, eps)) < 1e-5);

        let grads =
            batchnorm_backward(&t(&[n, c], x.clone()), &p, &t(&[n, c], proj.clone())).unwrap();
        let nx = numeric_grad64(&x64, STEP, |v| obj(v, &g64, &b64));
        let ng = numeric_grad64(&g64, STEP, |v| obj(&x64, v, &b64));
        let nb = numeric_grad64(&b64, STEP, |v| obj(&x64, &g64, v));
        worst = worst.max(check("bn x", seed, grads.x.data(), &nx));
        worst = worst.max(check("bn gamma", seed, &grads.gamma, &ng));
        worst = worst.max(check("bn beta", seed, &grads.beta, &nb));
    }
    assert!(worst < 1e-4);
}

pub fn batchnorm_spatial_gradients() {
    let (n, c, h, w) = (3, 2, 2, 3);
    for seed in 0..SEEDS {
        let mut r = rng(250 + seed);
        let x = uniform_vec(&mut r, n * c * h * w, -1.0, 1.0);
        let proj = uniform_vec(&mut r, n * c * h * w, -1.0, 1.0);
        let p = BnParams::new(c);
        let shape = [n, c, h, w];
        let grads =
            batchnorm_backward(&t(&shape, x.clone()), &p, &t(&shape, proj.clone())).unwrap();
        let (g64, b64) = (widen(&p.gamma), widen(&p.beta));
        let nx = numeric_grad64(&widen(&x), STEP, |v| {
            project64(
                &ref_batchnorm(v, &g64, &b64, n, c, h * w, p.epsilon as f64),
                &proj,
            )
        });
        check("bn nchw x", seed, grads.x.data(), &nx);
    }
}

pub fn batchnorm_beta_gradient_is_channel_sum() {
    let mut r = rng(7);
    let (n, c, h, w) = (3, 2, 2, 2);
    let x = uniform_vec(&mut r, n * c * h * w, -1.0, 1.0);
    let g = uniform_vec(&mut r, n * c * h * w, -1.0, 1.0);
    let shape = [n, c, h, w];
    let grads =
        batchnorm_backward(&t(&shape, x), &BnParams::new(c), &t(&shape, g.clone())).unwrap();
    for ch in 0..c {
        let mut s = 0.0f32;
        for b in 0..n {
            for i in 0..h * w {
                s += g[(b * c + ch) * h * w + i];
            }
        }
        assert_eq!(grads.beta[ch].to_bits(), s.to_bits());
    }
}

pub fn relu_gradients() {
    for seed in 0..SEEDS {
        let mut r = rng(300 + seed);
        // every coordinate stays at least ten steps away from the kink
        let x: Vec<f32> = (0..24)
            .map(|_| {
                let m = r.random_range(0.01f32..2.0);
                if r.random_bool(0.5) {
                    m
                } else {
                    -m
                }
            })
            .collect();
        let proj = uniform_vec(&mut r, 24, -1.0, 1.0);
        let g = relu_backward(&t(&[24], x.clone()), &t(&[24], proj.clone())).unwrap();
        let nx = numeric_grad64(&widen(&x), STEP, |v| {
            let y: Vec<f64> = v.iter().map(|&a| a.max(0.0)).collect();
            project64(&y, &proj)
        });
        check("relu", seed, g.data(), &nx);
    }
}

pub fn avgpool_gradients() {
    for seed in 0..SEEDS {
        let mut r = rng(400 + seed);
        let shape = [2, 3, 4, 6];
        let x = uniform_vec(&mut r, 144, -1.0, 1.0);
        let proj = uniform_vec(&mut r, 2 * 3 * 2 * 2, -1.0, 1.0);
        let y = avgpool2d(&t(&shape, x.clone()), 2, 3).unwrap();
        assert!(max_abs_diff(y.data(), &ref_avgpool(&widen(&x), 6, 4, 6, 2, 3)) < 1e-6);
        let g = avgpool2d_backward(&shape, &t(&[2, 3, 2, 2], proj.clone()), 2, 3).unwrap();
        let nx = numeric_grad64(&widen(&x), STEP, |v| {
            project64(&ref_avgpool(v, 6, 4, 6, 2, 3), &proj)
        });
        check("avgpool", seed, g.data(), &nx);
    }
}

/// `y = x + relu(x·W1 + b1)·W2 + b2`, chained by hand through the kernels.
pub fn residual_block_gradients() {
    let (n, d, hidden) = (3, 4, 5);
    let mut checked = 0;
    for seed in 0..SEEDS {
        let mut r = rng(500 + seed);
        let x = uniform_vec(&mut r, n * d, -1.0, 1.0);
        let w1 = uniform_vec(&mut r, d * hidden, -1.0, 1.0);
        let b1 = uniform_vec(&mut r, hidden, -0.1, 0.1);
        let w2 = uniform_vec(&mut r, hidden * d, -1.0, 1.0);
        let b2 = uniform_vec(&mut r, d, -0.1, 0.1);
        let proj = uniform_vec(&mut r, n * d, -1.0, 1.0);

        let xt = t(&[n, d], x.clone());
        let (w1t, b1t) = (t(&[d, hidden], w1.clone()), t(&[hidden], b1.clone()));
        let (w2t, b2t) = (t(&[hidden, d], w2.clone()), t(&[d], b2.clone()));
        let h = linear_forward(&xt, &w1t, &b1t, B32).unwrap();
        // skip draws whose pre-activations sit near the ReLU kink
        if h.data().iter().any(|v| v.abs() < 0.05) {
            continue;
        }
        let a = relu(&h);
        let f = linear_forward(&a, &w2t, &b2t, B32).unwrap();
        let _y = residual_add(&xt, &f).unwrap();

        let g = t(&[n, d], proj.clone());
        let (g_skip, g_branch) = residual_add_backward(&g);
        let g2 = linear_backward(&a, &w2t, &g_branch, B32).unwrap();
        let gh = relu_backward(&h, &g2.x).unwrap();
        let g1 = linear_backward(&xt, &w1t, &gh, B32).unwrap();
        let gx = residual_add(&g_skip, &g1.x).unwrap();

        let (w164, b164, w264, b264) = (widen(&w1), widen(&b1), widen(&w2), widen(&b2));
        let nx = numeric_grad64(&widen(&x), STEP, |v| {
            let hid: Vec<f64> = ref_linear(v, &w164, &b164, n, d, hidden)
                .into_iter()
                .map(|z| z.max(0.0))
                .collect();
            let f = ref_linear(&hid, &w264, &b264, n, hidden, d);
            let y: Vec<f64> = v.iter().zip(&f).map(|(a, b)| a + b).collect();
            project64(&y, &proj)
        });
        check("residual block", seed, gx.data(), &nx);
        checked += 1;
    }
    assert!(checked >= 5, "too few usable residual draws: {checked}");
}

/// Batch-hard triplet loss with the binary64 oracle as reference. Draws where
/// mining or a hinge sits within 1e-2 of switching are skipped.
pub fn triplet_loss_gradients(kind: DistanceKind) {
    let (p, k, dim) = (3, 3, 4);
    let n = p * k;
    let labels: Vec<u32> = (0..n as u32).map(|i| i / k as u32).collect();
    let squared = kind == DistanceKind::Squared;
    let mut checked = 0;
    for seed in 0..4 * SEEDS {
        let mut r = rng(600 + seed);
        let x = uniform_vec(&mut r, n * dim, -1.0, 1.0);
        let x64 = widen(&x);
        let reference = batch_hard_oracle(&x64, &labels, dim, 0.3, squared);
        if reference.min_gap < 1e-2 {
            continue;
        }
        let emb = t(&[n, dim], x.clone());
        let out = batch_hard_triplet_loss_with(&emb, &labels, 0.3, kind).unwrap();
        assert!((out.loss as f64 - reference.loss).abs() < 1e-5);
        let g = triplet_loss_backward(&emb, &out, kind).unwrap();
        let nx = numeric_grad64(&x64, STEP, |v| {
            batch_hard_oracle(v, &labels, dim, 0.3, squared).loss
        });
        check("triplet loss", seed, g.data(), &nx);
        checked += 1;
        if checked == SEEDS {
            break;
        }
    }
    assert_eq!(checked, SEEDS, "too few stable triplet draws");
}
