//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

pub mod checks;
pub mod gradcheck;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Reference binary16 rounding by table lookup: all finite non-negative
/// binary16 values in ascending order, searched in binary64.
pub struct Binary16Table {
    values: Vec<f64>,
}

impl Binary16Table {
    pub fn new() -> Self {
        // Positive finite patterns 0x0000..=0x7BFF, decoded from the format definition.
        let values = (0u16..=0x7BFF)
            .map(|bits| {
                let exp = (bits >> 10) as i32;
                let man = (bits & 0x3FF) as f64;
                if exp == 0 {
                    man * 2f64.powi(-24)
                } else {
                    (1.0 + man / 1024.0) * 2f64.powi(exp - 15)
                }
            })
            .collect();
        Binary16Table { values }
    }

    pub fn value(&self, bits: u16) -> f64 {
        let mag = self.values[(bits & 0x7FFF) as usize];
        if bits & 0x8000 != 0 {
            -mag
        } else {
            mag
        }
    }

    /// Round-to-nearest-even image of `x` as a bit pattern.
    pub fn round(&self, x: f64) -> u16 {
        if x.is_nan() {
            return 0x7E00;
        }
        let sign = if x.is_sign_negative() { 0x8000 } else { 0 };
        let a = x.abs();
        // halfway between MAX (65504) and the next would-be value 65536
        if a >= 65520.0 {
            return sign | 0x7C00;
        }
        let idx = self.values.partition_point(|&v| v <= a);
        // values[idx - 1] <= a < values[idx]
        let lo = idx - 1;
        let bits = if self.values[lo] == a || lo + 1 == self.values.len() {
            lo
        } else {
            let (dl, dh) = (a - self.values[lo], self.values[lo + 1] - a);
            if dl < dh {
                lo
            } else if dh < dl {
                lo + 1
            } else if lo % 2 == 0 {
                lo
            } else {
                lo + 1
            }
        };
        sign | bits as u16
    }
}

/// Largest relative deviation `|a - n| / max(|a|, |n|, floor)` over all coordinates.
pub fn max_rel_error(analytic: &[f32], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let a = a as f64;
            (a - n).abs() / a.abs().max(n.abs()).max(floor)
        })
        .fold(0.0, f64::max)
}

/// Scalar objective `Σ out · weights`, accumulated in binary64.
pub fn project(out: &[f32], weights: &[f32]) -> f64 {
    out.iter()
        .zip(weights)
        .map(|(&a, &b)| a as f64 * b as f64)
        .sum()
}

/// Nested-loop convolution of binary32 data, evaluated in binary64.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv(
    x: &[f32],
    shape: (usize, usize, usize, usize),
    w: &[f32],
    out_ch: usize,
    k: usize,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Vec<f64> {
    naive_conv64(&widen(x), shape, &widen(w), out_ch, k, stride, pad, groups)
}

/// Central-difference derivative of a binary64 function.
pub fn numeric_grad64(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

pub fn widen(x: &[f32]) -> Vec<f64> {
    x.iter().map(|&v| v as f64).collect()
}

pub fn project64(out: &[f64], weights: &[f32]) -> f64 {
    out.iter().zip(weights).map(|(&a, &b)| a * b as f64).sum()
}

/// `x · w + b` in binary64; `x: [n, fan_in]`, `w: [fan_in, fan_out]`.
pub fn ref_linear(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    n: usize,
    fan_in: usize,
    fan_out: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; n * fan_out];
    for s in 0..n {
        for o in 0..fan_out {
            out[s * fan_out + o] = b[o]
                + (0..fan_in)
                    .map(|i| x[s * fan_in + i] * w[i * fan_out + o])
                    .sum::<f64>();
        }
    }
    out
}

/// Training-mode batch norm over `[n, c, hw]` in binary64 (biased variance).
pub fn ref_batchnorm(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    n: usize,
    c: usize,
    hw: usize,
    eps: f64,
) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    let m = (n * hw) as f64;
    for ch in 0..c {
        let idx = |b: usize, i: usize| (b * c + ch) * hw + i;
        let mean = (0..n)
            .flat_map(|b| (0..hw).map(move |i| (b, i)))
            .map(|(b, i)| x[idx(b, i)])
            .sum::<f64>()
            / m;
        let var = (0..n)
            .flat_map(|b| (0..hw).map(move |i| (b, i)))
            .map(|(b, i)| (x[idx(b, i)] - mean).powi(2))
            .sum::<f64>()
            / m;
        for b in 0..n {
            for i in 0..hw {
                out[idx(b, i)] = gamma[ch] * (x[idx(b, i)] - mean) / (var + eps).sqrt() + beta[ch];
            }
        }
    }
    out
}

/// Non-overlapping average pooling over `[planes, h, w]` in binary64.
pub fn ref_avgpool(x: &[f64], planes: usize, h: usize, w: usize, kh: usize, kw: usize) -> Vec<f64> {
    let (oh, ow) = (h / kh, w / kw);
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        for y in 0..h {
            for xx in 0..w {
                out[(p * oh + y / kh) * ow + xx / kw] += x[(p * h + y) * w + xx] / (kh * kw) as f64;
            }
        }
    }
    out
}

/// [`naive_conv`] on binary64 inputs.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv64(
    x: &[f64],
    shape: (usize, usize, usize, usize),
    w: &[f64],
    out_ch: usize,
    k: usize,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Vec<f64> {
    let (n, c, h, wd) = shape;
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let cpg = c / groups;
    let opg = out_ch / groups;
    let mut out = vec![0.0f64; n * out_ch * oh * ow];
    for b in 0..n {
        for o in 0..out_ch {
            let g = o / opg;
            for y in 0..oh {
                for xx in 0..ow {
                    let mut s = 0.0f64;
                    for ci in 0..cpg {
                        let ch = g * cpg + ci;
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xx * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                s += x[((b * c + ch) * h + iy as usize) * wd + ix as usize]
                                    * w[((o * cpg + ci) * k + ky) * k + kx];
                            }
                        }
                    }
                    out[((b * out_ch + o) * oh + y) * ow + xx] = s;
                }
            }
        }
    }
    out
}

pub fn max_abs_diff(a: &[f32], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y).abs())
        .fold(0.0, f64::max)
}

pub struct OracleTriplets {
    pub loss: f64,
    /// Per anchor: hardest positive, hardest negative, `d(a,p) − d(a,n) + margin`.
    pub anchors: Vec<(usize, usize, f64)>,
    /// Smallest distance between a mining choice and its runner-up, or between
    /// a hinge argument and zero.
    pub min_gap: f64,
}

/// Exhaustive batch-hard mining in binary64; ties go to the lower index.
pub fn batch_hard_oracle(
    x: &[f64],
    labels: &[u32],
    dim: usize,
    margin: f64,
    squared: bool,
) -> OracleTriplets {
    let n = labels.len();
    let dist = |i: usize, j: usize| {
        let s: f64 = (0..dim)
            .map(|d| (x[i * dim + d] - x[j * dim + d]).powi(2))
            .sum();
        if squared {
            s
        } else {
            s.sqrt()
        }
    };
    let mut anchors = Vec::with_capacity(n);
    let mut min_gap = f64::INFINITY;
    let mut total = 0.0;
    for a in 0..n {
        let mut pos: Vec<(f64, usize)> = Vec::new();
        let mut neg: Vec<(f64, usize)> = Vec::new();
        for j in 0..n {
            if j == a {
                continue;
            }
            if labels[j] == labels[a] {
                pos.push((dist(a, j), j))
            } else {
                neg.push((dist(a, j), j))
            }
        }
        // farthest positive, nearest negative; strict comparisons keep the lower index
        let mut hp = pos[0];
        for &c in &pos[1..] {
            if c.0 > hp.0 {
                hp = c;
            }
        }
        let mut hn = neg[0];
        for &c in &neg[1..] {
            if c.0 < hn.0 {
                hn = c;
            }
        }
        for &(d, j) in &pos {
            if j != hp.1 {
                min_gap = min_gap.min(hp.0 - d);
            }
        }
        for &(d, j) in &neg {
            if j != hn.1 {
                min_gap = min_gap.min(d - hn.0);
            }
        }
        let arg = hp.0 - hn.0 + margin;
        min_gap = min_gap.min(arg.abs());
        total += arg.max(0.0);
        anchors.push((hp.1, hn.1, arg));
    }
    OracleTriplets {
        loss: total / n as f64,
        anchors,
        min_gap,
    }
}
