use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn windows(x: &Tensor, kh: usize, kw: usize) -> Result<(usize, usize, usize, usize)> {
    let (n, c, h, w) = x.dims4()?;
    if kh == 0 || kw == 0 || h % kh != 0 || w % kw != 0 {
        return Err(Error::ShapeMismatch(format!(
            "pool window ({kh}, {kw}) does not tile a {h}×{w} map"
        )));
    }
    Ok((n, c, h, w))
}

/// Non-overlapping average pooling, `[N, C, H, W] -> [N, C, H/kh, W/kw]`.
///
/// A window covering the whole map yields one value per channel, i.e. the
/// embedding vector of a backbone head.
pub fn avgpool2d(x: &Tensor, kh: usize, kw: usize) -> Result<Tensor> {
    let (n, c, h, w) = windows(x, kh, kw)?;
    let (oh, ow) = (h / kh, w / kw);
    let area = (kh * kw) as f32;
    let xd = x.data();
    let mut out = vec![0.0f32; n * c * oh * ow];
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = 0.0f32;
                for dy in 0..kh {
                    for dx in 0..kw {
                        s += xd[base + (oy * kh + dy) * w + ox * kw + dx];
                    }
                }
                out[(plane * oh + oy) * ow + ox] = s / area;
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out, x.mode())
}

/// Spreads each pooled gradient evenly, `1 / (kh·kw)` per input cell.
pub fn avgpool2d_backward(
    x_shape: &[usize],
    grad_out: &Tensor,
    kh: usize,
    kw: usize,
) -> Result<Tensor> {
    let probe = Tensor::zeros(x_shape.to_vec(), grad_out.mode());
    let (n, c, h, w) = windows(&probe, kh, kw)?;
    let (oh, ow) = (h / kh, w / kw);
    if grad_out.len() != n * c * oh * ow {
        return Err(Error::ShapeMismatch(format!(
            "pool gradient {:?} for input {x_shape:?}",
            grad_out.shape()
        )));
    }
    let area = (kh * kw) as f32;
    let gd = grad_out.data();
    let mut gx = vec![0.0f32; n * c * h * w];
    for plane in 0..n * c {
        for y in 0..h {
            for x in 0..w {
                gx[(plane * h + y) * w + x] = gd[(plane * oh + y / kh) * ow + x / kw] / area;
            }
        }
    }
    Tensor::new(x_shape.to_vec(), gx, grad_out.mode())
}
