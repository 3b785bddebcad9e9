use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Precision, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConvKind {
    /// Full cross-channel K×K filtering.
    Standard,
    /// One K×K filter per input channel.
    Depthwise,
    /// 1×1 channel mixing.
    Pointwise,
}

/// Geometry of a square-kernel 2-D convolution with `K × K × M × N` weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kind: ConvKind,
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn standard(kernel: usize, in_channels: usize, out_channels: usize) -> Self {
        ConvSpec {
            kind: ConvKind::Standard,
            kernel,
            in_channels,
            out_channels,
            stride: 1,
            padding: kernel / 2,
        }
    }

    pub fn depthwise(kernel: usize, channels: usize) -> Self {
        ConvSpec {
            kind: ConvKind::Depthwise,
            kernel,
            in_channels: channels,
            out_channels: channels,
            stride: 1,
            padding: kernel / 2,
        }
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        ConvSpec {
            kind: ConvKind::Pointwise,
            kernel: 1,
            in_channels,
            out_channels,
            stride: 1,
            padding: 0,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.in_channels == 0 || self.out_channels == 0 || self.stride == 0 {
            return Err(Error::InvalidSpec(format!(
                "zero-sized dimension in {self:?}"
            )));
        }
        match self.kind {
            ConvKind::Pointwise if self.kernel != 1 => Err(Error::InvalidSpec(format!(
                "pointwise convolution needs K = 1, got {}",
                self.kernel
            ))),
            ConvKind::Depthwise if self.in_channels != self.out_channels => {
                Err(Error::InvalidSpec(format!(
                    "depthwise convolution needs N = M, got M = {} N = {}",
                    self.in_channels, self.out_channels
                )))
            }
            _ => Ok(()),
        }
    }

    fn groups(&self) -> usize {
        match self.kind {
            ConvKind::Depthwise => self.in_channels,
            _ => 1,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let span = |d: usize| -> Result<usize> {
            let padded = d + 2 * self.padding;
            if padded < self.kernel {
                return Err(Error::ShapeMismatch(format!(
                    "kernel {} exceeds padded input extent {padded}",
                    self.kernel
                )));
            }
            Ok((padded - self.kernel) / self.stride + 1)
        };
        Ok((span(h)?, span(w)?))
    }

    pub fn weight_count(&self) -> usize {
        conv_weight_shape(self).iter().product()
    }
}

/// `[N, M / groups, K, K]`: `[N, M, K, K]` for standard and pointwise, `[M, 1, K, K]` for depthwise.
pub fn conv_weight_shape(spec: &ConvSpec) -> Vec<usize> {
    vec![
        spec.out_channels,
        spec.in_channels / spec.groups(),
        spec.kernel,
        spec.kernel,
    ]
}

struct Geometry {
    batch: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    cpg: usize,
    opg: usize,
}

fn geometry(x: &Tensor, w: &Tensor, spec: &ConvSpec) -> Result<Geometry> {
    spec.validate()?;
    let (batch, c, h, wd) = x.dims4()?;
    if c != spec.in_channels {
        return Err(Error::ShapeMismatch(format!(
            "conv expects {} input channels, got {c}",
            spec.in_channels
        )));
    }
    let expected = conv_weight_shape(spec);
    if w.shape() != expected.as_slice() {
        return Err(Error::ShapeMismatch(format!(
            "conv weight shape {:?}, expected {expected:?}",
            w.shape()
        )));
    }
    let (oh, ow) = spec.output_hw(h, wd)?;
    let groups = spec.groups();
    Ok(Geometry {
        batch,
        h,
        w: wd,
        oh,
        ow,
        cpg: spec.in_channels / groups,
        opg: spec.out_channels / groups,
    })
}

/// Direct convolution over NCHW input with zero padding.
pub fn conv2d_forward(x: &Tensor, w: &Tensor, spec: &ConvSpec, mode: Precision) -> Result<Tensor> {
    let g = geometry(x, w, spec)?;
    let x = x.to_mode(mode);
    let w = w.to_mode(mode);
    let (xd, wd) = (x.data(), w.data());
    let (k, s, p) = (spec.kernel, spec.stride, spec.padding);
    let m = spec.in_channels;
    let n_out = spec.out_channels;

    let mut out = vec![0.0f32; g.batch * n_out * g.oh * g.ow];
    for b in 0..g.batch {
        for o in 0..n_out {
            let c0 = (o / g.opg) * g.cpg;
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut acc = 0.0f32;
                    for ci in 0..g.cpg {
                        let c = c0 + ci;
                        let xbase = (b * m + c) * g.h * g.w;
                        let wbase = (o * g.cpg + ci) * k * k;
                        for ky in 0..k {
                            let Some(iy) = (oy * s + ky).checked_sub(p).filter(|&v| v < g.h) else {
                                continue;
                            };
                            for kx in 0..k {
                                let Some(ix) = (ox * s + kx).checked_sub(p).filter(|&v| v < g.w)
                                else {
                                    continue;
                                };
                                acc += xd[xbase + iy * g.w + ix] * wd[wbase + ky * k + kx];
                            }
                        }
                    }
                    out[((b * n_out + o) * g.oh + oy) * g.ow + ox] = acc;
                }
            }
        }
    }
    Tensor::new(vec![g.batch, n_out, g.oh, g.ow], out, mode)
}

/// Gradients of [`conv2d_forward`] with respect to input and weights.
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    grad_out: &Tensor,
    spec: &ConvSpec,
    mode: Precision,
) -> Result<(Tensor, Tensor)> {
    let g = geometry(x, w, spec)?;
    let n_out = spec.out_channels;
    let expected = [g.batch, n_out, g.oh, g.ow];
    if grad_out.shape() != expected {
        return Err(Error::ShapeMismatch(format!(
            "conv grad shape {:?}, expected {expected:?}",
            grad_out.shape()
        )));
    }
    let x = x.to_mode(mode);
    let w = w.to_mode(mode);
    let go = grad_out.to_mode(mode);
    let (xd, wd, gd) = (x.data(), w.data(), go.data());
    let (k, s, p) = (spec.kernel, spec.stride, spec.padding);
    let m = spec.in_channels;

    let mut gx = vec![0.0f32; xd.len()];
    let mut gw = vec![0.0f32; wd.len()];
    for b in 0..g.batch {
        for o in 0..n_out {
            let c0 = (o / g.opg) * g.cpg;
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let gv = gd[((b * n_out + o) * g.oh + oy) * g.ow + ox];
                    if gv == 0.0 {
                        continue;
                    }
                    for ci in 0..g.cpg {
                        let xbase = (b * m + c0 + ci) * g.h * g.w;
                        let wbase = (o * g.cpg + ci) * k * k;
                        for ky in 0..k {
                            let Some(iy) = (oy * s + ky).checked_sub(p).filter(|&v| v < g.h) else {
                                continue;
                            };
                            for kx in 0..k {
                                let Some(ix) = (ox * s + kx).checked_sub(p).filter(|&v| v < g.w)
                                else {
                                    continue;
                                };
                                let xi = xbase + iy * g.w + ix;
                                let wi = wbase + ky * k + kx;
                                gw[wi] += gv * xd[xi];
                                gx[xi] += gv * wd[wi];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), gx, mode)?,
        Tensor::new(w.shape().to_vec(), gw, mode)?,
    ))
}
