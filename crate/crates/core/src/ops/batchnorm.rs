use crate::error::{Error, Result};
use crate::tensor::{Precision, Tensor};

/// Per-channel batch-norm state. Always binary32.
#[derive(Clone, Debug, PartialEq)]
pub struct BnParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub epsilon: f32,
    /// Weight kept on the old running statistics at each update.
    pub momentum: f32,
}

impl BnParams {
    pub const DEFAULT_EPSILON: f32 = 1e-5;
    pub const DEFAULT_MOMENTUM: f32 = 0.9;

    pub fn new(channels: usize) -> Self {
        BnParams {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            epsilon: Self::DEFAULT_EPSILON,
            momentum: Self::DEFAULT_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        if self.beta.len() != c || self.running_mean.len() != c || self.running_var.len() != c {
            return Err(Error::ShapeMismatch(
                "batch-norm vectors differ in length".into(),
            ));
        }
        // epsilon = 0 is allowed; it only matters for zero-variance channels
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!("epsilon {}", self.epsilon)));
        }
        if self.running_var.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument("negative running variance".into()));
        }
        Ok(())
    }
}

/// `(batch, channels, spatial)` for `[N, C, ...]`.
fn layout(x: &Tensor, p: &BnParams) -> Result<(usize, usize, usize)> {
    let shape = x.shape();
    if shape.len() < 2 {
        return Err(Error::ShapeMismatch(format!(
            "batch norm needs [N, C, ...], got {shape:?}"
        )));
    }
    let (n, c) = (shape[0], shape[1]);
    if c != p.channels() {
        return Err(Error::ShapeMismatch(format!(
            "batch norm over {} channels, input has {c}",
            p.channels()
        )));
    }
    Ok((n, c, shape[2..].iter().product()))
}

/// Per-channel batch mean and biased variance, summed in (batch, spatial) order.
fn batch_stats(x: &[f32], n: usize, c: usize, hw: usize) -> (Vec<f32>, Vec<f32>) {
    let count = (n * hw) as f32;
    let mut mean = vec![0.0f32; c];
    let mut var = vec![0.0f32; c];
    for ch in 0..c {
        let mut s = 0.0f32;
        for b in 0..n {
            let base = (b * c + ch) * hw;
            for &v in &x[base..base + hw] {
                s += v;
            }
        }
        let mu = s / count;
        let mut q = 0.0f32;
        for b in 0..n {
            let base = (b * c + ch) * hw;
            for &v in &x[base..base + hw] {
                q += (v - mu) * (v - mu);
            }
        }
        mean[ch] = mu;
        var[ch] = q / count;
    }
    (mean, var)
}

/// Batch normalization. Rejects binary16 input outright: statistics over
/// half-precision activations are not computed.
///
/// In training mode the batch statistics normalize the input and are folded
/// into the running statistics (unbiased variance); otherwise the running
/// statistics are used and `p` is left untouched.
pub fn batchnorm_forward(x: &Tensor, p: &mut BnParams, training: bool) -> Result<Tensor> {
    if x.mode() != Precision::Binary32 {
        return Err(Error::PrecisionViolation(
            "batch-norm input must be binary32".into(),
        ));
    }
    p.validate()?;
    let (n, c, hw) = layout(x, p)?;
    let xd = x.data();
    let (mean, var) = if training {
        let (mean, var) = batch_stats(xd, n, c, hw);
        let count = n * hw;
        let unbias = if count > 1 {
            count as f32 / (count - 1) as f32
        } else {
            1.0
        };
        let keep = p.momentum;
        for ch in 0..c {
            p.running_mean[ch] = keep * p.running_mean[ch] + (1.0 - keep) * mean[ch];
            p.running_var[ch] = keep * p.running_var[ch] + (1.0 - keep) * var[ch] * unbias;
        }
        (mean, var)
    } else {
        (p.running_mean.clone(), p.running_var.clone())
    };

    let mut out = vec![0.0f32; xd.len()];
    for ch in 0..c {
        let inv_std = 1.0 / (var[ch] + p.epsilon).sqrt();
        for b in 0..n {
            let base = (b * c + ch) * hw;
            for i in base..base + hw {
                out[i] = p.gamma[ch] * ((xd[i] - mean[ch]) * inv_std) + p.beta[ch];
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out, Precision::Binary32)
}

#[derive(Clone, Debug)]
pub struct BnGrads {
    pub x: Tensor,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
}

/// Training-mode batch-norm gradients; batch statistics are recomputed from `x`.
pub fn batchnorm_backward(x: &Tensor, p: &BnParams, grad_out: &Tensor) -> Result<BnGrads> {
    if x.mode() != Precision::Binary32 {
        return Err(Error::PrecisionViolation(
            "batch-norm input must be binary32".into(),
        ));
    }
    x.check_same_shape(grad_out, "batch-norm gradient")?;
    let (n, c, hw) = layout(x, p)?;
    let xd = x.data();
    let gd = grad_out.data();
    let (mean, var) = batch_stats(xd, n, c, hw);
    let count = (n * hw) as f32;

    let mut gx = vec![0.0f32; xd.len()];
    let mut g_gamma = vec![0.0f32; c];
    let mut g_beta = vec![0.0f32; c];
    for ch in 0..c {
        let inv_std = 1.0 / (var[ch] + p.epsilon).sqrt();
        let (mut sum_g, mut sum_gx) = (0.0f32, 0.0f32);
        for b in 0..n {
            let base = (b * c + ch) * hw;
            for i in base..base + hw {
                sum_g += gd[i];
                sum_gx += gd[i] * ((xd[i] - mean[ch]) * inv_std);
            }
        }
        g_beta[ch] = sum_g;
        g_gamma[ch] = sum_gx;
        let scale = p.gamma[ch] * inv_std / count;
        for b in 0..n {
            let base = (b * c + ch) * hw;
            for i in base..base + hw {
                let x_hat = (xd[i] - mean[ch]) * inv_std;
                gx[i] = scale * (count * gd[i] - sum_g - x_hat * sum_gx);
            }
        }
    }
    Ok(BnGrads {
        x: Tensor::new(x.shape().to_vec(), gx, Precision::Binary32)?,
        gamma: g_gamma,
        beta: g_beta,
    })
}
