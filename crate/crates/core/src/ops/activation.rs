use crate::error::Result;
use crate::tensor::{Precision, Tensor};

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Passes `grad_out` where `x > 0`; the subgradient at exactly zero is zero.
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    x.check_same_shape(grad_out, "relu gradient")?;
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&xv, &g)| if xv > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(x.shape().to_vec(), data, grad_out.mode())
}

/// Shortcut connection `x + f(x)`. The sum is binary16 only when both inputs are.
pub fn residual_add(x: &Tensor, fx: &Tensor) -> Result<Tensor> {
    x.check_same_shape(fx, "residual add")?;
    let mode = if x.mode() == Precision::Binary16 && fx.mode() == Precision::Binary16 {
        Precision::Binary16
    } else {
        Precision::Binary32
    };
    let data = x.data().iter().zip(fx.data()).map(|(a, b)| a + b).collect();
    Tensor::new(x.shape().to_vec(), data, mode)
}

/// Gradient for both branches of [`residual_add`]: each receives `grad_out` unchanged.
pub fn residual_add_backward(grad_out: &Tensor) -> (Tensor, Tensor) {
    (grad_out.clone(), grad_out.clone())
}
