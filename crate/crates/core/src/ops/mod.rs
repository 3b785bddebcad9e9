//! Layer kernels. Forward and backward passes accumulate in binary32; results
//! are rounded into the requested storage precision on write.

mod activation;
mod batchnorm;
mod conv;
mod gemm;
mod linear;
mod pool;

pub use activation::{relu, relu_backward, residual_add, residual_add_backward};
pub use batchnorm::{batchnorm_backward, batchnorm_forward, BnGrads, BnParams};
pub use conv::{conv2d_backward, conv2d_forward, conv_weight_shape, ConvKind, ConvSpec};
pub use gemm::gemm;
pub(crate) use gemm::matmul_into;
pub use linear::{linear_backward, linear_forward, LinearGrads};
pub use pool::{avgpool2d, avgpool2d_backward};
