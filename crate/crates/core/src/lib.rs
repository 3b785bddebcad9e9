//! Mixed-precision metric learning for person re-identification: emulated
//! binary16 arithmetic, tensor kernels with hand-written gradients, batch-hard
//! triplet training with binary32 master weights and loss scaling, retrieval
//! evaluation with k-reciprocal re-ranking, and a precision planner.

pub mod error;
pub mod half;
pub mod io;
pub mod net;
pub mod ops;
pub mod planner;
pub mod retrieval;
pub mod synth;
pub mod tensor;
pub mod trainer;
pub mod triplet;

pub use error::{Error, Result};
pub use half::Half16;
pub use tensor::{Precision, Tensor};
