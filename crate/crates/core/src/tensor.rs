use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::half;

/// Storage precision. `Binary16` tensors keep wide `f32` storage but every
/// stored element has been rounded through binary16.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Precision {
    Binary32,
    Binary16,
}

impl Precision {
    pub fn round(self, x: f32) -> f32 {
        match self {
            Precision::Binary32 => x,
            Precision::Binary16 => half::quantize(x),
        }
    }

    pub fn round_slice(self, xs: &mut [f32]) {
        if self == Precision::Binary16 {
            for x in xs {
                *x = half::quantize(*x);
            }
        }
    }

    pub fn bytes_per_element(self) -> usize {
        match self {
            Precision::Binary32 => 4,
            Precision::Binary16 => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Precision::Binary32 => "binary32",
            Precision::Binary16 => "binary16",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "binary32" | "fp32" | "f32" | "b32" => Ok(Precision::Binary32),
            "binary16" | "fp16" | "f16" | "b16" => Ok(Precision::Binary16),
            other => Err(Error::InvalidArgument(format!(
                "unknown precision `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    mode: Precision,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds a tensor, rounding `data` into `mode`.
    pub fn new(shape: Vec<usize>, mut data: Vec<f32>, mode: Precision) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} holds {n} elements, got {}",
                data.len()
            )));
        }
        mode.round_slice(&mut data);
        Ok(Tensor { shape, mode, data })
    }

    pub fn from_vec(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Tensor::new(shape, data, Precision::Binary32)
    }

    pub fn zeros(shape: Vec<usize>, mode: Precision) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            mode,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(x: f32) -> Self {
        Tensor {
            shape: vec![1],
            mode: Precision::Binary32,
            data: vec![x],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn mode(&self) -> Precision {
        self.mode
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Re-stores the values in `mode`. Widening is exact.
    pub fn to_mode(&self, mode: Precision) -> Tensor {
        let mut data = self.data.clone();
        if mode != self.mode {
            mode.round_slice(&mut data);
        }
        Tensor {
            shape: self.shape.clone(),
            mode,
            data,
        }
    }

    pub fn into_mode(mut self, mode: Precision) -> Tensor {
        if mode != self.mode {
            mode.round_slice(&mut self.data);
            self.mode = mode;
        }
        self
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Elementwise map; results are rounded into the tensor's mode.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        let mut data: Vec<f32> = self.data.iter().map(|&x| f(x)).collect();
        self.mode.round_slice(&mut data);
        Tensor {
            shape: self.shape.clone(),
            mode: self.mode,
            data,
        }
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            s => Err(Error::ShapeMismatch(format!(
                "expected a matrix, got shape {s:?}"
            ))),
        }
    }

    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape.as_slice() {
            &[n, c, h, w] => Ok((n, c, h, w)),
            s => Err(Error::ShapeMismatch(format!(
                "expected NCHW, got shape {s:?}"
            ))),
        }
    }

    /// Matrix transpose of a 2-D tensor.
    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor {
            shape: vec![c, r],
            mode: self.mode,
            data: out,
        })
    }

    /// True when every element already equals its binary16 image.
    pub fn is_binary16_exact(&self) -> bool {
        self.data
            .iter()
            .all(|&x| half::quantize(x).to_bits() == x.to_bits() || x.is_nan())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub(crate) fn check_same_shape(&self, other: &Tensor, what: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "{what}: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }
}
