use crate::error::{Error, Result};
use crate::tensor::{Precision, Tensor};

/// `out[i, j] += Σ_p a[i, p] * b[p, j]`, summed in ascending `p`.
pub(crate) fn matmul_into(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Matrix product `a · b`.
///
/// In `Binary16` mode both operands are rounded to binary16 first; products
/// of binary16 values are exact in binary32 and are accumulated there, and
/// the finished sums are rounded once into the output.
pub fn gemm(a: &Tensor, b: &Tensor, mode: Precision) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::ShapeMismatch(format!(
            "gemm inner dimensions differ: {:?} · {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let a = a.to_mode(mode);
    let b = b.to_mode(mode);
    let mut out = vec![0.0; m * n];
    matmul_into(a.data(), b.data(), &mut out, m, k, n);
    Tensor::new(vec![m, n], out, mode)
}
