use crate::error::{Error, Result};
use crate::tensor::{Precision, Tensor};

/// `Q × G` Euclidean distances in binary32. In `Binary16` mode the vectors are
/// rounded to binary16 first and the squared differences accumulated in binary32.
pub fn distmat(queries: &Tensor, gallery: &Tensor, mode: Precision) -> Result<Tensor> {
    let (nq, dq) = queries.dims2()?;
    let (ng, dg) = gallery.dims2()?;
    if dq != dg {
        return Err(Error::ShapeMismatch(format!(
            "query dimension {dq} vs gallery dimension {dg}"
        )));
    }
    if ng == 0 {
        return Err(Error::InvalidArgument("empty gallery".into()));
    }
    let q = queries.to_mode(mode);
    let g = gallery.to_mode(mode);
    let (qd, gd) = (q.data(), g.data());
    let mut out = vec![0.0f32; nq * ng];
    for i in 0..nq {
        let a = &qd[i * dq..(i + 1) * dq];
        for j in 0..ng {
            let b = &gd[j * dq..(j + 1) * dq];
            let s: f32 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            out[i * ng + j] = s.sqrt();
        }
    }
    Tensor::from_vec(vec![nq, ng], out)
}
