use super::matmul_into;
use crate::error::{Error, Result};
use crate::tensor::{Precision, Tensor};

/// `y = x · w + b` with `x: [N, in]` (trailing dims flattened), `w: [in, out]`, `b: [out]`.
pub fn linear_forward(x: &Tensor, w: &Tensor, b: &Tensor, mode: Precision) -> Result<Tensor> {
    let (n, fan_in) = flat2(x)?;
    let (w_in, fan_out) = w.dims2()?;
    if w_in != fan_in || b.len() != fan_out {
        return Err(Error::ShapeMismatch(format!(
            "linear: input {:?}, weight {:?}, bias {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let x = x.to_mode(mode);
    let w = w.to_mode(mode);
    let b = b.to_mode(mode);
    let mut out = Vec::with_capacity(n * fan_out);
    for _ in 0..n {
        out.extend_from_slice(b.data());
    }
    matmul_into(x.data(), w.data(), &mut out, n, fan_in, fan_out);
    Tensor::new(vec![n, fan_out], out, mode)
}

#[derive(Clone, Debug)]
pub struct LinearGrads {
    pub x: Tensor,
    pub w: Tensor,
    pub b: Tensor,
}

pub fn linear_backward(
    x: &Tensor,
    w: &Tensor,
    grad_out: &Tensor,
    mode: Precision,
) -> Result<LinearGrads> {
    let (n, fan_in) = flat2(x)?;
    let (w_in, fan_out) = w.dims2()?;
    if w_in != fan_in || grad_out.shape() != [n, fan_out] {
        return Err(Error::ShapeMismatch(format!(
            "linear backward: input {:?}, weight {:?}, grad {:?}",
            x.shape(),
            w.shape(),
            grad_out.shape()
        )));
    }
    let x = x.to_mode(mode);
    let w = w.to_mode(mode);
    let g = grad_out.to_mode(mode);
    let (xd, wd, gd) = (x.data(), w.data(), g.data());

    // dW = xᵀ g
    let mut gw = vec![0.0; fan_in * fan_out];
    for s in 0..n {
        for i in 0..fan_in {
            let xv = xd[s * fan_in + i];
            let row = &mut gw[i * fan_out..(i + 1) * fan_out];
            for (o, &gv) in row.iter_mut().zip(&gd[s * fan_out..(s + 1) * fan_out]) {
                *o += xv * gv;
            }
        }
    }
    // dx = g wᵀ
    let mut gx = vec![0.0; n * fan_in];
    for s in 0..n {
        for i in 0..fan_in {
            let wrow = &wd[i * fan_out..(i + 1) * fan_out];
            let grow = &gd[s * fan_out..(s + 1) * fan_out];
            gx[s * fan_in + i] = wrow.iter().zip(grow).map(|(a, b)| a * b).sum();
        }
    }
    let mut gb = vec![0.0; fan_out];
    for s in 0..n {
        for (o, &gv) in gb.iter_mut().zip(&gd[s * fan_out..(s + 1) * fan_out]) {
            *o += gv;
        }
    }
    Ok(LinearGrads {
        x: Tensor::new(x.shape().to_vec(), gx, mode)?,
        w: Tensor::new(vec![fan_in, fan_out], gw, mode)?,
        b: Tensor::new(vec![fan_out], gb, mode)?,
    })
}

fn flat2(x: &Tensor) -> Result<(usize, usize)> {
    match x.shape() {
        [] => Err(Error::ShapeMismatch(
            "linear input has no batch dimension".into(),
        )),
        [n, rest @ ..] => Ok((*n, rest.iter().product())),
    }
}
