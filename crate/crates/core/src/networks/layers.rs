//! Differentiable building blocks on top of candle tensors.

use candle_core::{Tensor, D};

use crate::error::{Error, Result};

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;
pub(crate) const LEAKY_SLOPE: f64 = 0.2;

pub(crate) fn conv(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize) -> Result<Tensor> {
    let y = x.conv2d(w, pad, stride, 1, 1)?;
    match b {
        Some(b) => Ok(y.broadcast_add(&b.reshape((1, b.elem_count(), 1, 1))?)?),
        None => Ok(y),
    }
}

pub(crate) fn leaky_relu(x: &Tensor) -> Result<Tensor> {
    Ok(x.maximum(&x.affine(LEAKY_SLOPE, 0.0)?)?)
}

/// `atanh` for inputs strictly inside (-1, 1).
pub(crate) fn atanh(x: &Tensor) -> Result<Tensor> {
    let num = x.affine(1.0, 1.0)?;
    let den = x.affine(-1.0, 1.0)?;
    Ok((num / den)?.log()?.affine(0.5, 0.0)?)
}

/// Nearest-neighbour 2x upsampling built from broadcasts so its backward pass accumulates.
pub(crate) fn upsample2(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    Ok(x
        .reshape((n, c, h, 1, w, 1))?
        .broadcast_as((n, c, h, 2, w, 2))?
        .contiguous()?
        .reshape((n, c, 2 * h, 2 * w))?)
}

pub(crate) fn avg_pool2(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::invalid(format!("2x pooling needs even spatial dims, got {h}x{w}")));
    }
    Ok(x.avg_pool2d(2)?)
}

/// Per-channel batch statistics `(mean, biased variance)`, each shaped `(c,)`.
pub(crate) fn batch_moments(x: &Tensor) -> Result<(Tensor, Tensor)> {
    let c = x.dim(1)?;
    let flat = x.transpose(0, 1)?.contiguous()?.reshape((c, ()))?;
    let mean = flat.mean_keepdim(D::Minus1)?;
    let var = flat.broadcast_sub(&mean)?.sqr()?.mean_keepdim(D::Minus1)?;
    Ok((mean.flatten_all()?, var.flatten_all()?))
}

pub(crate) fn batch_norm(x: &Tensor, mean: &Tensor, var: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
    let c = x.dim(1)?;
    let shape = (1, c, 1, 1);
    let inv = var.affine(1.0, BN_EPS)?.sqrt()?.recip()?;
    let scale = (gamma * inv)?.reshape(shape)?;
    Ok(x
        .broadcast_sub(&mean.reshape(shape)?)?
        .broadcast_mul(&scale)?
        .broadcast_add(&beta.reshape(shape)?)?)
}
