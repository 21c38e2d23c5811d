//! Small helpers around `candle_core::Tensor` shared by every module.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floating-point width used for parameters and activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

/// All computation runs on the host.
pub fn device() -> Device {
    Device::Cpu
}

/// Shape of a rank-4 (batch, channel, height, width) tensor.
pub fn dims4(t: &Tensor, what: &str) -> Result<(usize, usize, usize, usize)> {
    t.dims4()
        .map_err(|_| Error::invalid(format!("{what}: expected a rank-4 batch, got shape {:?}", t.dims())))
}

pub fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::invalid(format!(
            "{what}: shape mismatch {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

pub fn to_f64_vec(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.reshape(())?.to_scalar::<f64>()?)
}

pub fn from_f64(data: Vec<f64>, shape: &[usize], dtype: DType) -> Result<Tensor> {
    Ok(Tensor::from_vec(data, shape, &device())?.to_dtype(dtype)?)
}

pub fn ensure_finite(t: &Tensor, what: &str) -> Result<()> {
    if to_f64_vec(t)?.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("{what}: non-finite values")));
    }
    Ok(())
}

/// SplitMix64 finalizer, used to derive independent stream seeds from one run seed.
pub fn mix_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
