use std::path::Path;

use candle_core::backprop::GradStore;
use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::NetworkHandle;
use crate::tensor::{from_f64, to_f64_vec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("train.adam.lr", "must be positive"));
        }
        for (key, b) in [("train.adam.beta1", self.beta1), ("train.adam.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(key, "must lie in [0, 1)"));
            }
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::config("train.adam.eps", "must be positive"));
        }
        Ok(())
    }
}

/// Adam with explicit, serializable moment buffers.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AdamHeader {
    t: u64,
    shapes: Vec<Vec<usize>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, net: &NetworkHandle) -> Result<Self> {
        let zeros = net
            .vars()
            .iter()
            .map(|v| v.as_tensor().zeros_like())
            .collect::<candle_core::Result<Vec<_>>>()?;
        Ok(Adam { cfg, t: 0, m: zeros.clone(), v: zeros })
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update of every parameter of `net` that received a gradient.
    pub fn step(&mut self, net: &mut NetworkHandle, grads: &GradStore) -> Result<()> {
        if net.is_frozen() {
            return Err(Error::Frozen(net.name().to_string()));
        }
        if net.vars().len() != self.m.len() {
            return Err(Error::Contract(format!("optimizer state does not match `{}`", net.name())));
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let mut next = Vec::with_capacity(self.m.len());
        for (i, var) in net.vars().iter().enumerate() {
            let p = var.as_tensor().detach();
            match grads.get(var.as_tensor()) {
                Some(g) => {
                    let g = g.detach();
                    self.m[i] = (self.m[i].affine(beta1, 0.0)? + g.affine(1.0 - beta1, 0.0)?)?;
                    self.v[i] = (self.v[i].affine(beta2, 0.0)? + g.sqr()?.affine(1.0 - beta2, 0.0)?)?;
                    let m_hat = self.m[i].affine(1.0 / bc1, 0.0)?;
                    let denom = self.v[i].affine(1.0 / bc2, 0.0)?.sqrt()?.affine(1.0, eps)?;
                    next.push((p - (m_hat / denom)?.affine(lr, 0.0)?)?);
                }
                None => next.push(p.copy()?),
            }
        }
        net.set_params(&next)
    }

    /// Writes `<stem>.json` (step count, shapes) and `<stem>.bin` (moments as little-endian f64).
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let header = AdamHeader { t: self.t, shapes: self.m.iter().map(|t| t.dims().to_vec()).collect() };
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&json, serde_json::to_string(&header)?).map_err(|e| Error::io(&json, e))?;
        let mut blob = Vec::new();
        for t in self.m.iter().chain(&self.v) {
            for x in to_f64_vec(t)? {
                blob.extend_from_slice(&x.to_le_bytes());
            }
        }
        let bin = dir.join(format!("{stem}.bin"));
        std::fs::write(&bin, blob).map_err(|e| Error::io(&bin, e))
    }

    pub fn load(cfg: AdamConfig, net: &NetworkHandle, dir: &Path, stem: &str) -> Result<Self> {
        let json = dir.join(format!("{stem}.json"));
        let header: AdamHeader =
            serde_json::from_str(&std::fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?)?;
        let bin = dir.join(format!("{stem}.bin"));
        let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        let expected: Vec<Vec<usize>> = net.vars().iter().map(|v| v.dims().to_vec()).collect();
        let total: usize = expected.iter().map(|s| s.iter().product::<usize>()).sum();
        if header.shapes != expected || bytes.len() != 16 * total {
            return Err(Error::Checkpoint {
                path: bin,
                message: format!("optimizer state does not match `{}`", net.name()),
            });
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let mut offset = 0;
        let mut moments = Vec::with_capacity(2 * expected.len());
        for shape in expected.iter().chain(&expected) {
            let n: usize = shape.iter().product();
            moments.push(from_f64(values[offset..offset + n].to_vec(), shape, net.dtype())?);
            offset += n;
        }
        let v = moments.split_off(expected.len());
        Ok(Adam { cfg, t: header.t, m: moments, v })
    }
}
