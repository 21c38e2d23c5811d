use std::path::Path;

use candle_core::{DType, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::arch::{Architecture, DenoiserVariant, Init, NetworkKind, ParamSpec};
use super::layers::BN_MOMENTUM;
use crate::error::{Error, Result};
use crate::tensor::{from_f64, mix_seed, to_f64_vec};

/// How a forward pass treats parameters and normalization statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pass {
    /// Record parameters on the autodiff tape (ignored for frozen handles).
    pub track: bool,
    /// Normalize with this batch's statistics instead of the running buffers.
    pub batch_stats: bool,
}

impl Pass {
    pub const EVAL: Pass = Pass { track: false, batch_stats: false };
    pub const TRAIN: Pass = Pass { track: true, batch_stats: true };
    /// Batch statistics without a parameter gradient path.
    pub const TRAIN_DETACHED: Pass = Pass { track: false, batch_stats: true };
    pub const TRACKED_EVAL: Pass = Pass { track: true, batch_stats: false };
}

/// A network together with its parameters, normalization buffers and freeze flag.
#[derive(Debug)]
pub struct NetworkHandle {
    name: String,
    arch: Architecture,
    dtype: DType,
    specs: Vec<ParamSpec>,
    params: Vec<Var>,
    buffer_specs: Vec<ParamSpec>,
    buffers: Vec<Tensor>,
    frozen: bool,
}

impl Clone for NetworkHandle {
    /// Deep copy: the clone owns fresh parameter storage.
    fn clone(&self) -> Self {
        let params = self
            .params
            .iter()
            .map(|v| Var::from_tensor(&v.as_tensor().detach()).expect("copying a host tensor"))
            .collect();
        NetworkHandle {
            name: self.name.clone(),
            arch: self.arch.clone(),
            dtype: self.dtype,
            specs: self.specs.clone(),
            params,
            buffer_specs: self.buffer_specs.clone(),
            buffers: self.buffers.clone(),
            frozen: self.frozen,
        }
    }
}

fn init_tensor(spec: &ParamSpec, seed: u64, dtype: DType) -> Result<Tensor> {
    let n: usize = spec.shape.iter().product();
    let data = match spec.init {
        Init::Zeros => vec![0.0; n],
        Init::Ones => vec![1.0; n],
        Init::He { fan_in, gain } => {
            let std = gain * (2.0 / fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n).map(|_| normal.sample(&mut rng)).collect()
        }
    };
    from_f64(data, &spec.shape, dtype)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

/// JSON manifest stored next to a parameter blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkManifest {
    pub name: String,
    pub kind: NetworkKind,
    pub variant: Option<DenoiserVariant>,
    pub architecture: Architecture,
    pub frozen: bool,
    pub param_count: usize,
    params: Vec<TensorEntry>,
    buffers: Vec<TensorEntry>,
    pub checksum: String,
}

impl NetworkHandle {
    /// Builds a network with seeded initial parameters.
    pub fn new(name: impl Into<String>, arch: Architecture, dtype: DType, seed: u64) -> Result<Self> {
        arch.validate()?;
        if !matches!(dtype, DType::F32 | DType::F64) {
            return Err(Error::invalid(format!("unsupported dtype {dtype:?}")));
        }
        let specs = arch.param_specs();
        let params = specs
            .iter()
            .enumerate()
            .map(|(i, s)| Ok(Var::from_tensor(&init_tensor(s, mix_seed(seed, i as u64), dtype)?)?))
            .collect::<Result<Vec<_>>>()?;
        let buffer_specs = arch.buffer_specs();
        let buffers = buffer_specs
            .iter()
            .map(|s| init_tensor(s, 0, dtype))
            .collect::<Result<Vec<_>>>()?;
        Ok(NetworkHandle {
            name: name.into(),
            arch,
            dtype,
            specs,
            params,
            buffer_specs,
            buffers,
            frozen: false,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn set_name(&mut self, name: impl Into<String>) {
        self.name = name.into();
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn kind(&self) -> NetworkKind {
        self.arch.kind()
    }

    pub fn variant(&self) -> Option<DenoiserVariant> {
        self.arch.variant()
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Deep copy marked frozen.
    pub fn frozen_snapshot(&self, name: impl Into<String>) -> Self {
        let mut s = self.clone();
        s.name = name.into();
        s.frozen = true;
        s
    }

    pub fn param_count(&self) -> usize {
        self.arch.param_count()
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.specs.iter().map(|s| s.name.as_str())
    }

    pub fn vars(&self) -> &[Var] {
        &self.params
    }

    pub fn buffers(&self) -> &[Tensor] {
        &self.buffers
    }

    /// Overwrites every parameter. Frozen handles refuse.
    pub fn set_params(&mut self, values: &[Tensor]) -> Result<()> {
        if self.frozen {
            return Err(Error::Frozen(self.name.clone()));
        }
        if values.len() != self.params.len() {
            return Err(Error::invalid(format!(
                "{}: expected {} parameter tensors, got {}",
                self.name,
                self.params.len(),
                values.len()
            )));
        }
        for (var, v) in self.params.iter().zip(values) {
            if var.dims() != v.dims() {
                return Err(Error::invalid(format!("{}: parameter shape mismatch", self.name)));
            }
        }
        for (var, v) in self.params.iter().zip(values) {
            var.set(&v.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    /// Copies parameters and buffers from a handle of the same architecture.
    pub fn load_state_from(&mut self, other: &NetworkHandle) -> Result<()> {
        if self.arch != other.arch {
            return Err(Error::invalid(format!("{}: architecture mismatch", self.name)));
        }
        let values: Vec<Tensor> = other.params.iter().map(|v| v.as_tensor().detach()).collect();
        self.set_params(&values)?;
        self.buffers = other.buffers.iter().map(|b| b.to_dtype(self.dtype)).collect::<candle_core::Result<_>>()?;
        Ok(())
    }

    fn param_tensors(&self, track: bool) -> Vec<Tensor> {
        self.params
            .iter()
            .map(|v| {
                if track && !self.frozen {
                    v.as_tensor().clone()
                } else {
                    v.as_tensor().detach()
                }
            })
            .collect()
    }

    fn check_inputs(&self, inputs: &[&Tensor]) -> Result<()> {
        if inputs.len() != self.arch.arity() {
            return Err(Error::invalid(format!(
                "{}: expected {} inputs, got {}",
                self.name,
                self.arch.arity(),
                inputs.len()
            )));
        }
        for t in inputs {
            let (_, c, _, _) = crate::tensor::dims4(t, &self.name)?;
            let want = match self.arch {
                Architecture::Generator { channels, .. }
                | Architecture::Discriminator { channels, .. }
                | Architecture::Denoiser { channels, .. } => Some(channels),
                _ => None,
            };
            if want.is_some_and(|w| w != c) {
                return Err(Error::invalid(format!("{}: expected {} channels, got {c}", self.name, want.unwrap_or(0))));
            }
            if t.dtype() != self.dtype {
                return Err(Error::invalid(format!("{}: dtype {:?} vs network {:?}", self.name, t.dtype(), self.dtype)));
            }
        }
        Ok(())
    }

    /// Forward pass; running buffers are left untouched.
    pub fn forward(&self, inputs: &[&Tensor], pass: Pass) -> Result<Tensor> {
        self.check_inputs(inputs)?;
        let params = self.param_tensors(pass.track);
        Ok(self.arch.forward(inputs, &params, &self.buffers, pass.batch_stats)?.0)
    }

    /// Evaluation-mode forward; parameters are on the tape unless frozen.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(&[x], Pass::TRACKED_EVAL)
    }

    /// Training-mode forward that also folds this batch's statistics into the running buffers.
    pub fn forward_train(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        if self.frozen {
            return Err(Error::Frozen(self.name.clone()));
        }
        self.check_inputs(inputs)?;
        let params = self.param_tensors(true);
        let (out, stats) = self.arch.forward(inputs, &params, &self.buffers, true)?;
        if !stats.is_empty() {
            let (n, _, h, w) = out.dims4()?;
            let count = (n * h * w) as f64;
            let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            let mut next = Vec::with_capacity(self.buffers.len());
            for (i, (old, s)) in self.buffers.iter().zip(&stats).enumerate() {
                let s = if i % 2 == 1 { s.detach().affine(unbias, 0.0)? } else { s.detach() };
                next.push((old.affine(1.0 - BN_MOMENTUM, 0.0)? + s.affine(BN_MOMENTUM, 0.0)?)?);
            }
            self.buffers = next;
        }
        Ok(out)
    }

    /// SHA-256 over parameters then buffers, each as little-endian f64.
    pub fn checksum(&self) -> Result<String> {
        let mut h = Sha256::new();
        for t in self.params.iter().map(|v| v.as_tensor()).chain(&self.buffers) {
            for v in to_f64_vec(t)? {
                h.update(v.to_le_bytes());
            }
        }
        Ok(hex::encode(h.finalize()))
    }

    pub fn manifest(&self) -> Result<NetworkManifest> {
        let entries = |specs: &[ParamSpec]| {
            specs
                .iter()
                .map(|s| TensorEntry { name: s.name.clone(), shape: s.shape.clone() })
                .collect()
        };
        Ok(NetworkManifest {
            name: self.name.clone(),
            kind: self.kind(),
            variant: self.variant(),
            architecture: self.arch.clone(),
            frozen: self.frozen,
            param_count: self.param_count(),
            params: entries(&self.specs),
            buffers: entries(&self.buffer_specs),
            checksum: self.checksum()?,
        })
    }

    /// Writes `<stem>.bin` (little-endian f64 values) and `<stem>.json`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut blob = Vec::new();
        for t in self.params.iter().map(|v| v.as_tensor()).chain(&self.buffers) {
            for v in to_f64_vec(t)? {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let bin = dir.join(format!("{stem}.bin"));
        std::fs::write(&bin, blob).map_err(|e| Error::io(&bin, e))?;
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&json, serde_json::to_string_pretty(&self.manifest()?)?).map_err(|e| Error::io(&json, e))
    }

    pub fn load(dir: &Path, stem: &str, dtype: DType) -> Result<Self> {
        let json = dir.join(format!("{stem}.json"));
        let text = std::fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        let manifest: NetworkManifest = serde_json::from_str(&text)?;
        let bin = dir.join(format!("{stem}.bin"));
        let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        let bad = |message: String| Error::Checkpoint { path: bin.clone(), message };
        if bytes.len() % 8 != 0 {
            return Err(bad("blob length is not a multiple of 8".into()));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();

        let mut net = NetworkHandle::new(manifest.name.clone(), manifest.architecture.clone(), dtype, 0)?;
        let expected: usize = net
            .specs
            .iter()
            .chain(&net.buffer_specs)
            .map(|s| s.shape.iter().product::<usize>())
            .sum();
        if values.len() != expected {
            return Err(bad(format!("blob holds {} values, architecture needs {expected}", values.len())));
        }
        let mut offset = 0;
        let mut take = |shape: &[usize]| {
            let n: usize = shape.iter().product();
            let t = from_f64(values[offset..offset + n].to_vec(), shape, dtype);
            offset += n;
            t
        };
        for (var, spec) in net.params.iter().zip(&net.specs) {
            var.set(&take(&spec.shape)?)?;
        }
        net.buffers = net.buffer_specs.iter().map(|s| take(&s.shape)).collect::<Result<_>>()?;
        net.frozen = manifest.frozen;
        let sum = net.checksum()?;
        if sum != manifest.checksum {
            return Err(bad(format!("checksum mismatch: manifest {}, blob {sum}", manifest.checksum)));
        }
        Ok(net)
    }
}
