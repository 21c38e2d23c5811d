//! Generator, PatchGAN discriminator, the residual denoiser family and the
//! noise-extraction (NE) split.
//!
//! Every network lives in a [`NetworkHandle`], which owns seeded parameters,
//! optional normalization buffers and a freeze flag. A frozen handle never puts
//! its parameters on the autodiff tape and refuses updates, but gradients still
//! flow through it to its inputs.

mod arch;
mod handle;
mod layers;

use candle_core::{DType, Tensor};

pub use arch::{
    Architecture, DenoiserConfig, DenoiserVariant, DiscriminatorConfig, GeneratorConfig, NetworkKind,
};
pub use handle::{NetworkHandle, NetworkManifest, Pass};

use crate::error::{Error, Result};
use crate::tensor::same_shape;

pub fn make_generator(cfg: &GeneratorConfig, channels: usize, dtype: DType, seed: u64) -> Result<NetworkHandle> {
    NetworkHandle::new(
        "generator",
        Architecture::Generator { channels, width: cfg.width, blocks: cfg.blocks },
        dtype,
        seed,
    )
}

pub fn make_discriminator(
    cfg: &DiscriminatorConfig,
    channels: usize,
    dtype: DType,
    seed: u64,
) -> Result<NetworkHandle> {
    NetworkHandle::new(
        "discriminator",
        Architecture::Discriminator { channels, width: cfg.width, layers: cfg.layers },
        dtype,
        seed,
    )
}

pub fn make_denoiser(cfg: &DenoiserConfig, channels: usize, dtype: DType, seed: u64) -> Result<NetworkHandle> {
    NetworkHandle::new(
        "denoiser",
        Architecture::Denoiser { variant: cfg.variant, channels, width: cfg.width, depth: cfg.depth },
        dtype,
        seed,
    )
}

/// The learnable single-layer NE denoiser used before the first replacement.
pub fn make_initial_ne(channels: usize, dtype: DType) -> Result<NetworkHandle> {
    NetworkHandle::new(
        "dn0",
        Architecture::Denoiser { variant: DenoiserVariant::LinearConv, channels, width: 0, depth: 0 },
        dtype,
        0,
    )
}

pub fn stub(arch: Architecture, dtype: DType) -> Result<NetworkHandle> {
    if !arch.is_stub() {
        return Err(Error::invalid("stub() only builds test doubles"));
    }
    let name = format!("{:?}", arch.kind()).to_lowercase();
    NetworkHandle::new(name, arch, dtype, 0)
}

/// Residual noise and the denoised image produced by the NE module.
#[derive(Debug, Clone)]
pub struct NeOutput {
    pub noise: Tensor,
    pub denoised: Tensor,
}

/// `denoised = dn0(noisy)`, `noise = noisy - denoised`.
pub fn ne_extract(noisy: &Tensor, dn0: &NetworkHandle, pass: Pass) -> Result<NeOutput> {
    if dn0.kind() != NetworkKind::Denoiser {
        return Err(Error::invalid(format!("ne_extract needs a denoiser, got {:?}", dn0.kind())));
    }
    let denoised = dn0.forward(&[noisy], pass)?;
    let noise = (noisy - &denoised)?;
    Ok(NeOutput { noise, denoised })
}

/// Synthesizes a noisy image from `content` and a noise map.
pub fn generate(g: &NetworkHandle, content: &Tensor, noise: &Tensor, pass: Pass) -> Result<Tensor> {
    if g.kind() != NetworkKind::Generator {
        return Err(Error::invalid(format!("generate needs a generator, got {:?}", g.kind())));
    }
    same_shape(content, noise, "generate")?;
    g.forward(&[content, noise], pass)
}
