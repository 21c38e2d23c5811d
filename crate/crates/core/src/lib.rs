//! Unpaired real-noise image denoising.
//!
//! A generator learns to synthesize realistic noisy images from clean content
//! plus noise extracted from real noisy images; a denoiser is trained on the
//! resulting pseudo-pairs. Two parallel synthesis branches combine
//! self-synthesis (an image regenerated from its own content and noise) with
//! unpaired synthesis (content and noise from different images). An outer
//! self-collaboration loop then repeatedly freezes the trained denoiser into the
//! noise-extraction module and retrains, so each round synthesizes better pairs.
//!
//! Module map:
//! - [`imaging`]: blur bank, PSNR/SSIM, patch extraction
//! - [`data`]: procedural/PNG corpora, heteroscedastic noise, batching
//! - [`networks`]: generator, PatchGAN discriminator, denoiser family, noise extraction
//! - [`losses`]: least-squares adversarial, background-guidance, denoiser and distillation losses
//! - [`branches`]: one forward pass of the two synthesis branches
//! - [`train`]: alternating optimization, self-collaboration loop, evaluation, ablations
//! - [`config`]: the serializable run configuration

pub mod branches;
pub mod config;
pub mod data;
pub mod error;
pub mod imaging;
pub mod losses;
pub mod networks;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Precision;
