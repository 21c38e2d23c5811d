//! Deterministic image mathematics: Gaussian blur bank, PSNR/SSIM, patch cropping.
//!
//! Every function here is pure and operates on (batch, channel, height, width)
//! tensors, so the same code paths serve both metrics and differentiable losses.

mod blur;
mod metrics;
mod patches;

pub use blur::{
    blurred_l1, gaussian_blur, gaussian_blur_with_std, gaussian_kernel, reflect_index, BlurBank,
    BlurLevel,
};
pub use metrics::{
    psnr, psnr_from_mse, psnr_per_image, ssim, ssim_loss, ssim_map, ssim_per_image, SsimChannels, SsimParams,
    PSNR_CAP_DB,
};
pub use patches::{extract_patches, patch_coords, Crop};
