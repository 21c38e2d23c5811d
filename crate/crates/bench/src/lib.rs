//! Shared fixtures for the benchmarks.

use candle_core::{DType, Tensor};
use sc_denoise::config::RunConfig;
use sc_denoise::data::{procedural_source, Image};
use sc_denoise::Precision;

/// Stack of `n` procedural single-channel images of side `size`.
pub fn image_batch(n: usize, size: usize, dtype: DType) -> Tensor {
    let images: Vec<Image> = (0..n).map(|id| procedural_source(id, size, 1, 7)).collect();
    Image::stack(&images, dtype).expect("procedural images stack")
}

/// Smoke-scale run configuration in the given precision.
pub fn bench_config(precision: Precision) -> RunConfig {
    let mut cfg = RunConfig::smoke();
    cfg.train.precision = precision;
    cfg
}
