use candle_core::DType;
use criterion::{criterion_group, criterion_main, Criterion};
use sc_denoise::imaging::{blurred_l1, gaussian_blur, ssim, BlurBank, SsimParams};
use sc_denoise::networks::{make_denoiser, make_generator, DenoiserConfig, GeneratorConfig, Pass};
use sc_denoise_bench::image_batch;

fn imaging(c: &mut Criterion) {
    let a = image_batch(8, 64, DType::F32);
    let b = image_batch(8, 64, DType::F32).affine(0.9, 0.05).unwrap();
    c.bench_function("gaussian_blur 15x15 on 8x64x64", |bench| {
        bench.iter(|| gaussian_blur(&a, 15).unwrap())
    });
    let bank = BlurBank::default();
    c.bench_function("blurred_l1 default bank", |bench| bench.iter(|| blurred_l1(&a, &b, &bank).unwrap()));
    let params = SsimParams::default();
    c.bench_function("ssim 11x11 on 8x64x64", |bench| bench.iter(|| ssim(&a, &b, &params).unwrap()));
}

fn networks(c: &mut Criterion) {
    let x = image_batch(8, 64, DType::F32);
    let g = make_generator(&GeneratorConfig::default(), 1, DType::F32, 1).unwrap();
    let dn = make_denoiser(&DenoiserConfig::default(), 1, DType::F32, 2).unwrap();
    let mut group = c.benchmark_group("forward");
    group.sample_size(10);
    group.bench_function("generator default on 8x64x64", |bench| {
        bench.iter(|| g.forward(&[&x, &x], Pass::EVAL).unwrap())
    });
    group.bench_function("denoiser default on 8x64x64", |bench| bench.iter(|| dn.apply(&x).unwrap()));
    group.finish();
}

criterion_group!(benches, imaging, networks);
criterion_main!(benches);
