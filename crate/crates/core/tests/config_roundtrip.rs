use proptest::prelude::*;
use sc_denoise::branches::Variant;
use sc_denoise::config::{parse_config, RunConfig};
use sc_denoise::data::SourceSpec;
use sc_denoise::networks::DenoiserVariant;
use sc_denoise::Precision;

prop_compose! {
    fn run_configs()(
        seed in any::<u64>(),
        dir in "[a-z]{1,8}(/[a-z0-9_]{1,8}){0,2}",
        size in 32usize..96,
        channels in prop::sample::select(vec![1usize, 3]),
        train_sources in 16usize..64,
        val_sources in 1usize..8,
        augment in any::<bool>(),
        sigma in (0.0f64..0.2, 0.0f64..0.1),
        lr in 1e-6f64..1e-2,
        ne_lr_scale in 0.1f64..20.0,
        betas in (0.0f64..0.99, 0.9f64..0.9999),
        lambdas in (0.0f64..20.0, 0.0f64..5.0),
        half_patch in 8usize..16,
        batch in 1usize..16,
        widths in (1usize..40, 1usize..8, 1usize..40, 1usize..4),
        dn in (prop::sample::select(DenoiserVariant::ALL.to_vec()), 1usize..40, 1usize..8),
        variant in prop::sample::select(Variant::ALL.to_vec()),
        precision in prop::sample::select(vec![Precision::F32, Precision::F64]),
        schedule in (1usize..10, 0usize..10, 1usize..5000, prop_oneof![0.0f64..1.0, Just(f64::INFINITY)]),
        knobs in (any::<bool>(), any::<bool>(), any::<bool>(), any::<bool>(), any::<bool>()),
    ) -> RunConfig {
        let mut cfg = RunConfig { seed, output_dir: dir.into(), ..RunConfig::default() };
        cfg.corpus.source = SourceSpec::Procedural { size, channels };
        cfg.corpus.train_sources = train_sources;
        cfg.corpus.val_sources = val_sources;
        cfg.corpus.augment = augment;
        cfg.noise.sigma_read = sigma.0;
        cfg.noise.sigma_shot = sigma.1;
        let t = &mut cfg.train;
        t.precision = precision;
        t.adam.lr = lr;
        t.ne_lr_scale = ne_lr_scale;
        t.adam.beta1 = betas.0;
        t.adam.beta2 = betas.1;
        t.weights.lambda_bgm = lambdas.0;
        t.weights.lambda_ssim = lambdas.1;
        t.patch = (2 * half_patch).min(size - size % 2);
        t.batch = batch;
        t.generator.width = widths.0;
        t.generator.blocks = widths.1;
        t.discriminator.width = widths.2;
        t.discriminator.layers = widths.3;
        t.denoiser.variant = dn.0;
        t.denoiser.width = dn.1;
        t.denoiser.depth = dn.2;
        t.structure = variant.structure();
        t.detach_ne = knobs.0;
        t.record_wall_clock = knobs.1;
        let s = &mut cfg.schedule;
        s.max_iterations = schedule.0;
        s.stage2_start = schedule.1;
        s.steps_per_iteration = schedule.2;
        s.boost_steps = (schedule.2 % 3 == 0).then_some(schedule.2 + 1);
        s.stop_delta_db = schedule.3;
        s.stage2_patch = t.patch;
        s.reset_optimizers = knobs.2;
        s.reinit_denoiser = knobs.3;
        s.reinit_gan = knobs.4;
        cfg
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn serialized_configs_parse_back_identically(cfg in run_configs()) {
        prop_assume!(cfg.validate().is_ok());
        let text = cfg.to_toml().unwrap();
        prop_assert_eq!(parse_config(&text).unwrap(), cfg);
    }
}
