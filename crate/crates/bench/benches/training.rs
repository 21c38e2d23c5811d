use criterion::{criterion_group, criterion_main, Criterion};
use sc_denoise::train::{init_models, load_data, sc_replace, train_phase, Trainer};
use sc_denoise::Precision;
use sc_denoise_bench::bench_config;

fn steps(c: &mut Criterion) {
    let mut group = c.benchmark_group("train_step");
    group.sample_size(10);
    for precision in [Precision::F32, Precision::F64] {
        let cfg = bench_config(precision);
        let data = load_data(&cfg).unwrap();
        let models = init_models(&cfg.train, 1, cfg.seed).unwrap();
        let geometry = (cfg.train.patch, cfg.train.batch);
        let mut trainer = Trainer::new(
            &cfg.train,
            models.clone(),
            None,
            data.corpus.clone(),
            data.validation.clone(),
            geometry,
            cfg.seed,
            usize::MAX,
        )
        .unwrap();
        group.bench_function(format!("baseline smoke {precision:?}"), |b| b.iter(|| trainer.train_step().unwrap()));

        let boosted = sc_replace(train_phase(models, &data, &cfg.train, 1, cfg.seed).unwrap().last);
        let mut trainer =
            Trainer::new(&cfg.train, boosted, None, data.corpus, data.validation, geometry, cfg.seed, usize::MAX)
                .unwrap();
        group.bench_function(format!("self-collaboration smoke {precision:?}"), |b| {
            b.iter(|| trainer.train_step().unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, steps);
criterion_main!(benches);
