use std::path::Path;

use sc_denoise::branches::Variant;
use sc_denoise::config::RunConfig;
use sc_denoise::train::{
    ablation_table, iteration_dir, load_checkpoint, read_jsonl, run_ablation, run_sc, IterationStatus,
    IterationSummary, MetricsRecord, ScOptions, StopReason, CHECKPOINTS, HISTORY_LOG, LAST_GOOD, METRICS_LOG,
};
use sc_denoise::Precision;

fn cfg() -> RunConfig {
    let mut cfg = RunConfig::smoke();
    cfg.train.precision = Precision::F64;
    cfg.schedule.steps_per_iteration = 6;
    cfg.train.eval_interval = 3;
    cfg.schedule.stop_delta_db = 0.0;
    cfg
}

fn history(dir: &Path) -> Vec<IterationSummary> {
    read_jsonl(&dir.join(HISTORY_LOG)).unwrap()
}

#[test]
fn run_directory_is_self_contained() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_sc(&cfg(), dir.path(), &ScOptions::default()).unwrap();
    assert_eq!(out.stop, StopReason::MaxIterations);
    assert_eq!(out.history.len(), 2);
    for f in ["config.effective.toml", "corpus_manifest.json", METRICS_LOG, HISTORY_LOG] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let metrics: Vec<MetricsRecord> = read_jsonl(&dir.path().join(METRICS_LOG)).unwrap();
    assert_eq!(metrics.iter().map(|m| (m.k, m.step)).collect::<Vec<_>>(), [(0, 3), (0, 6), (1, 3), (1, 6)]);
    assert_eq!(history(dir.path()), out.history);
    let (iter0, manifest) = load_checkpoint(&iteration_dir(dir.path(), 0), cfg().train.precision.dtype()).unwrap();
    assert_eq!(manifest.k, 0);
    assert_eq!(out.history[1].teacher_checksum, iter0.dn.checksum().unwrap());
    let (iter1, _) = load_checkpoint(&iteration_dir(dir.path(), 1), cfg().train.precision.dtype()).unwrap();
    assert!(iter1.dn0.is_frozen());
    assert_eq!(iter1.dn0.checksum().unwrap(), iter0.dn.checksum().unwrap());
}

#[test]
fn resumed_run_reproduces_the_uninterrupted_trace() {
    let full = tempfile::tempdir().unwrap();
    run_sc(&cfg(), full.path(), &ScOptions::default()).unwrap();
    for cut in [1, 2, 3] {
        let part = tempfile::tempdir().unwrap();
        let stopped =
            run_sc(&cfg(), part.path(), &ScOptions { interrupt_after_checkpoints: Some(cut), ..Default::default() })
                .unwrap();
        assert_eq!(stopped.stop, StopReason::Interrupted);
        run_sc(&cfg(), part.path(), &ScOptions { resume: true, ..Default::default() }).unwrap();
        for log in [METRICS_LOG, HISTORY_LOG] {
            let a = std::fs::read(full.path().join(log)).unwrap();
            let b = std::fs::read(part.path().join(log)).unwrap();
            assert_eq!(a, b, "{log} differs after resuming from checkpoint {cut}");
        }
    }
}

#[test]
fn resume_refuses_a_different_config() {
    let dir = tempfile::tempdir().unwrap();
    run_sc(&cfg(), dir.path(), &ScOptions { interrupt_after_checkpoints: Some(1), ..Default::default() }).unwrap();
    let mut other = cfg();
    other.seed += 1;
    assert!(run_sc(&other, dir.path(), &ScOptions { resume: true, ..Default::default() }).is_err());
}

#[test]
fn stopping_honors_the_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = cfg();
    c.schedule.max_iterations = 5;
    c.schedule.stop_delta_db = f64::INFINITY;
    let out = run_sc(&c, dir.path(), &ScOptions::default()).unwrap();
    let delta = out.history[1].delta_db.unwrap();
    assert_eq!(out.stop, StopReason::Converged { delta_db: delta });
    assert_eq!(out.history.len(), 2);
    assert!(out.history[0].delta_db.is_none());
}

#[test]
fn divergence_leaves_a_failure_record_and_last_good_networks() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = cfg();
    c.train.guard.d_loss_floor = f64::MAX;
    c.train.guard.patience = 4;
    let out = run_sc(&c, dir.path(), &ScOptions::default()).unwrap();
    assert!(matches!(out.stop, StopReason::Diverged { k: 0, step: 3, .. }), "{:?}", out.stop);
    let h = history(dir.path());
    assert_eq!(h.len(), 1);
    assert_eq!(h[0].status, IterationStatus::Diverged);
    assert_eq!(h[0].best_step, 3);
    assert!(dir.path().join(CHECKPOINTS).join(LAST_GOOD).join("manifest.json").is_file());
}

#[test]
fn ablation_table_has_one_column_per_variant() {
    let mut c = cfg();
    c.ablation.steps = 2;
    let records: Vec<_> = [Variant::V1, Variant::V5].iter().map(|v| run_ablation(&c, *v).unwrap()).collect();
    let table = ablation_table(&records);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "| Methods | V1 | V5 |");
    assert_eq!(lines.len(), 2 + 5 + 4);
    assert!(lines[3].starts_with("| BGMloss |  | ✓ |"));
    assert!(table.contains("33.14") && table.contains("34.67"));
}
