use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::checkpoint::{
    iteration_dir, load_checkpoint, load_latest, save_checkpoint, save_latest, CheckpointManifest, LoopState,
    CHECKPOINTS, CORPUS_MANIFEST, HISTORY_LOG, LAST_GOOD, METRICS_LOG,
};
use super::phase::{init_models, reinitialized, sc_replace, Control, Optimizers, PhaseData, StepLosses, Trainer};
use super::records::{append_jsonl, evaluate, truncate_jsonl, IterationStatus, IterationSummary, ValidationSet};
use crate::branches::ModelBundle;
use crate::config::RunConfig;
use crate::data::{build_corpus, validation_pairs};
use crate::error::{Error, Result};
use crate::tensor::mix_seed;

const REINIT_TAG: u64 = 0x5245_494e;

/// Builds the unpaired corpus and validation set of a configuration.
pub fn load_data(cfg: &RunConfig) -> Result<PhaseData> {
    let corpus = build_corpus(&cfg.corpus, &cfg.noise, cfg.seed)?;
    let pairs = validation_pairs(&cfg.corpus, &cfg.noise, cfg.seed)?;
    Ok(PhaseData {
        corpus: Arc::new(corpus),
        validation: Arc::new(ValidationSet::new(&pairs, cfg.train.precision.dtype())?),
    })
}

/// Creates a run directory holding the effective config and the corpus manifest.
pub fn prepare_run_dir(cfg: &RunConfig, run_dir: &Path) -> Result<PhaseData> {
    cfg.validate()?;
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    cfg.write_effective(run_dir)?;
    let data = load_data(cfg)?;
    data.corpus.manifest.write(&run_dir.join(CORPUS_MANIFEST))?;
    Ok(data)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScOptions {
    /// Continue from `checkpoints/latest` instead of starting fresh.
    pub resume: bool,
    /// Stop after this many mid-phase checkpoints have been written.
    pub interrupt_after_checkpoints: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum StopReason {
    MaxIterations,
    Converged { delta_db: f64 },
    Diverged { k: usize, step: usize, message: String },
    Interrupted,
}

#[derive(Debug)]
pub struct ScOutcome {
    pub history: Vec<IterationSummary>,
    pub stop: StopReason,
    /// Completed iteration with the highest validation PSNR.
    pub best_iteration: Option<usize>,
    /// Networks of the best iteration (last-good networks after a divergence,
    /// current networks after an interruption).
    pub models: ModelBundle,
}

/// Validates the configuration, builds the networks and runs a single step without touching disk.
pub fn dry_run(cfg: &RunConfig) -> Result<StepLosses> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    let models = init_models(&cfg.train, cfg.corpus.channels(), cfg.seed)?;
    let geometry = cfg.schedule.geometry(0, &cfg.train);
    let mut trainer =
        Trainer::new(&cfg.train, models, None, data.corpus, data.validation, geometry, cfg.seed, 1)?;
    trainer.train_step()
}

/// Baseline training: the outer loop limited to its first iteration.
pub fn run_baseline(cfg: &RunConfig, run_dir: &Path, opts: &ScOptions) -> Result<ScOutcome> {
    let mut cfg = cfg.clone();
    cfg.schedule.max_iterations = 1;
    run_sc(&cfg, run_dir, opts)
}

fn best_completed(history: &[IterationSummary]) -> Option<usize> {
    history
        .iter()
        .filter(|h| h.status == IterationStatus::Completed)
        .fold(None::<&IterationSummary>, |best, h| match best {
            Some(b) if b.psnr_val >= h.psnr_val => Some(b),
            _ => Some(h),
        })
        .map(|h| h.k)
}

/// The self-collaboration outer loop.
pub fn run_sc(cfg: &RunConfig, run_dir: &Path, opts: &ScOptions) -> Result<ScOutcome> {
    cfg.validate()?;
    let hash = cfg.hash()?;
    let metrics = run_dir.join(METRICS_LOG);
    let history_log = run_dir.join(HISTORY_LOG);
    let data = if opts.resume { load_data(cfg)? } else { prepare_run_dir(cfg, run_dir)? };
    let dtype = cfg.train.precision.dtype();
    let schedule = &cfg.schedule;

    let mut pending = None;
    let mut outer = if opts.resume {
        let (trainer, geometry, outer) =
            load_latest(run_dir, &cfg.train, data.corpus.clone(), data.validation.clone(), cfg.seed)?;
        if outer.config_hash != hash {
            return Err(Error::Checkpoint {
                path: run_dir.to_path_buf(),
                message: "configuration differs from the run being resumed".into(),
            });
        }
        truncate_jsonl(&metrics, outer.metrics_lines)?;
        truncate_jsonl(&history_log, outer.history_lines)?;
        pending = Some((trainer, geometry));
        outer
    } else {
        let checkpoints = run_dir.join(CHECKPOINTS);
        if checkpoints.exists() {
            std::fs::remove_dir_all(&checkpoints).map_err(|e| Error::io(&checkpoints, e))?;
        }
        for log in [&metrics, &history_log] {
            std::fs::write(log, "").map_err(|e| Error::io(log, e))?;
        }
        LoopState {
            config_hash: hash.clone(),
            history: Vec::new(),
            metrics_lines: 0,
            history_lines: 0,
            teacher_checksum: String::new(),
        }
    };

    let mut carried: Option<(ModelBundle, Option<Optimizers>)> = None;
    let mut written = 0usize;
    loop {
        let (mut trainer, geometry) = match pending.take() {
            Some(p) => p,
            None => {
                let (models, opt) = match carried.take() {
                    Some(c) => c,
                    None => (init_models(&cfg.train, cfg.corpus.channels(), cfg.seed)?, None),
                };
                let geometry = schedule.geometry(models.k, &cfg.train);
                let models_k = models.k;
                outer.teacher_checksum = models.dn0.checksum()?;
                let trainer = Trainer::new(
                    &cfg.train,
                    models,
                    opt,
                    data.corpus.clone(),
                    data.validation.clone(),
                    geometry,
                    cfg.seed,
                    schedule.steps(models_k),
                )?;
                (trainer, geometry)
            }
        };
        let k = trainer.models.k;
        let input = trainer.models.clone();
        let teacher_checksum = outer.teacher_checksum.clone();
        let manifest = |models: &ModelBundle, step: usize, record| -> Result<CheckpointManifest> {
            Ok(CheckpointManifest {
                k,
                step,
                seed: cfg.seed,
                config_hash: hash.clone(),
                metrics: record,
                checksums: models.checksums()?,
            })
        };

        let result = trainer.run(|t, record| {
            append_jsonl(&metrics, record)?;
            log::debug!("k={} step={} psnr={:.3} ssim={:.4}", record.k, record.step, record.psnr_val, record.ssim_val);
            outer.metrics_lines += 1;
            save_latest(run_dir, t, geometry, &outer)?;
            written += 1;
            Ok(match opts.interrupt_after_checkpoints {
                Some(n) if written >= n => Control::Halt,
                _ => Control::Continue,
            })
        });
        match result {
            Ok(false) => {}
            Ok(true) => {
                let best_iteration = best_completed(&outer.history);
                return Ok(ScOutcome {
                    history: outer.history,
                    stop: StopReason::Interrupted,
                    best_iteration,
                    models: trainer.models,
                });
            }
            Err(Error::Divergence { k, step, reason }) => {
                log::warn!("iteration {k} diverged at step {step}: {reason}");
                let (good, eval, best_step) = match &trainer.best {
                    Some(b) => (b.models.clone(), b.eval.clone(), b.step),
                    None => (input.clone(), evaluate(&input.dn, &data.validation, &cfg.train.weights.ssim)?, 0),
                };
                let record = trainer.best.as_ref().and_then(|b| trainer.records.iter().find(|r| r.step == b.step));
                save_checkpoint(
                    &run_dir.join(CHECKPOINTS).join(LAST_GOOD),
                    &good,
                    &manifest(&good, best_step, record.cloned())?,
                )?;
                let summary = IterationSummary {
                    k,
                    status: IterationStatus::Diverged,
                    best_step,
                    psnr_val: eval.psnr,
                    ssim_val: eval.ssim,
                    delta_db: None,
                    patch: geometry.0,
                    batch: geometry.1,
                    steps: step,
                    teacher_checksum,
                    message: Some(reason.clone()),
                };
                append_jsonl(&history_log, &summary)?;
                outer.history.push(summary);
                let best_iteration = best_completed(&outer.history);
                return Ok(ScOutcome {
                    history: outer.history,
                    stop: StopReason::Diverged { k, step, message: reason },
                    best_iteration,
                    models: good,
                });
            }
            Err(e) => return Err(e),
        }

        let out = trainer.finish(false);
        let best = out.best.as_ref().ok_or_else(|| Error::Contract("phase ended without an evaluation".into()))?;
        let delta_db = outer
            .history
            .iter()
            .rev()
            .find(|h| h.status == IterationStatus::Completed)
            .map(|h| best.eval.psnr - h.psnr_val);
        let record = out.records.iter().find(|r| r.step == best.step).cloned();
        save_checkpoint(&iteration_dir(run_dir, k), &best.models, &manifest(&best.models, best.step, record)?)?;
        let summary = IterationSummary {
            k,
            status: IterationStatus::Completed,
            best_step: best.step,
            psnr_val: best.eval.psnr,
            ssim_val: best.eval.ssim,
            delta_db,
            patch: geometry.0,
            batch: geometry.1,
            steps: out.steps_done,
            teacher_checksum,
            message: None,
        };
        append_jsonl(&history_log, &summary)?;
        log::info!(
            "iteration {k}: best psnr {:.3} dB at step {}, delta {}",
            summary.psnr_val,
            summary.best_step,
            delta_db.map_or("n/a".to_string(), |d| format!("{d:+.3} dB"))
        );
        outer.history_lines += 1;
        outer.history.push(summary);

        let stop = if k + 1 >= schedule.max_iterations {
            Some(StopReason::MaxIterations)
        } else {
            match delta_db {
                Some(d) if d < schedule.stop_delta_db => Some(StopReason::Converged { delta_db: d }),
                _ => None,
            }
        };
        if let Some(stop) = stop {
            let best_iteration = best_completed(&outer.history);
            let models = match best_iteration {
                Some(b) if b != k => load_checkpoint(&iteration_dir(run_dir, b), dtype)?.0,
                _ => best.models.clone(),
            };
            return Ok(ScOutcome { history: outer.history, stop, best_iteration, models });
        }

        let mut next = sc_replace(best.models.clone());
        let reseed = |tag: u64| mix_seed(mix_seed(mix_seed(cfg.seed, REINIT_TAG), next.k as u64), tag);
        if schedule.reinit_denoiser {
            next.dn = reinitialized(&next.dn, reseed(0))?;
        }
        if schedule.reinit_gan {
            next.g = reinitialized(&next.g, reseed(1))?;
            next.d = reinitialized(&next.d, reseed(2))?;
        }
        let opt = if schedule.reset_optimizers || schedule.reinit_denoiser || schedule.reinit_gan {
            None
        } else {
            Some(Optimizers { dn0: None, ..out.optimizers })
        };
        carried = Some((next, opt));
    }
}
