use std::path::{Path, PathBuf};
use std::sync::Arc;

use candle_core::DType;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::phase::{Best, LossAccumulator, Optimizers, Trainer};
use super::records::{Evaluation, IterationSummary, MetricsRecord, ValidationSet};
use super::settings::TrainConfig;
use crate::branches::ModelBundle;
use crate::data::UnpairedCorpus;
use crate::error::{Error, Result};
use crate::networks::NetworkHandle;

pub const METRICS_LOG: &str = "metrics.jsonl";
pub const HISTORY_LOG: &str = "history.jsonl";
pub const CORPUS_MANIFEST: &str = "corpus_manifest.json";
pub const CHECKPOINTS: &str = "checkpoints";
pub const LATEST: &str = "latest";
pub const LAST_GOOD: &str = "last_good";
const MANIFEST: &str = "manifest.json";
const STATE: &str = "state.json";
const STEMS: [&str; 4] = ["g", "d", "dn", "dn0"];

/// Directory of the best snapshot of iteration `k`.
pub fn iteration_dir(run_dir: &Path, k: usize) -> PathBuf {
    run_dir.join(CHECKPOINTS).join(format!("iter_{k}"))
}

/// Identification written next to every saved model bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub k: usize,
    pub step: usize,
    pub seed: u64,
    pub config_hash: String,
    pub metrics: Option<MetricsRecord>,
    /// `(g, d, dn, dn0)` parameter checksums.
    pub checksums: [String; 4],
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn save_networks(models: &ModelBundle, dir: &Path) -> Result<()> {
    for (net, stem) in [&models.g, &models.d, &models.dn, &models.dn0].into_iter().zip(STEMS) {
        net.save(dir, stem)?;
    }
    Ok(())
}

fn load_networks(dir: &Path, dtype: DType, k: usize) -> Result<ModelBundle> {
    let [g, d, dn, dn0] = STEMS.map(|stem| NetworkHandle::load(dir, stem, dtype));
    Ok(ModelBundle { g: g?, d: d?, dn: dn?, dn0: dn0?, k })
}

/// Saves a model bundle with its manifest into `dir`.
pub fn save_checkpoint(dir: &Path, models: &ModelBundle, manifest: &CheckpointManifest) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_networks(models, dir)?;
    write_json(&dir.join(MANIFEST), manifest)
}

pub fn load_checkpoint(dir: &Path, dtype: DType) -> Result<(ModelBundle, CheckpointManifest)> {
    let manifest: CheckpointManifest = read_json(&dir.join(MANIFEST))?;
    let models = load_networks(dir, dtype, manifest.k)?;
    let sums = models.checksums()?;
    if sums != manifest.checksums {
        return Err(Error::Checkpoint { path: dir.to_path_buf(), message: "model checksums differ from manifest".into() });
    }
    Ok((models, manifest))
}

/// Loads the denoiser alone from a checkpoint directory.
pub fn load_denoiser(dir: &Path, dtype: DType) -> Result<NetworkHandle> {
    NetworkHandle::load(dir, "dn", dtype)
}

/// Outer-loop bookkeeping carried across a resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct LoopState {
    pub config_hash: String,
    pub history: Vec<IterationSummary>,
    pub metrics_lines: usize,
    pub history_lines: usize,
    /// NE checksum at the start of the current phase.
    pub teacher_checksum: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct PhaseState {
    k: usize,
    step: usize,
    steps: usize,
    geometry: (usize, usize),
    acc: LossAccumulator,
    low_d_streak: usize,
    best: Option<(Evaluation, usize)>,
    records: Vec<MetricsRecord>,
    has_dn0_optimizer: bool,
    outer: LoopState,
}

/// Atomically replaces `checkpoints/latest` with the trainer's full state.
pub(crate) fn save_latest(run_dir: &Path, trainer: &Trainer, geometry: (usize, usize), outer: &LoopState) -> Result<()> {
    let root = run_dir.join(CHECKPOINTS);
    let tmp = root.join(format!("{LATEST}.tmp"));
    let dest = root.join(LATEST);
    if tmp.exists() {
        std::fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    let models_dir = tmp.join("models");
    std::fs::create_dir_all(&models_dir).map_err(|e| Error::io(&models_dir, e))?;
    save_networks(&trainer.models, &models_dir)?;
    if let Some(best) = &trainer.best {
        save_networks(&best.models, &tmp.join("best"))?;
    }
    trainer.opt.g.save(&tmp, "opt_g")?;
    trainer.opt.d.save(&tmp, "opt_d")?;
    trainer.opt.dn.save(&tmp, "opt_dn")?;
    if let Some(o) = &trainer.opt.dn0 {
        o.save(&tmp, "opt_dn0")?;
    }
    let state = PhaseState {
        k: trainer.models.k,
        step: trainer.step,
        steps: trainer.steps,
        geometry,
        acc: trainer.acc,
        low_d_streak: trainer.low_d_streak,
        best: trainer.best.as_ref().map(|b| (b.eval.clone(), b.step)),
        records: trainer.records.clone(),
        has_dn0_optimizer: trainer.opt.dn0.is_some(),
        outer: outer.clone(),
    };
    write_json(&tmp.join(STATE), &state)?;
    if dest.exists() {
        std::fs::remove_dir_all(&dest).map_err(|e| Error::io(&dest, e))?;
    }
    std::fs::rename(&tmp, &dest).map_err(|e| Error::io(&dest, e))
}

/// Rebuilds the trainer saved by [`save_latest`].
pub(crate) fn load_latest(
    run_dir: &Path,
    cfg: &TrainConfig,
    corpus: Arc<UnpairedCorpus>,
    validation: Arc<ValidationSet>,
    seed: u64,
) -> Result<(Trainer, (usize, usize), LoopState)> {
    let dir = run_dir.join(CHECKPOINTS).join(LATEST);
    if !dir.is_dir() {
        return Err(Error::Checkpoint { path: dir, message: "no checkpoint to resume from".into() });
    }
    let state: PhaseState = read_json(&dir.join(STATE))?;
    let dtype = cfg.precision.dtype();
    let models = load_networks(&dir.join("models"), dtype, state.k)?;
    let best = match state.best {
        Some((eval, step)) => Some(Best { models: load_networks(&dir.join("best"), dtype, state.k)?, eval, step }),
        None => None,
    };
    let opt = Optimizers {
        g: Adam::load(cfg.adam, &models.g, &dir, "opt_g")?,
        d: Adam::load(cfg.adam, &models.d, &dir, "opt_d")?,
        dn: Adam::load(cfg.adam, &models.dn, &dir, "opt_dn")?,
        dn0: if state.has_dn0_optimizer { Some(Adam::load(cfg.ne_adam(), &models.dn0, &dir, "opt_dn0")?) } else { None },
    };
    let mut trainer =
        Trainer::new(cfg, models, Some(opt), corpus, validation, state.geometry, seed, state.steps)?;
    trainer.restore(state.step, best, state.acc, state.low_d_streak, state.records);
    Ok((trainer, state.geometry, state.outer))
}
