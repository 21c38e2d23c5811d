use std::sync::Arc;
use std::time::Instant;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::records::{evaluate, Evaluation, LossSummary, MetricsRecord, ValidationSet};
use super::settings::TrainConfig;
use crate::branches::{forward_structure, BranchPasses, ModelBundle};
use crate::data::{BatchStream, UnpairedCorpus};
use crate::error::{Error, Result};
use crate::losses::{bgm_loss, dn_loss, dn_sc_loss_with, g_objective, gan_total_d, gan_total_g, TeacherTargets};
use crate::networks::{make_denoiser, make_discriminator, make_generator, make_initial_ne, NetworkHandle};
use crate::tensor::{mix_seed, scalar};

const G_TAG: u64 = 0x47;
const D_TAG: u64 = 0x44;
const DN_TAG: u64 = 0x444e;
const STREAM_TAG: u64 = 0x5354_524d;

/// Fresh networks for iteration 0: a learnable single-layer NE denoiser and `k = 0`.
pub fn init_models(cfg: &TrainConfig, channels: usize, seed: u64) -> Result<ModelBundle> {
    let dtype = cfg.precision.dtype();
    Ok(ModelBundle {
        g: make_generator(&cfg.generator, channels, dtype, mix_seed(seed, G_TAG))?,
        d: make_discriminator(&cfg.discriminator, channels, dtype, mix_seed(seed, D_TAG))?,
        dn: make_denoiser(&cfg.denoiser, channels, dtype, mix_seed(seed, DN_TAG))?,
        dn0: make_initial_ne(channels, dtype)?,
        k: 0,
    })
}

/// Promotes the current denoiser into the NE module as a frozen teacher and advances `k`.
pub fn sc_replace(models: ModelBundle) -> ModelBundle {
    let dn0 = models.dn.frozen_snapshot("dn0");
    ModelBundle { dn0, k: models.k + 1, ..models }
}

/// Batch-stream seed of iteration `k`.
pub fn stream_seed(seed: u64, k: usize) -> u64 {
    mix_seed(mix_seed(seed, STREAM_TAG), k as u64)
}

/// Optimizer state for every trainable player.
#[derive(Debug, Clone)]
pub struct Optimizers {
    pub g: Adam,
    pub d: Adam,
    pub dn: Adam,
    /// Present while the NE denoiser is still trainable.
    pub dn0: Option<Adam>,
}

impl Optimizers {
    pub fn new(cfg: &TrainConfig, models: &ModelBundle) -> Result<Self> {
        Ok(Optimizers {
            g: Adam::new(cfg.adam, &models.g)?,
            d: Adam::new(cfg.adam, &models.d)?,
            dn: Adam::new(cfg.adam, &models.dn)?,
            dn0: if models.dn0.is_frozen() { None } else { Some(Adam::new(cfg.ne_adam(), &models.dn0)?) },
        })
    }
}

/// Raw losses of one alternating step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub d: f64,
    pub g_adv: f64,
    pub g_bgm: f64,
    pub dn: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub(crate) struct LossAccumulator {
    pub sums: [f64; 4],
    pub count: usize,
}

impl LossAccumulator {
    fn add(&mut self, l: &StepLosses) {
        for (s, v) in self.sums.iter_mut().zip([l.d, l.g_adv, l.g_bgm, l.dn]) {
            *s += v;
        }
        self.count += 1;
    }

    fn take(&mut self) -> LossSummary {
        let n = self.count.max(1) as f64;
        let [d, g_adv, g_bgm, dn] = self.sums.map(|s| s / n);
        *self = LossAccumulator::default();
        LossSummary { d, g_adv, g_bgm, dn }
    }
}

/// Best-validation snapshot of a phase.
#[derive(Debug, Clone)]
pub struct Best {
    pub models: ModelBundle,
    pub eval: Evaluation,
    pub step: usize,
}

/// What to do after an evaluation callback.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Halt,
}

/// Result of a finished (or halted) phase.
#[derive(Debug)]
pub struct PhaseOutput {
    /// Networks after the last executed step.
    pub last: ModelBundle,
    /// Best snapshot, or `None` when no evaluation ran.
    pub best: Option<Best>,
    pub records: Vec<MetricsRecord>,
    pub optimizers: Optimizers,
    pub steps_done: usize,
    pub halted: bool,
}

impl PhaseOutput {
    /// Networks to carry forward: the best snapshot when there is one.
    pub fn selected(&self) -> &ModelBundle {
        self.best.as_ref().map(|b| &b.models).unwrap_or(&self.last)
    }
}

/// Alternating optimization of one outer-loop iteration.
pub struct Trainer {
    pub(crate) cfg: TrainConfig,
    pub(crate) models: ModelBundle,
    pub(crate) opt: Optimizers,
    pub(crate) stream: BatchStream,
    pub(crate) validation: Arc<ValidationSet>,
    pub(crate) steps: usize,
    pub(crate) step: usize,
    pub(crate) best: Option<Best>,
    pub(crate) acc: LossAccumulator,
    pub(crate) low_d_streak: usize,
    pub(crate) records: Vec<MetricsRecord>,
    started: Instant,
}

impl Trainer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        cfg: &TrainConfig,
        models: ModelBundle,
        optimizers: Option<Optimizers>,
        corpus: Arc<UnpairedCorpus>,
        validation: Arc<ValidationSet>,
        geometry: (usize, usize),
        seed: u64,
        steps: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        if models.k >= 1 && !models.dn0.is_frozen() {
            return Err(Error::Contract("iterations after the first need a frozen NE denoiser".into()));
        }
        let (patch, batch) = geometry;
        let stream = BatchStream::new(corpus, batch, patch, stream_seed(seed, models.k), cfg.precision.dtype())?;
        let opt = match optimizers {
            Some(o) => o,
            None => Optimizers::new(cfg, &models)?,
        };
        Ok(Trainer {
            cfg: cfg.clone(),
            models,
            opt,
            stream,
            validation,
            steps,
            step: 0,
            best: None,
            acc: LossAccumulator::default(),
            low_d_streak: 0,
            records: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn models(&self) -> &ModelBundle {
        &self.models
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn records(&self) -> &[MetricsRecord] {
        &self.records
    }

    pub fn best(&self) -> Option<&Best> {
        self.best.as_ref()
    }

    fn diverged(&self, reason: String) -> Error {
        Error::Divergence { k: self.models.k, step: self.step, reason }
    }

    fn finite(&self, name: &str, v: f64) -> Result<f64> {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.diverged(format!("{name} loss is {v}")))
        }
    }

    /// One D-step, G-step and DN-step on batch number `self.step`.
    pub fn train_step(&mut self) -> Result<StepLosses> {
        let batch = self.stream.batch_at(self.step as u64)?;
        let (x, y) = (&batch.x, &batch.y);
        let w = self.cfg.weights.clone();
        let passes = BranchPasses { detach_ne: self.cfg.detach_ne, ..Default::default() };
        let bundle = forward_structure(x, y, &self.models, self.cfg.structure, passes)?;
        let fakes = bundle.fakes();

        let loss_d = gan_total_d(&self.models.d, y, &fakes)?;
        let d = self.finite("discriminator", scalar(&loss_d)?)?;
        let grads = loss_d.backward()?;
        self.opt.d.step(&mut self.models.d, &grads)?;

        let gan_g = gan_total_g(&self.models.d, &fakes)?;
        let bgm_terms = bundle
            .bgm_pairs(x, w.bgm_scope)
            .into_iter()
            .map(|(c, s)| bgm_loss(c, s, &w.blur_bank))
            .collect::<Result<Vec<_>>>()?;
        let g_adv = self.finite("generator adversarial", scalar(&gan_g)?)?;
        let mut g_bgm = 0.0;
        for t in &bgm_terms {
            g_bgm += scalar(t)?;
        }
        let g_bgm = self.finite("background guidance", g_bgm)?;
        let loss_g = g_objective(&gan_g, &bgm_terms, &w)?;
        let grads = loss_g.backward()?;
        self.opt.g.step(&mut self.models.g, &grads)?;
        if !self.models.dn0.is_frozen() {
            if let Some(o) = self.opt.dn0.as_mut() {
                o.step(&mut self.models.dn0, &grads)?;
            }
        }

        let x_u_syn = bundle.x_u_syn.detach();
        drop(bundle);
        let loss_dn = if self.models.k >= 1 {
            let n = x_u_syn.dim(0)?;
            let out = self.models.dn.forward_train(&[&Tensor::cat(&[&x_u_syn, y], 0)?])?;
            let (x_rec, y_rec) = (out.narrow(0, 0, n)?, out.narrow(0, n, n)?);
            let teacher = TeacherTargets::compute(&self.models.dn0, &x_u_syn, y)?;
            dn_sc_loss_with(&x_rec, x, &y_rec, &teacher, &w)?
        } else {
            let x_rec = self.models.dn.forward_train(&[&x_u_syn])?;
            dn_loss(&x_rec, x, &w)?
        };
        let dn = self.finite("denoiser", scalar(&loss_dn)?)?;
        let grads = loss_dn.backward()?;
        self.opt.dn.step(&mut self.models.dn, &grads)?;

        if d < self.cfg.guard.d_loss_floor {
            self.low_d_streak += 1;
            if self.low_d_streak >= self.cfg.guard.patience {
                return Err(self.diverged(format!(
                    "discriminator loss below {} for {} consecutive steps",
                    self.cfg.guard.d_loss_floor, self.low_d_streak
                )));
            }
        } else {
            self.low_d_streak = 0;
        }
        Ok(StepLosses { d, g_adv, g_bgm, dn })
    }

    fn evaluate_now(&mut self) -> Result<MetricsRecord> {
        let eval = evaluate(&self.models.dn, &self.validation, &self.cfg.weights.ssim)?;
        let mut record = eval.record(self.models.k, self.step, self.acc.take());
        if self.cfg.record_wall_clock {
            record.wall_clock_s = Some(self.started.elapsed().as_secs_f64());
        }
        if self.best.as_ref().map_or(true, |b| eval.psnr > b.eval.psnr) {
            self.best = Some(Best { models: self.models.clone(), eval, step: self.step });
        }
        self.records.push(record.clone());
        Ok(record)
    }

    /// Runs the remaining steps, calling `on_eval` after every evaluation.
    /// Returns `true` when a callback halted the phase early.
    pub fn run(&mut self, mut on_eval: impl FnMut(&Trainer, &MetricsRecord) -> Result<Control>) -> Result<bool> {
        while self.step < self.steps {
            let losses = self.train_step()?;
            self.acc.add(&losses);
            self.step += 1;
            if self.step % self.cfg.eval_interval == 0 || self.step == self.steps {
                let record = self.evaluate_now()?;
                if on_eval(self, &record)? == Control::Halt {
                    return Ok(true);
                }
            }
        }
        Ok(false)
    }

    pub fn finish(self, halted: bool) -> PhaseOutput {
        PhaseOutput {
            last: self.models,
            best: self.best,
            records: self.records,
            optimizers: self.opt,
            steps_done: self.step,
            halted,
        }
    }

    /// Swaps in a restored mid-phase state.
    pub(crate) fn restore(
        &mut self,
        step: usize,
        best: Option<Best>,
        acc: LossAccumulator,
        low_d_streak: usize,
        records: Vec<MetricsRecord>,
    ) {
        self.step = step;
        self.best = best;
        self.acc = acc;
        self.low_d_streak = low_d_streak;
        self.records = records;
    }
}

/// Data shared by every phase of a run.
#[derive(Debug, Clone)]
pub struct PhaseData {
    pub corpus: Arc<UnpairedCorpus>,
    pub validation: Arc<ValidationSet>,
}

/// One phase from fresh optimizer state, without checkpoints.
pub fn train_phase(
    models: ModelBundle,
    data: &PhaseData,
    cfg: &TrainConfig,
    steps: usize,
    seed: u64,
) -> Result<PhaseOutput> {
    let mut trainer = Trainer::new(
        cfg,
        models,
        None,
        data.corpus.clone(),
        data.validation.clone(),
        (cfg.patch, cfg.batch),
        seed,
        steps,
    )?;
    let halted = trainer.run(|_, _| Ok(Control::Continue))?;
    Ok(trainer.finish(halted))
}

/// Re-initialized copy of `net` with the same architecture.
pub(crate) fn reinitialized(net: &NetworkHandle, seed: u64) -> Result<NetworkHandle> {
    NetworkHandle::new(net.name().to_string(), net.architecture().clone(), net.dtype(), seed)
}
