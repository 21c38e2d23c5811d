use serde::{Deserialize, Serialize};

use super::adam::AdamConfig;
use crate::branches::Structure;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::networks::{DenoiserConfig, DiscriminatorConfig, GeneratorConfig};
use crate::tensor::Precision;

/// Mode-collapse heuristic: abort when the discriminator loss stays below
/// `d_loss_floor` for `patience` consecutive steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DivergenceGuard {
    pub d_loss_floor: f64,
    pub patience: usize,
}

impl Default for DivergenceGuard {
    fn default() -> Self {
        DivergenceGuard { d_loss_floor: 1e-4, patience: 200 }
    }
}

/// Everything that shapes one training phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub precision: Precision,
    pub adam: AdamConfig,
    /// Learning-rate multiplier for the trainable NE denoiser of the first iteration.
    pub ne_lr_scale: f64,
    pub weights: LossWeights,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub denoiser: DenoiserConfig,
    pub batch: usize,
    pub patch: usize,
    pub eval_interval: usize,
    pub structure: Structure,
    /// Cut the gradient path through extracted noise in the generator step.
    pub detach_ne: bool,
    pub guard: DivergenceGuard,
    /// Add elapsed seconds to metrics records (makes logs run-dependent).
    pub record_wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            precision: Precision::F32,
            adam: AdamConfig::default(),
            ne_lr_scale: 1.0,
            weights: LossWeights::default(),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            denoiser: DenoiserConfig::default(),
            batch: 8,
            patch: 64,
            eval_interval: 100,
            structure: Structure::default(),
            detach_ne: false,
            guard: DivergenceGuard::default(),
            record_wall_clock: false,
        }
    }
}

impl TrainConfig {
    /// Optimizer settings of the trainable NE denoiser.
    pub fn ne_adam(&self) -> AdamConfig {
        AdamConfig { lr: self.adam.lr * self.ne_lr_scale, ..self.adam }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        self.weights.validate()?;
        if !(self.ne_lr_scale > 0.0 && self.ne_lr_scale.is_finite()) {
            return Err(Error::config("train.ne_lr_scale", "must be positive"));
        }
        self.structure.validate()?;
        for (key, v) in [
            ("train.batch", self.batch),
            ("train.patch", self.patch),
            ("train.eval_interval", self.eval_interval),
            ("train.generator.width", self.generator.width),
            ("train.generator.blocks", self.generator.blocks),
            ("train.discriminator.width", self.discriminator.width),
            ("train.discriminator.layers", self.discriminator.layers),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if self.denoiser.variant != crate::networks::DenoiserVariant::LinearConv && self.denoiser.width == 0 {
            return Err(Error::config("train.denoiser.width", "must be positive"));
        }
        let stride = 1usize << self.discriminator.layers;
        if self.patch < stride || self.patch % 2 != 0 {
            return Err(Error::config(
                "train.patch",
                format!("must be even and at least {stride} for a {}-layer discriminator", self.discriminator.layers),
            ));
        }
        if self.patch < self.weights.ssim.window {
            return Err(Error::config(
                "train.patch",
                format!("must cover the {0}x{0} SSIM window", self.weights.ssim.window),
            ));
        }
        if !(self.guard.d_loss_floor >= 0.0) {
            return Err(Error::config("train.guard.d_loss_floor", "must be >= 0"));
        }
        Ok(())
    }
}

/// Outer-loop schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SCSchedule {
    pub max_iterations: usize,
    /// First iteration trained with the stage-two patch and batch.
    pub stage2_start: usize,
    pub stage2_patch: usize,
    pub stage2_batch: usize,
    pub steps_per_iteration: usize,
    /// Steps for every iteration after the first; `steps_per_iteration` when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boost_steps: Option<usize>,
    pub stop_delta_db: f64,
    /// Fresh optimizer moments at every iteration boundary.
    pub reset_optimizers: bool,
    /// Re-initialize the student denoiser after each replacement instead of warm-starting.
    pub reinit_denoiser: bool,
    /// Re-initialize generator and discriminator after each replacement.
    pub reinit_gan: bool,
}

impl Default for SCSchedule {
    fn default() -> Self {
        SCSchedule {
            max_iterations: 8,
            stage2_start: 5,
            stage2_patch: 80,
            stage2_batch: 4,
            steps_per_iteration: 2000,
            boost_steps: None,
            stop_delta_db: 0.02,
            reset_optimizers: true,
            reinit_denoiser: false,
            reinit_gan: false,
        }
    }
}

impl SCSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::config("schedule.max_iterations", "must be at least 1"));
        }
        if self.steps_per_iteration == 0 {
            return Err(Error::config("schedule.steps_per_iteration", "must be at least 1"));
        }
        if self.boost_steps == Some(0) {
            return Err(Error::config("schedule.boost_steps", "must be at least 1"));
        }
        if self.stage2_batch == 0 {
            return Err(Error::config("schedule.stage2_batch", "must be positive"));
        }
        if self.stage2_patch == 0 || self.stage2_patch % 2 != 0 {
            return Err(Error::config("schedule.stage2_patch", "must be even and positive"));
        }
        if self.stop_delta_db.is_nan() || self.stop_delta_db < 0.0 {
            return Err(Error::config("schedule.stop_delta_db", "must be >= 0"));
        }
        Ok(())
    }

    /// Training steps of iteration `k`.
    pub fn steps(&self, k: usize) -> usize {
        match (k, self.boost_steps) {
            (1.., Some(n)) => n,
            _ => self.steps_per_iteration,
        }
    }

    /// `(patch, batch)` used in iteration `k`.
    pub fn geometry(&self, k: usize, train: &TrainConfig) -> (usize, usize) {
        if k >= self.stage2_start {
            (self.stage2_patch, self.stage2_batch)
        } else {
            (train.patch, train.batch)
        }
    }
}
