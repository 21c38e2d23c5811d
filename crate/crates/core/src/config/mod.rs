//! The serializable run configuration.
//!
//! A run is described by one TOML document. Every field has a default, so an
//! empty document is a valid configuration; unknown keys are rejected.
//!
//! ```
//! let cfg = sc_denoise::config::parse_config("[train.weights]\nlambda_bgm = 3.0\n").unwrap();
//! assert_eq!(cfg.train.weights.lambda_bgm, 3.0);
//! assert_eq!(cfg.train.adam.lr, 1e-4);
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{CorpusSpec, NoiseModelParams, SourceSpec};
use crate::error::{Error, Result};
use crate::train::{SCSchedule, TrainConfig};

/// File name of the post-defaults configuration written into every run directory.
pub const EFFECTIVE_CONFIG: &str = "config.effective.toml";

/// Settings of the ablation harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub steps: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig { steps: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub corpus: CorpusSpec,
    pub noise: NoiseModelParams,
    pub train: TrainConfig,
    pub schedule: SCSchedule,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            corpus: CorpusSpec::default(),
            noise: NoiseModelParams::default(),
            train: TrainConfig::default(),
            schedule: SCSchedule::default(),
            ablation: AblationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.noise.validate()?;
        self.train.validate()?;
        self.schedule.validate()?;
        if self.ablation.steps == 0 {
            return Err(Error::config("ablation.steps", "must be positive"));
        }
        let stride = 1usize << self.train.discriminator.layers;
        let window = self.train.weights.ssim.window;
        if self.schedule.stage2_start < self.schedule.max_iterations
            && (self.schedule.stage2_patch < stride || self.schedule.stage2_patch < window)
        {
            return Err(Error::config(
                "schedule.stage2_patch",
                format!("must be at least {} for this discriminator and SSIM window", stride.max(window)),
            ));
        }
        if let SourceSpec::Procedural { size, .. } = self.corpus.source {
            let largest = if self.schedule.stage2_start < self.schedule.max_iterations {
                self.train.patch.max(self.schedule.stage2_patch)
            } else {
                self.train.patch
            };
            if largest > size {
                return Err(Error::config(
                    "train.patch",
                    format!("patch {largest} exceeds the {size}-pixel procedural sources"),
                ));
            }
            if size < window {
                return Err(Error::config("corpus.source.size", "validation images must cover the SSIM window"));
            }
        }
        Ok(())
    }

    /// Serialized form of the full configuration, defaults included.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<document>", e.to_string()))
    }

    /// SHA-256 of the serialized configuration.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    /// Writes the effective configuration into `dir`.
    pub fn write_effective(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(EFFECTIVE_CONFIG);
        std::fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// A configuration small enough to train in seconds on a CPU.
    pub fn smoke() -> Self {
        let mut cfg = RunConfig::default();
        cfg.corpus.source = SourceSpec::Procedural { size: 32, channels: 1 };
        cfg.corpus.train_sources = 16;
        cfg.corpus.val_sources = 4;
        cfg.train.generator.width = 8;
        cfg.train.generator.blocks = 2;
        cfg.train.discriminator.width = 8;
        cfg.train.denoiser.width = 8;
        cfg.train.denoiser.depth = 3;
        cfg.train.weights.ssim.window = 7;
        cfg.train.patch = 16;
        cfg.train.batch = 4;
        cfg.train.eval_interval = 10;
        cfg.train.adam.lr = 1e-3;
        cfg.schedule.steps_per_iteration = 20;
        cfg.schedule.max_iterations = 2;
        cfg.schedule.stage2_patch = 24;
        cfg.ablation.steps = 20;
        cfg
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| {
        let key = offending_key(text, &e).unwrap_or_else(|| "<document>".to_string());
        Error::config(key, e.message().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

/// Dotted path of the key an error points at.
fn offending_key(text: &str, err: &toml::de::Error) -> Option<String> {
    if let Some(rest) = err.message().strip_prefix("unknown field `") {
        let field = rest.split('`').next()?;
        let table = err.span().map(|s| enclosing_table(text, s.start)).unwrap_or_default();
        return Some(join_key(&table, field));
    }
    let span = err.span()?;
    let line_start = text[..span.start].rfind('\n').map_or(0, |i| i + 1);
    let line = text[line_start..].lines().next()?;
    let key = line.split('=').next()?.trim();
    if key.is_empty() || key.starts_with('[') || line.find('=').is_none() {
        let header = line.trim().trim_matches(|c| c == '[' || c == ']').trim();
        return (!header.is_empty()).then(|| header.to_string());
    }
    Some(join_key(&enclosing_table(text, line_start), key.trim_matches('"')))
}

fn enclosing_table(text: &str, offset: usize) -> String {
    text[..offset.min(text.len())]
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('[') && l.ends_with(']'))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').trim().to_string())
        .unwrap_or_default()
}

fn join_key(table: &str, key: &str) -> String {
    if table.is_empty() {
        key.to_string()
    } else {
        format!("{table}.{key}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key_of(text: &str) -> String {
        match parse_config(text) {
            Err(Error::Config { key, .. }) => key,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.train.weights.lambda_bgm, 6.0);
        assert_eq!(cfg.train.weights.lambda_ssim, 1.0);
        assert_eq!(cfg.train.adam.lr, 1e-4);
    }

    #[test]
    fn negative_lambda_names_the_key() {
        assert!(key_of("[train.weights]\nlambda_bgm = -1.0\n").contains("lambda_bgm"));
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_path() {
        assert_eq!(key_of("[train]\nbatchsize = 3\n"), "train.batchsize");
        assert_eq!(key_of("sed = 3\n"), "sed");
    }

    #[test]
    fn type_mismatch_names_the_key() {
        assert_eq!(key_of("[schedule]\nmax_iterations = \"many\"\n"), "schedule.max_iterations");
    }

    #[test]
    fn smoke_config_is_valid_and_round_trips() {
        let cfg = RunConfig::smoke();
        cfg.validate().unwrap();
        assert_eq!(parse_config(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn oversized_patch_is_rejected() {
        assert_eq!(key_of("[train]\npatch = 128\n"), "train.patch");
    }

    #[test]
    fn effective_config_is_written() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::smoke();
        let path = cfg.write_effective(dir.path()).unwrap();
        assert_eq!(load_config(&path).unwrap(), cfg);
        assert_eq!(cfg.hash().unwrap(), RunConfig::smoke().hash().unwrap());
    }
}
