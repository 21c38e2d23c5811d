use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::Image;
use super::noise::NoiseModelParams;
use super::procedural::procedural_source;
use crate::error::{Error, Result};
use crate::tensor::mix_seed;

/// Fewest training sources a corpus can be built from.
pub const MIN_TRAIN_SOURCES: usize = 16;

const SPLIT_TAG: u64 = 0x5350_4c54;
const SHUFFLE_TAG: u64 = 0x5348_4646;
const TRAIN_NOISE_TAG: u64 = 0x544e_4f49;
const VAL_NOISE_TAG: u64 = 0x564e_4f49;

/// Where clean source images come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpec {
    Procedural { size: usize, channels: usize },
    Directory { path: PathBuf, channels: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    pub source: SourceSpec,
    /// Sources used for training; split in half into clean and noisy domains.
    pub train_sources: usize,
    /// Held-out sources turned into aligned validation pairs.
    pub val_sources: usize,
    /// Random horizontal flips on training crops.
    pub augment: bool,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            source: SourceSpec::Procedural { size: 96, channels: 1 },
            train_sources: 48,
            val_sources: 8,
            augment: false,
        }
    }
}

impl CorpusSpec {
    pub fn channels(&self) -> usize {
        match &self.source {
            SourceSpec::Procedural { channels, .. } | SourceSpec::Directory { channels, .. } => *channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_sources < MIN_TRAIN_SOURCES {
            return Err(Error::config(
                "corpus.train_sources",
                format!("need at least {MIN_TRAIN_SOURCES} training sources, got {}", self.train_sources),
            ));
        }
        if self.val_sources == 0 {
            return Err(Error::config("corpus.val_sources", "need at least one validation source"));
        }
        if !matches!(self.channels(), 1 | 3) {
            return Err(Error::config("corpus.source.channels", "must be 1 or 3"));
        }
        if let SourceSpec::Procedural { size, .. } = self.source {
            if size < 16 {
                return Err(Error::config("corpus.source.size", "procedural sources must be at least 16 pixels"));
            }
        }
        Ok(())
    }

    /// Loads (or generates) every source image, indexed by source id.
    fn load_sources(&self, seed: u64) -> Result<Vec<Image>> {
        let total = self.train_sources + self.val_sources;
        match &self.source {
            SourceSpec::Procedural { size, channels } => Ok((0..total)
                .map(|id| procedural_source(id, *size, *channels, seed))
                .collect()),
            SourceSpec::Directory { path, channels } => {
                let files = list_images(path)?;
                if files.len() < total {
                    return Err(Error::config(
                        "corpus.source.path",
                        format!("{} holds {} images, {total} required", path.display(), files.len()),
                    ));
                }
                files.iter().take(total).map(|f| Image::load(f, *channels)).collect()
            }
        }
    }
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("png")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Training and held-out source ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

pub fn split_sources(spec: &CorpusSpec, seed: u64) -> SourceSplit {
    let mut ids: Vec<usize> = (0..spec.train_sources + spec.val_sources).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, SPLIT_TAG)));
    let validation = ids.split_off(spec.train_sources);
    SourceSplit { train: ids, validation }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub id: usize,
    pub image: Image,
}

/// Record of how a corpus was built, written next to every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub noise: NoiseModelParams,
    pub spec: CorpusSpec,
    pub clean_ids: Vec<usize>,
    pub noisy_ids: Vec<usize>,
    pub validation_ids: Vec<usize>,
}

impl CorpusManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

/// Clean images (domain X) and noisy images (domain Y) from disjoint sources.
#[derive(Debug, Clone, PartialEq)]
pub struct UnpairedCorpus {
    pub clean: Vec<CorpusEntry>,
    pub noisy: Vec<CorpusEntry>,
    pub manifest: CorpusManifest,
}

pub fn build_corpus(spec: &CorpusSpec, params: &NoiseModelParams, seed: u64) -> Result<UnpairedCorpus> {
    spec.validate()?;
    params.validate()?;
    let sources = spec.load_sources(seed)?;
    let split = split_sources(spec, seed);

    let mut order = split.train.clone();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, SHUFFLE_TAG)));
    let half = order.len() / 2;
    let clean: Vec<CorpusEntry> = order[..half]
        .iter()
        .map(|&id| CorpusEntry { id, image: sources[id].clone() })
        .collect();
    let noisy: Vec<CorpusEntry> = order[half..2 * half]
        .iter()
        .map(|&id| CorpusEntry {
            id,
            image: params.apply(&sources[id], mix_seed(mix_seed(params.seed, TRAIN_NOISE_TAG), id as u64)),
        })
        .collect();

    let manifest = CorpusManifest {
        seed,
        noise: *params,
        spec: spec.clone(),
        clean_ids: clean.iter().map(|e| e.id).collect(),
        noisy_ids: noisy.iter().map(|e| e.id).collect(),
        validation_ids: split.validation.clone(),
    };
    Ok(UnpairedCorpus { clean, noisy, manifest })
}

/// Aligned (noisy, clean) pair used only for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationPair {
    pub id: usize,
    pub noisy: Image,
    pub clean: Image,
}

pub fn validation_pairs(spec: &CorpusSpec, params: &NoiseModelParams, seed: u64) -> Result<Vec<ValidationPair>> {
    spec.validate()?;
    params.validate()?;
    let sources = spec.load_sources(seed)?;
    let split = split_sources(spec, seed);
    validation_pairs_from(&sources, &split.validation, &split.train, params)
}

/// Builds validation pairs for `held_out` ids, refusing any id that is also a training id.
pub fn validation_pairs_from(
    sources: &[Image],
    held_out: &[usize],
    training: &[usize],
    params: &NoiseModelParams,
) -> Result<Vec<ValidationPair>> {
    let train: BTreeSet<usize> = training.iter().copied().collect();
    if let Some(id) = held_out.iter().find(|id| train.contains(id)) {
        return Err(Error::config(
            "corpus.val_sources",
            format!("validation source {id} is also a training source"),
        ));
    }
    held_out
        .iter()
        .map(|&id| {
            let clean = sources
                .get(id)
                .ok_or_else(|| Error::invalid(format!("no source with id {id}")))?
                .clone();
            let noisy = params.apply(&clean, mix_seed(mix_seed(params.seed, VAL_NOISE_TAG), id as u64));
            Ok(ValidationPair { id, noisy, clean })
        })
        .collect()
}
