use std::sync::Arc;

use candle_core::{DType, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::corpus::UnpairedCorpus;
use crate::error::{Error, Result};
use crate::tensor::mix_seed;

const CLEAN_PERM_TAG: u64 = 0x4350_4552;
const NOISY_PERM_TAG: u64 = 0x4e50_4552;
const CROP_TAG: u64 = 0x4352_4f50;

/// One training item: clean patches `x` and noisy patches `y` from unrelated sources.
#[derive(Debug, Clone)]
pub struct UnpairedBatch {
    pub x: Tensor,
    pub y: Tensor,
    pub clean_ids: Vec<usize>,
    pub noisy_ids: Vec<usize>,
}

/// Infinite, seekable stream of unpaired batches.
///
/// Batch `t` is a pure function of `(seed, t)`: every epoch reshuffles both
/// domains, and the last batch of an epoch wraps to the front of the same
/// permutation so every batch is full.
#[derive(Debug, Clone)]
pub struct BatchStream {
    corpus: Arc<UnpairedCorpus>,
    batch: usize,
    patch: usize,
    seed: u64,
    dtype: DType,
    augment: bool,
    next: u64,
}

pub fn iterate_batches(
    corpus: Arc<UnpairedCorpus>,
    batch: usize,
    patch: usize,
    seed: u64,
    dtype: DType,
) -> Result<BatchStream> {
    BatchStream::new(corpus, batch, patch, seed, dtype)
}

impl BatchStream {
    pub fn new(corpus: Arc<UnpairedCorpus>, batch: usize, patch: usize, seed: u64, dtype: DType) -> Result<Self> {
        if batch == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if corpus.clean.is_empty() || corpus.noisy.is_empty() {
            return Err(Error::invalid("corpus has an empty domain"));
        }
        let smallest = corpus
            .clean
            .iter()
            .chain(&corpus.noisy)
            .map(|e| e.image.height.min(e.image.width))
            .min()
            .unwrap_or(0);
        if patch == 0 || patch > smallest {
            return Err(Error::invalid(format!(
                "patch {patch} does not fit the smallest corpus image ({smallest} px)"
            )));
        }
        let augment = corpus.manifest.spec.augment;
        Ok(BatchStream { corpus, batch, patch, seed, dtype, augment, next: 0 })
    }

    pub fn epoch_len(&self) -> u64 {
        self.corpus.clean.len().div_ceil(self.batch) as u64
    }

    pub fn position(&self) -> u64 {
        self.next
    }

    pub fn seek(&mut self, step: u64) {
        self.next = step;
    }

    /// Clean and noisy index permutations of one epoch.
    pub fn epoch_order(&self, epoch: u64) -> (Vec<usize>, Vec<usize>) {
        let shuffled = |len: usize, tag: u64| {
            let mut idx: Vec<usize> = (0..len).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(self.seed, tag), epoch)));
            idx
        };
        (
            shuffled(self.corpus.clean.len(), CLEAN_PERM_TAG),
            shuffled(self.corpus.noisy.len(), NOISY_PERM_TAG),
        )
    }

    /// Corpus indices (not source ids) of batch `step`.
    pub fn indices_at(&self, step: u64) -> (Vec<usize>, Vec<usize>) {
        let epoch_len = self.epoch_len();
        let (epoch, pos) = (step / epoch_len, (step % epoch_len) as usize);
        let (cp, np) = self.epoch_order(epoch);
        let pick = |perm: &[usize]| {
            (0..self.batch)
                .map(|j| perm[(pos * self.batch + j) % perm.len()])
                .collect::<Vec<_>>()
        };
        (pick(&cp), pick(&np))
    }

    pub fn batch_at(&self, step: u64) -> Result<UnpairedBatch> {
        let (ci, ni) = self.indices_at(step);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(self.seed, CROP_TAG), step));
        let mut crop = |im: &super::image::Image| {
            let top = rng.random_range(0..=im.height - self.patch);
            let left = rng.random_range(0..=im.width - self.patch);
            let flip = self.augment && rng.random_bool(0.5);
            im.crop_tensor(top, left, self.patch, flip, self.dtype)
        };
        let mut xs = Vec::with_capacity(self.batch);
        let mut ys = Vec::with_capacity(self.batch);
        for (&c, &n) in ci.iter().zip(&ni) {
            xs.push(crop(&self.corpus.clean[c].image)?);
            ys.push(crop(&self.corpus.noisy[n].image)?);
        }
        Ok(UnpairedBatch {
            x: Tensor::cat(&xs, 0)?,
            y: Tensor::cat(&ys, 0)?,
            clean_ids: ci.iter().map(|&i| self.corpus.clean[i].id).collect(),
            noisy_ids: ni.iter().map(|&i| self.corpus.noisy[i].id).collect(),
        })
    }
}

impl Iterator for BatchStream {
    type Item = Result<UnpairedBatch>;

    fn next(&mut self) -> Option<Self::Item> {
        let out = self.batch_at(self.next);
        self.next += 1;
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_corpus, CorpusSpec, NoiseModelParams, SourceSpec};
    use crate::tensor::to_f64_vec;
    use std::collections::BTreeSet;

    fn corpus(train: usize) -> Arc<UnpairedCorpus> {
        let spec = CorpusSpec {
            source: SourceSpec::Procedural { size: 20, channels: 1 },
            train_sources: train,
            val_sources: 2,
            augment: false,
        };
        Arc::new(build_corpus(&spec, &NoiseModelParams::default(), 1).unwrap())
    }

    #[test]
    fn unpaired_by_construction() {
        let c = corpus(16);
        let mut s = BatchStream::new(c, 1, 8, 3, DType::F32).unwrap();
        for b in s.by_ref().take(20) {
            let b = b.unwrap();
            assert_eq!(b.x.dims(), &[1, 1, 8, 8]);
            assert_ne!(b.clean_ids[0], b.noisy_ids[0]);
        }
    }

    #[test]
    fn same_seed_same_trace() {
        let c = corpus(16);
        let a: Vec<_> = BatchStream::new(c.clone(), 2, 8, 7, DType::F64).unwrap().take(10).collect();
        let b: Vec<_> = BatchStream::new(c, 2, 8, 7, DType::F64).unwrap().take(10).collect();
        for (a, b) in a.into_iter().zip(b) {
            let (a, b) = (a.unwrap(), b.unwrap());
            assert_eq!(to_f64_vec(&a.x).unwrap(), to_f64_vec(&b.x).unwrap());
            assert_eq!(to_f64_vec(&a.y).unwrap(), to_f64_vec(&b.y).unwrap());
            assert_eq!(a.clean_ids, b.clean_ids);
        }
    }

    #[test]
    fn epoch_covers_a_reference_permutation() {
        // 20 training sources -> 10 clean / 10 noisy; batch 4 -> 3 batches per epoch.
        let c = corpus(20);
        let s = BatchStream::new(c.clone(), 4, 8, 11, DType::F32).unwrap();
        assert_eq!(s.epoch_len(), 3);
        for epoch in 0..2u64 {
            let mut perm: Vec<usize> = (0..10).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(11, CLEAN_PERM_TAG), epoch)));
            let expected: Vec<usize> = (0..12).map(|k| perm[k % 10]).collect();
            let got: Vec<usize> = (0..3).flat_map(|b| s.indices_at(epoch * 3 + b).0).collect();
            assert_eq!(got, expected);
            let seen: BTreeSet<usize> = got.into_iter().collect();
            assert_eq!(seen.len(), 10);
        }
    }

    #[test]
    fn seek_matches_sequential_iteration() {
        let c = corpus(16);
        let mut s = BatchStream::new(c.clone(), 3, 8, 2, DType::F64).unwrap();
        let fifth = s.by_ref().nth(4).unwrap().unwrap();
        let direct = BatchStream::new(c, 3, 8, 2, DType::F64).unwrap().batch_at(4).unwrap();
        assert_eq!(to_f64_vec(&fifth.y).unwrap(), to_f64_vec(&direct.y).unwrap());
        assert_eq!(s.position(), 5);
    }

    #[test]
    fn invalid_geometry_is_rejected() {
        let c = corpus(16);
        assert!(BatchStream::new(c.clone(), 0, 8, 0, DType::F32).is_err());
        assert!(BatchStream::new(c, 1, 21, 0, DType::F32).is_err());
    }
}
