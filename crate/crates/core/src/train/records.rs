use std::io::Write;
use std::path::Path;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::{Image, ValidationPair};
use crate::error::{Error, Result};
use crate::imaging::{psnr_per_image, ssim_per_image, SsimParams};
use crate::networks::{NetworkHandle, NetworkKind, Pass};
use crate::tensor::to_f64_vec;

/// Mean losses over the steps since the previous evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub d: f64,
    pub g_adv: f64,
    pub g_bgm: f64,
    pub dn: f64,
}

/// One evaluation during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub k: usize,
    pub step: usize,
    pub psnr_val: f64,
    pub ssim_val: f64,
    pub losses: LossSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_s: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterationStatus {
    Completed,
    Diverged,
}

/// Per-iteration summary of the outer loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub k: usize,
    pub status: IterationStatus,
    pub best_step: usize,
    pub psnr_val: f64,
    pub ssim_val: f64,
    /// Change of best validation PSNR against the previous iteration.
    pub delta_db: Option<f64>,
    pub patch: usize,
    pub batch: usize,
    pub steps: usize,
    pub teacher_checksum: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

/// Validation images stacked once for repeated scoring.
#[derive(Debug, Clone)]
pub struct ValidationSet {
    pub noisy: Tensor,
    pub clean: Tensor,
}

impl ValidationSet {
    pub fn new(pairs: &[ValidationPair], dtype: DType) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::invalid("validation set is empty"));
        }
        let noisy: Vec<Image> = pairs.iter().map(|p| p.noisy.clone()).collect();
        let clean: Vec<Image> = pairs.iter().map(|p| p.clean.clone()).collect();
        Ok(ValidationSet { noisy: Image::stack(&noisy, dtype)?, clean: Image::stack(&clean, dtype)? })
    }

    pub fn len(&self) -> usize {
        self.noisy.dim(0).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Scores the unprocessed noisy inputs.
    pub fn noisy_baseline(&self, ssim: &SsimParams) -> Result<Evaluation> {
        Evaluation::score(&self.noisy, &self.clean, ssim)
    }
}

/// Mean per-image PSNR and SSIM of denoised validation images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub psnr: f64,
    pub ssim: f64,
    pub per_image_psnr: Vec<f64>,
}

impl Evaluation {
    pub fn score(output: &Tensor, clean: &Tensor, ssim: &SsimParams) -> Result<Self> {
        let per_image_psnr = psnr_per_image(output, clean, 1.0)?;
        let psnr = per_image_psnr.iter().sum::<f64>() / per_image_psnr.len() as f64;
        let s = to_f64_vec(&ssim_per_image(&output.to_dtype(DType::F64)?, &clean.to_dtype(DType::F64)?, ssim)?)?;
        let ssim = s.iter().sum::<f64>() / s.len() as f64;
        Ok(Evaluation { psnr, ssim, per_image_psnr })
    }

    pub fn record(&self, k: usize, step: usize, losses: LossSummary) -> MetricsRecord {
        MetricsRecord { k, step, psnr_val: self.psnr, ssim_val: self.ssim, losses, wall_clock_s: None }
    }
}

/// Denoiser outputs (inference mode, clamped to [0, 1]) for the validation set.
pub fn denoise_validation(dn: &NetworkHandle, set: &ValidationSet) -> Result<Tensor> {
    if dn.kind() != NetworkKind::Denoiser {
        return Err(Error::invalid(format!("evaluate needs a denoiser, got {:?}", dn.kind())));
    }
    Ok(dn.forward(&[&set.noisy], Pass::EVAL)?.clamp(0.0, 1.0)?)
}

pub fn evaluate(dn: &NetworkHandle, set: &ValidationSet, ssim: &SsimParams) -> Result<Evaluation> {
    Evaluation::score(&denoise_validation(dn, set)?, &set.clean, ssim)
}

/// Appends one JSON line.
pub fn append_jsonl<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let line = serde_json::to_string(value)?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Keeps only the first `lines` lines of a JSON-lines file.
pub fn truncate_jsonl(path: &Path, lines: usize) -> Result<()> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound && lines == 0 => String::new(),
        Err(e) => return Err(Error::io(path, e)),
    };
    let kept: String = text.lines().take(lines).map(|l| format!("{l}\n")).collect();
    if kept.lines().count() != lines {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            message: format!("log has fewer than {lines} records"),
        });
    }
    std::fs::write(path, kept).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::{stub, Architecture};

    fn set(clean: f64, noisy: f64) -> ValidationSet {
        let pair = ValidationPair {
            id: 0,
            noisy: Image::filled(1, 16, 16, noisy),
            clean: Image::filled(1, 16, 16, clean),
        };
        ValidationSet::new(&[pair.clone(), ValidationPair { id: 1, ..pair }], DType::F64).unwrap()
    }

    #[test]
    fn identity_on_clean_pairs_hits_the_cap() {
        let dn = stub(Architecture::IdentityDenoiser, DType::F64).unwrap();
        let e = evaluate(&dn, &set(0.3, 0.3), &SsimParams::default()).unwrap();
        assert_eq!(e.psnr, 100.0);
        assert_eq!(e.ssim, 1.0);
    }

    #[test]
    fn zero_denoiser_on_half_grey() {
        let dn = stub(Architecture::ZeroDenoiser, DType::F64).unwrap();
        let e = evaluate(&dn, &set(0.5, 0.7), &SsimParams::default()).unwrap();
        assert!((e.psnr - 6.020599913279624).abs() < 1e-12);
    }

    #[test]
    fn jsonl_round_trip_and_truncate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        for step in 0..3 {
            let r = MetricsRecord {
                k: 0,
                step,
                psnr_val: 30.0 + step as f64,
                ssim_val: 0.9,
                losses: LossSummary::default(),
                wall_clock_s: None,
            };
            append_jsonl(&path, &r).unwrap();
        }
        truncate_jsonl(&path, 2).unwrap();
        let back: Vec<MetricsRecord> = read_jsonl(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].psnr_val, 31.0);
        assert!(truncate_jsonl(&path, 5).is_err());
        assert!(!std::fs::read_to_string(&path).unwrap().contains("wall_clock"));
    }
}
