use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::phase::{init_models, train_phase};
use super::records::MetricsRecord;
use super::sc::load_data;
use crate::branches::{Structure, Variant};
use crate::config::RunConfig;
use crate::error::{Error, Result};

/// Published benchmark PSNR of each variant, shown only as context next to measured values.
pub const REFERENCE_PSNR: [(Variant, f64); 5] =
    [(Variant::V1, 33.14), (Variant::V2, 33.26), (Variant::V3, 33.45), (Variant::V4, 34.27), (Variant::V5, 34.67)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRecord {
    pub variant: Variant,
    pub structure: Structure,
    pub steps: usize,
    pub best_step: usize,
    pub psnr_val: f64,
    pub ssim_val: f64,
    pub noisy_psnr: f64,
    pub reference_psnr: f64,
    pub records: Vec<MetricsRecord>,
}

/// Trains one variant for `cfg.ablation.steps` steps from fresh networks.
pub fn run_ablation(cfg: &RunConfig, variant: Variant) -> Result<AblationRecord> {
    let mut cfg = cfg.clone();
    cfg.train.structure = variant.structure();
    cfg.validate()?;
    let data = load_data(&cfg)?;
    let noisy = data.validation.noisy_baseline(&cfg.train.weights.ssim)?;
    let models = init_models(&cfg.train, cfg.corpus.channels(), cfg.seed)?;
    let out = train_phase(models, &data, &cfg.train, cfg.ablation.steps, cfg.seed)?;
    let best = out.best.as_ref().ok_or_else(|| Error::Contract("ablation ended without an evaluation".into()))?;
    let reference_psnr = REFERENCE_PSNR.iter().find(|(v, _)| *v == variant).map_or(f64::NAN, |(_, p)| *p);
    Ok(AblationRecord {
        variant,
        structure: variant.structure(),
        steps: out.steps_done,
        best_step: best.step,
        psnr_val: best.eval.psnr,
        ssim_val: best.eval.ssim,
        noisy_psnr: noisy.psnr,
        reference_psnr,
        records: out.records.clone(),
    })
}

/// Markdown table with one column per variant: component checkmarks, then scores.
pub fn ablation_table(records: &[AblationRecord]) -> String {
    let mut out = String::from("| Methods |");
    for r in records {
        let _ = write!(out, " {} |", r.variant);
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(records.len()));
    out.push('\n');
    let rows: [(&str, fn(&Structure) -> bool); 5] = [
        ("U", |_| true),
        ("BGMloss", |s| s.bgm),
        ("NE module", |s| s.ne_module),
        ("S", |s| s.self_synthesis),
        ("P", |s| s.parallel),
    ];
    for (name, has) in rows {
        let _ = write!(out, "| {name} |");
        for r in records {
            out.push_str(if has(&r.structure) { " ✓ |" } else { "  |" });
        }
        out.push('\n');
    }
    let mut numeric = |name: &str, value: fn(&AblationRecord) -> String| {
        let _ = write!(out, "| {name} |");
        for r in records {
            let _ = write!(out, " {} |", value(r));
        }
        out.push('\n');
    };
    numeric("PSNR (dB)", |r| format!("{:.2}", r.psnr_val));
    numeric("SSIM", |r| format!("{:.4}", r.ssim_val));
    numeric("Noisy input PSNR (dB)", |r| format!("{:.2}", r.noisy_psnr));
    numeric("Published PSNR (dB, reference only)", |r| format!("{:.2}", r.reference_psnr));
    out
}
