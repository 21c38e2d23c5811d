//! Training objectives.
//!
//! Adversarial terms use the least-squares form: the discriminator regresses
//! real scores to 1 and fake scores to 0, the generator pushes fake scores to 1.
//! Image-space norms are per-pixel means.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{blurred_l1, ssim_per_image, BlurBank, SsimParams};
use crate::networks::{NetworkHandle, NetworkKind, Pass};
use crate::tensor::{dims4, same_shape};

/// Which synthesis paths receive the background-guidance penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BgmScope {
    /// All four synthetic images against their content sources.
    #[default]
    AllPaths,
    /// Only `(x, x_u_syn)` and `(x_rec, x_s_syn)`.
    Branch2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_bgm: f64,
    pub lambda_ssim: f64,
    pub blur_bank: BlurBank,
    pub ssim: SsimParams,
    pub bgm_scope: BgmScope,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_bgm: 6.0,
            lambda_ssim: 1.0,
            blur_bank: BlurBank::default(),
            ssim: SsimParams::default(),
            bgm_scope: BgmScope::AllPaths,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [("lambda_bgm", self.lambda_bgm), ("lambda_ssim", self.lambda_ssim)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(key, format!("must be finite and >= 0, got {v}")));
            }
        }
        self.blur_bank.validate()?;
        self.ssim.validate()
    }
}

fn expect_kind(net: &NetworkHandle, kind: NetworkKind) -> Result<()> {
    if net.kind() != kind {
        return Err(Error::invalid(format!("{}: expected a {kind:?}, got {:?}", net.name(), net.kind())));
    }
    Ok(())
}

/// `mean((real - 1)^2) + mean(fake^2)` on raw score maps.
pub fn lsgan_d(real_scores: &Tensor, fake_scores: &Tensor) -> Result<Tensor> {
    let real = real_scores.affine(1.0, -1.0)?.sqr()?.mean_all()?;
    let fake = fake_scores.sqr()?.mean_all()?;
    Ok((real + fake)?)
}

/// `mean((fake - 1)^2)` on a raw score map.
pub fn lsgan_g(fake_scores: &Tensor) -> Result<Tensor> {
    Ok(fake_scores.affine(1.0, -1.0)?.sqr()?.mean_all()?)
}

/// Discriminator loss for one fake batch. The fake is detached here, so only
/// `d` receives gradients.
pub fn adv_loss_d(d: &NetworkHandle, real: &Tensor, fake: &Tensor) -> Result<Tensor> {
    expect_kind(d, NetworkKind::Discriminator)?;
    same_shape(real, fake, "adv_loss_d")?;
    let r = d.forward(&[real], Pass::TRACKED_EVAL)?;
    let f = d.forward(&[&fake.detach()], Pass::TRACKED_EVAL)?;
    lsgan_d(&r, &f)
}

/// Generator loss for one fake batch. `d` is evaluated with detached
/// parameters, so gradients reach only the fake.
pub fn adv_loss_g(d: &NetworkHandle, fake: &Tensor) -> Result<Tensor> {
    expect_kind(d, NetworkKind::Discriminator)?;
    lsgan_g(&d.forward(&[fake], Pass::EVAL)?)
}

/// Splits a score map of stacked fakes back into per-fake chunks.
fn score_fakes(d: &NetworkHandle, fakes: &[&Tensor], pass: Pass) -> Result<Vec<Tensor>> {
    if fakes.is_empty() {
        return Err(Error::invalid("gan_total needs at least one fake batch"));
    }
    let n = dims4(fakes[0], "gan_total")?.0;
    for f in fakes {
        same_shape(fakes[0], f, "gan_total")?;
    }
    let scores = d.forward(&[&Tensor::cat(fakes, 0)?], pass)?;
    (0..fakes.len()).map(|i| Ok(scores.narrow(0, i * n, n)?)).collect()
}

/// Discriminator side of the summed adversarial loss: one `adv_loss_d` term per fake,
/// all scored by the same discriminator.
pub fn gan_total_d(d: &NetworkHandle, real: &Tensor, fakes: &[&Tensor]) -> Result<Tensor> {
    expect_kind(d, NetworkKind::Discriminator)?;
    let detached: Vec<Tensor> = fakes.iter().map(|f| f.detach()).collect();
    let refs: Vec<&Tensor> = detached.iter().collect();
    let fake_scores = score_fakes(d, &refs, Pass::TRACKED_EVAL)?;
    same_shape(real, fakes[0], "gan_total")?;
    let real_scores = d.forward(&[real], Pass::TRACKED_EVAL)?;
    let mut total = lsgan_d(&real_scores, &fake_scores[0])?;
    for s in &fake_scores[1..] {
        total = (total + lsgan_d(&real_scores, s)?)?;
    }
    Ok(total)
}

/// Generator side of the summed adversarial loss.
pub fn gan_total_g(d: &NetworkHandle, fakes: &[&Tensor]) -> Result<Tensor> {
    expect_kind(d, NetworkKind::Discriminator)?;
    let scores = score_fakes(d, fakes, Pass::EVAL)?;
    let mut total = lsgan_g(&scores[0])?;
    for s in &scores[1..] {
        total = (total + lsgan_g(s)?)?;
    }
    Ok(total)
}

/// Background guidance: weighted L1 between blurred content and blurred synthetic image.
pub fn bgm_loss(content: &Tensor, synthetic: &Tensor, bank: &BlurBank) -> Result<Tensor> {
    blurred_l1(content, synthetic, bank)
}

/// `(1 / 2m) * sum_i [ mean|pred_i - target_i| + lambda_ssim * (1 - SSIM(pred_i, target_i)) ]`.
pub fn dn_loss(pred: &Tensor, target: &Tensor, w: &LossWeights) -> Result<Tensor> {
    same_shape(pred, target, "dn_loss")?;
    let (m, _, _, _) = dims4(pred, "dn_loss")?;
    let l1 = (pred - target)?.abs()?.reshape((m, ()))?.mean(1)?;
    let ssim_term = ssim_per_image(pred, target, &w.ssim)?.affine(-w.lambda_ssim, w.lambda_ssim)?;
    Ok((l1 + ssim_term)?.sum_all()?.affine(0.5 / m as f64, 0.0)?)
}

/// Teacher outputs used by the distillation loss.
#[derive(Debug, Clone)]
pub struct TeacherTargets {
    /// `DN0(x_u_syn)`
    pub x: Tensor,
    /// `DN0(y)`
    pub y: Tensor,
}

impl TeacherTargets {
    /// Evaluates a frozen teacher; refuses a trainable one.
    pub fn compute(dn0: &NetworkHandle, x_u_syn: &Tensor, y: &Tensor) -> Result<Self> {
        expect_kind(dn0, NetworkKind::Denoiser)?;
        if !dn0.is_frozen() {
            return Err(Error::Contract(format!(
                "distillation needs a frozen teacher, `{}` is trainable",
                dn0.name()
            )));
        }
        Ok(TeacherTargets {
            x: dn0.forward(&[&x_u_syn.detach()], Pass::EVAL)?,
            y: dn0.forward(&[&y.detach()], Pass::EVAL)?,
        })
    }
}

/// Self-collaboration denoiser loss with precomputed teacher targets.
pub fn dn_sc_loss_with(
    x_rec: &Tensor,
    x_target: &Tensor,
    y_rec: &Tensor,
    teacher: &TeacherTargets,
    w: &LossWeights,
) -> Result<Tensor> {
    let base = dn_loss(x_rec, x_target, w)?;
    let dx = dn_loss(x_rec, &teacher.x, w)?;
    let dy = dn_loss(y_rec, &teacher.y, w)?;
    Ok(((base + dx)? + dy)?)
}

/// `L_DN(x_rec, x) + L_DN(x_rec, DN0(x_u_syn)) + L_DN(y_rec, DN0(y))` with a frozen `dn0`.
pub fn dn_sc_loss(
    x_rec: &Tensor,
    x_target: &Tensor,
    y_rec: &Tensor,
    x_u_syn: &Tensor,
    y: &Tensor,
    dn0: &NetworkHandle,
    w: &LossWeights,
) -> Result<Tensor> {
    let teacher = TeacherTargets::compute(dn0, x_u_syn, y)?;
    dn_sc_loss_with(x_rec, x_target, y_rec, &teacher, w)
}

/// Generator objective: adversarial sum plus weighted background guidance.
pub fn g_objective(gan_g: &Tensor, bgm_terms: &[Tensor], w: &LossWeights) -> Result<Tensor> {
    let mut total = gan_g.clone();
    for t in bgm_terms {
        total = (total + t.affine(w.lambda_bgm, 0.0)?)?;
    }
    Ok(total)
}
