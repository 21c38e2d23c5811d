//! PSNR and a differentiable SSIM.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use super::blur::{gaussian_kernel, separable_valid};
use crate::error::{Error, Result};
use crate::tensor::{dims4, same_shape, scalar};

/// PSNR reported for identical inputs (and the ceiling for any input).
pub const PSNR_CAP_DB: f64 = 100.0;

/// Peak signal-to-noise ratio in dB over the whole batch.
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    same_shape(a, b, "psnr")?;
    if !(peak > 0.0) {
        return Err(Error::invalid(format!("psnr peak must be positive, got {peak}")));
    }
    let diff = (a.to_dtype(DType::F64)? - b.to_dtype(DType::F64)?)?;
    let mse = scalar(&diff.sqr()?.mean_all()?)?;
    Ok(psnr_from_mse(mse, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB)
}

/// Per-image PSNR for a (n, c, h, w) batch.
pub fn psnr_per_image(a: &Tensor, b: &Tensor, peak: f64) -> Result<Vec<f64>> {
    same_shape(a, b, "psnr_per_image")?;
    let (n, _, _, _) = dims4(a, "psnr_per_image")?;
    (0..n)
        .map(|i| psnr(&a.narrow(0, i, 1)?, &b.narrow(0, i, 1)?, peak))
        .collect()
}

/// SSIM window and stabilizing constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsimParams {
    pub window: usize,
    pub std: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
    pub channels: SsimChannels,
}

/// How multi-channel images enter SSIM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SsimChannels {
    /// Every channel separately, then averaged.
    #[default]
    PerChannel,
    /// Rec. 601 luma of RGB inputs; single-channel inputs are unchanged.
    Luminance,
}

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

fn luma(t: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = dims4(t, "ssim")?;
    if c != 3 {
        return Ok(t.clone());
    }
    let weights = Tensor::new(&LUMA, t.device())?.to_dtype(t.dtype())?.reshape((1, 3, 1, 1))?;
    Ok(t.broadcast_mul(&weights)?.sum_keepdim(1)?.reshape((n, 1, h, w))?)
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            std: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
            channels: SsimChannels::PerChannel,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.data_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.data_range).powi(2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::config("ssim.window", "must be odd and positive"));
        }
        for (key, v) in [
            ("ssim.std", self.std),
            ("ssim.k1", self.k1),
            ("ssim.k2", self.k2),
            ("ssim.data_range", self.data_range),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, "must be finite and positive"));
            }
        }
        Ok(())
    }
}

/// SSIM map over the valid region, one value per (image, channel, position).
pub fn ssim_map(a: &Tensor, b: &Tensor, params: &SsimParams) -> Result<Tensor> {
    same_shape(a, b, "ssim")?;
    let (_, _, h, w) = dims4(a, "ssim")?;
    if h < params.window || w < params.window {
        return Err(Error::invalid(format!(
            "ssim: image {h}x{w} is smaller than the {0}x{0} window",
            params.window
        )));
    }
    let (a, b) = match params.channels {
        SsimChannels::PerChannel => (a.clone(), b.clone()),
        SsimChannels::Luminance => (luma(a)?, luma(b)?),
    };
    let (a, b) = (&a, &b);
    let taps = gaussian_kernel(params.window, params.std)?;
    let filt = |t: &Tensor| separable_valid(t, &taps);

    let mu_a = filt(a)?;
    let mu_b = filt(b)?;
    let mu_aa = mu_a.sqr()?;
    let mu_bb = mu_b.sqr()?;
    let mu_ab = (&mu_a * &mu_b)?;
    let var_a = (filt(&a.sqr()?)? - &mu_aa)?;
    let var_b = (filt(&b.sqr()?)? - &mu_bb)?;
    let cov = (filt(&(a * b)?)? - &mu_ab)?;

    let (c1, c2) = (params.c1(), params.c2());
    let num = (mu_ab.affine(2.0, c1)? * cov.affine(2.0, c2)?)?;
    let den = ((mu_aa + mu_bb)?.affine(1.0, c1)? * (var_a + var_b)?.affine(1.0, c2)?)?;
    Ok((num / den)?)
}

/// Mean SSIM of each image (channels averaged), shape (n,).
pub fn ssim_per_image(a: &Tensor, b: &Tensor, params: &SsimParams) -> Result<Tensor> {
    let map = ssim_map(a, b, params)?;
    let (n, _, _, _) = map.dims4()?;
    Ok(map.reshape((n, ()))?.mean(1)?)
}

/// Mean SSIM over the batch.
pub fn ssim(a: &Tensor, b: &Tensor, params: &SsimParams) -> Result<f64> {
    scalar(&ssim_map(a, b, params)?.mean_all()?)
}

/// `1 - SSIM`, as a differentiable scalar tensor.
pub fn ssim_loss(a: &Tensor, b: &Tensor, params: &SsimParams) -> Result<Tensor> {
    Ok(ssim_map(a, b, params)?.mean_all()?.affine(-1.0, 1.0)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::from_f64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(seed: u64, len: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random::<f64>()).collect()
    }

    fn t(data: Vec<f64>, shape: &[usize]) -> Tensor {
        from_f64(data, shape, DType::F64).unwrap()
    }

    #[test]
    fn psnr_identity_is_capped() {
        let a = t(rand_vec(1, 64), &[1, 1, 8, 8]);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn psnr_half_gray_against_black() {
        let a = t(vec![0.0; 64], &[1, 1, 8, 8]);
        let b = t(vec![0.5; 64], &[1, 1, 8, 8]);
        let got = psnr(&a, &b, 1.0).unwrap();
        assert!((got - 10.0 * 4f64.log10()).abs() < 1e-12);
        assert!((got - 6.0206).abs() < 1e-4);
    }

    #[test]
    fn psnr_matches_scalar_loop() {
        let (da, db) = (rand_vec(2, 3 * 64), rand_vec(3, 3 * 64));
        let mse = da.iter().zip(&db).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / da.len() as f64;
        let want = 10.0 * (1.0 / mse).log10();
        let got = psnr(&t(da, &[3, 1, 8, 8]), &t(db, &[3, 1, 8, 8]), 1.0).unwrap();
        assert!(((got - want) / want).abs() <= 1e-9);
    }

    #[test]
    fn psnr_rejects_bad_inputs() {
        let a = t(vec![0.0; 64], &[1, 1, 8, 8]);
        let b = t(vec![0.0; 32], &[1, 1, 4, 8]);
        assert!(matches!(psnr(&a, &b, 1.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(psnr(&a, &a, 0.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn psnr_falls_as_noise_grows() {
        let clean = rand_vec(4, 32 * 32);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let unit: Vec<f64> = (0..clean.len()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let c = t(clean.clone(), &[1, 1, 32, 32]);
        let mut last = f64::INFINITY;
        for amp in [0.01, 0.05, 0.1] {
            let noisy: Vec<f64> = clean.iter().zip(&unit).map(|(x, u)| x + amp * u).collect();
            let p = psnr(&c, &t(noisy, &[1, 1, 32, 32]), 1.0).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_of_identical_inputs_is_one() {
        let a = t(rand_vec(5, 2 * 3 * 20 * 20), &[2, 3, 20, 20]);
        assert_eq!(ssim(&a, &a, &SsimParams::default()).unwrap(), 1.0);
    }

    #[test]
    fn ssim_constant_images_closed_form() {
        let p = SsimParams::default();
        let a = t(vec![0.2; 16 * 16], &[1, 1, 16, 16]);
        let b = t(vec![0.6; 16 * 16], &[1, 1, 16, 16]);
        let want = (2.0 * 0.2 * 0.6 + p.c1()) / (0.2f64.powi(2) + 0.6f64.powi(2) + p.c1());
        assert!((ssim(&a, &b, &p).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn ssim_is_symmetric() {
        let p = SsimParams::default();
        let a = t(rand_vec(6, 24 * 24), &[1, 1, 24, 24]);
        let b = t(rand_vec(7, 24 * 24), &[1, 1, 24, 24]);
        let ab = ssim(&a, &b, &p).unwrap();
        let ba = ssim(&b, &a, &p).unwrap();
        assert!((ab - ba).abs() <= 1e-9);
        assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = t(vec![0.1; 64], &[1, 1, 8, 8]);
        assert!(matches!(ssim(&a, &a, &SsimParams::default()), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn luminance_mode_reduces_rgb_to_one_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let data: Vec<f64> = (0..3 * 16 * 16).map(|_| rng.random::<f64>()).collect();
        let a = from_f64(data.clone(), &[1, 3, 16, 16], DType::F64).unwrap();
        let b = from_f64(data.iter().map(|v| v * 0.8).collect(), &[1, 3, 16, 16], DType::F64).unwrap();
        let p = SsimParams { window: 7, channels: SsimChannels::Luminance, ..Default::default() };
        assert_eq!(ssim_map(&a, &b, &p).unwrap().dims(), &[1, 1, 10, 10]);
        let grey = |t: &[f64]| -> Vec<f64> {
            (0..256).map(|i| 0.299 * t[i] + 0.587 * t[256 + i] + 0.114 * t[512 + i]).collect()
        };
        let ga = from_f64(grey(&data), &[1, 1, 16, 16], DType::F64).unwrap();
        let gb = from_f64(grey(&data.iter().map(|v| v * 0.8).collect::<Vec<_>>()), &[1, 1, 16, 16], DType::F64).unwrap();
        let direct = ssim(&ga, &gb, &SsimParams { window: 7, ..Default::default() }).unwrap();
        assert!((ssim(&a, &b, &p).unwrap() - direct).abs() < 1e-12);
    }
}
