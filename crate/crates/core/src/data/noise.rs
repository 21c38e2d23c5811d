use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::image::Image;
use crate::error::{Error, Result};

/// Heteroscedastic Gaussian noise: per-pixel variance `sigma_read^2 + sigma_shot * clean`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModelParams {
    pub sigma_read: f64,
    pub sigma_shot: f64,
    pub seed: u64,
}

impl Default for NoiseModelParams {
    fn default() -> Self {
        NoiseModelParams {
            sigma_read: 0.04,
            sigma_shot: 0.02,
            seed: 0,
        }
    }
}

impl NoiseModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_read >= 0.0 && self.sigma_read.is_finite()) {
            return Err(Error::config("noise.sigma_read", "must be finite and >= 0"));
        }
        if !(self.sigma_shot >= 0.0 && self.sigma_shot.is_finite()) {
            return Err(Error::config("noise.sigma_shot", "must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn variance_at(&self, clean: f64) -> f64 {
        self.sigma_read * self.sigma_read + self.sigma_shot * clean.max(0.0)
    }

    /// Corrupts `clean` with a noise stream seeded by `stream_seed`, then clamps to [0, 1].
    pub fn apply(&self, clean: &Image, stream_seed: u64) -> Image {
        if self.sigma_read == 0.0 && self.sigma_shot == 0.0 {
            return clean.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
        let data = clean
            .data
            .iter()
            .map(|&v| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (v + self.variance_at(v).sqrt() * z).clamp(0.0, 1.0)
            })
            .collect();
        Image { data, ..clean.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn residual_statistics_match_the_model() {
        let params = NoiseModelParams { sigma_read: 0.04, sigma_shot: 0.02, seed: 0 };
        let clean = Image::filled(1, 400, 400, 0.5);
        let noisy = params.apply(&clean, 1234);
        let res: Vec<f64> = noisy.data.iter().map(|v| v - 0.5).collect();
        let n = res.len() as f64;
        let mean = res.iter().sum::<f64>() / n;
        let var = res.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let want = 0.04f64.powi(2) + 0.02 * 0.5;
        assert!((want - 0.0116).abs() < 1e-15);
        assert!(((var - want) / want).abs() < 0.10, "variance {var}");
        assert!(mean.abs() <= 3.0 * (want.sqrt() / n.sqrt()), "mean {mean}");
    }

    #[test]
    fn zero_noise_is_identity() {
        let clean = Image::filled(1, 8, 8, 0.3);
        let params = NoiseModelParams { sigma_read: 0.0, sigma_shot: 0.0, seed: 5 };
        assert_eq!(params.apply(&clean, 9), clean);
    }
}
