//! Separable Gaussian blur with reflect padding and the multi-level blur bank
//! used by the background-guidance loss.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{device, dims4};

/// One level of the blur bank: odd window size and its loss weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlurLevel {
    pub size: usize,
    pub weight: f64,
}

/// Ordered set of blur levels.
///
/// The window size of each level doubles as its "scale": the Gaussian standard
/// deviation is `size / std_divisor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlurBank {
    pub levels: Vec<BlurLevel>,
    pub std_divisor: f64,
}

impl Default for BlurBank {
    fn default() -> Self {
        BlurBank {
            levels: vec![
                BlurLevel { size: 3, weight: 0.01 },
                BlurLevel { size: 9, weight: 0.1 },
                BlurLevel { size: 15, weight: 1.0 },
            ],
            std_divisor: 3.0,
        }
    }
}

impl BlurBank {
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::config("blur_bank.levels", "at least one level is required"));
        }
        for (i, level) in self.levels.iter().enumerate() {
            check_window(level.size)
                .map_err(|_| Error::config(format!("blur_bank.levels[{i}].size"), "must be odd and positive"))?;
            if !(level.weight >= 0.0 && level.weight.is_finite()) {
                return Err(Error::config(format!("blur_bank.levels[{i}].weight"), "must be finite and >= 0"));
            }
        }
        if !(self.std_divisor > 0.0 && self.std_divisor.is_finite()) {
            return Err(Error::config("blur_bank.std_divisor", "must be positive"));
        }
        Ok(())
    }

    pub fn std_for(&self, size: usize) -> f64 {
        size as f64 / self.std_divisor
    }
}

fn check_window(size: usize) -> Result<()> {
    if size == 0 || size % 2 == 0 {
        return Err(Error::invalid(format!("blur window must be odd and >= 1, got {size}")));
    }
    Ok(())
}

/// Normalized 1-D Gaussian taps centred on the middle of an odd window.
pub fn gaussian_kernel(size: usize, std: f64) -> Result<Vec<f64>> {
    check_window(size)?;
    if !(std > 0.0) {
        return Err(Error::invalid(format!("gaussian std must be positive, got {std}")));
    }
    let centre = (size / 2) as f64;
    let taps: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - centre;
            (-(d * d) / (2.0 * std * std)).exp()
        })
        .collect();
    let total: f64 = taps.iter().sum();
    Ok(taps.into_iter().map(|t| t / total).collect())
}

/// Mirror an out-of-range index back into `0..n` without repeating the edge
/// sample (`[2, 1 | 0, 1, 2, .. ]`). Handles pads wider than the signal.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

fn reflect_indices(n: usize, radius: usize) -> Result<Tensor> {
    let idx: Vec<u32> = (0..n + 2 * radius)
        .map(|i| reflect_index(i as isize - radius as isize, n) as u32)
        .collect();
    let len = idx.len();
    Ok(Tensor::from_vec(idx, len, &device())?)
}

/// Gaussian blur with window `size` and standard deviation `size / 3`.
pub fn gaussian_blur(img: &Tensor, size: usize) -> Result<Tensor> {
    gaussian_blur_with_std(img, size, size as f64 / 3.0)
}

/// Separable Gaussian blur of every channel of a (n, c, h, w) batch, reflect padded.
pub fn gaussian_blur_with_std(img: &Tensor, size: usize, std: f64) -> Result<Tensor> {
    let (n, c, h, w) = dims4(img, "gaussian_blur")?;
    let taps = gaussian_kernel(size, std)?;
    if size == 1 {
        return Ok(img.clone());
    }
    let radius = size / 2;
    let dtype = img.dtype();
    let kx = Tensor::from_vec(taps.clone(), (1, 1, 1, size), &device())?.to_dtype(dtype)?;
    let ky = Tensor::from_vec(taps, (1, 1, size, 1), &device())?.to_dtype(dtype)?;

    let planes = img.reshape((n * c, 1, h, w))?;
    let rows = planes
        .index_select(&reflect_indices(w, radius)?, 3)?
        .conv2d(&kx, 0, 1, 1, 1)?;
    let out = rows
        .index_select(&reflect_indices(h, radius)?, 2)?
        .conv2d(&ky, 0, 1, 1, 1)?;
    Ok(out.reshape((n, c, h, w))?)
}

/// Valid-region (no padding) separable filtering with the given 1-D taps, per plane.
pub(crate) fn separable_valid(img: &Tensor, taps: &[f64]) -> Result<Tensor> {
    let (n, c, h, w) = dims4(img, "separable_valid")?;
    let k = taps.len();
    if h < k || w < k {
        return Err(Error::invalid(format!(
            "image {h}x{w} is smaller than the {k}x{k} window"
        )));
    }
    let dtype = img.dtype();
    let kx = Tensor::from_vec(taps.to_vec(), (1, 1, 1, k), &device())?.to_dtype(dtype)?;
    let ky = Tensor::from_vec(taps.to_vec(), (1, 1, k, 1), &device())?.to_dtype(dtype)?;
    let out = img
        .reshape((n * c, 1, h, w))?
        .conv2d(&kx, 0, 1, 1, 1)?
        .conv2d(&ky, 0, 1, 1, 1)?;
    let (_, _, oh, ow) = out.dims4()?;
    Ok(out.reshape((n, c, oh, ow))?)
}

/// Weighted L1 distance between blurred versions of two batches, summed over the bank.
///
/// Blur is linear, so each level filters the difference once.
pub fn blurred_l1(a: &Tensor, b: &Tensor, bank: &BlurBank) -> Result<Tensor> {
    crate::tensor::same_shape(a, b, "blurred_l1")?;
    let diff = (a - b)?;
    let mut total = Tensor::zeros((), a.dtype(), &device())?;
    for level in &bank.levels {
        let blurred = gaussian_blur_with_std(&diff, level.size, bank.std_for(level.size))?;
        let term = blurred.abs()?.mean_all()?.affine(level.weight, 0.0)?;
        total = (total + term)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::DType;
    use crate::tensor::{from_f64, to_f64_vec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, shape: &[usize]) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..shape.iter().product::<usize>()).map(|_| rng.random::<f64>()).collect()
    }

    /// Direct 2-D convolution with an explicitly built outer-product kernel.
    fn brute_blur(data: &[f64], h: usize, w: usize, size: usize) -> Vec<f64> {
        let taps = gaussian_kernel(size, size as f64 / 3.0).unwrap();
        let r = (size / 2) as isize;
        let mut out = vec![0.0; h * w];
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for di in -r..=r {
                    for dj in -r..=r {
                        let k = taps[(di + r) as usize] * taps[(dj + r) as usize];
                        let si = reflect_index(i as isize + di, h);
                        let sj = reflect_index(j as isize + dj, w);
                        acc += k * data[si * w + sj];
                    }
                }
                out[i * w + j] = acc;
            }
        }
        out
    }

    #[test]
    fn default_bank_levels() {
        let bank = BlurBank::default();
        let pairs: Vec<(usize, f64)> = bank.levels.iter().map(|l| (l.size, l.weight)).collect();
        assert_eq!(pairs, vec![(3, 0.01), (9, 0.1), (15, 1.0)]);
        for l in &bank.levels {
            let k = gaussian_kernel(l.size, bank.std_for(l.size)).unwrap();
            assert!((k.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn reflect_handles_wide_pads() {
        let got: Vec<usize> = (-4..8).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![2, 3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1]);
        assert_eq!(reflect_index(-5, 1), 0);
    }

    #[test]
    fn even_or_zero_window_is_rejected() {
        let img = from_f64(vec![0.5; 16 * 16], &[1, 1, 16, 16], DType::F64).unwrap();
        assert!(matches!(gaussian_blur(&img, 4), Err(Error::InvalidArgument(_))));
        assert!(matches!(gaussian_blur(&img, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn constant_image_keeps_its_value() {
        let img = from_f64(vec![0.7; 2 * 20 * 20], &[1, 2, 20, 20], DType::F64).unwrap();
        for size in [3, 9, 15] {
            let out = to_f64_vec(&gaussian_blur(&img, size).unwrap()).unwrap();
            assert!(out.iter().all(|v| (v - 0.7).abs() <= 1e-9), "size {size}");
        }
    }

    #[test]
    fn window_one_is_identity() {
        let data = random_image(3, &[1, 1, 8, 8]);
        let img = from_f64(data.clone(), &[1, 1, 8, 8], DType::F64).unwrap();
        assert_eq!(to_f64_vec(&gaussian_blur(&img, 1).unwrap()).unwrap(), data);
    }

    #[test]
    fn matches_direct_convolution() {
        for (size, h, w) in [(3, 8, 8), (9, 8, 8), (15, 6, 7)] {
            let data = random_image(size as u64, &[h, w]);
            let img = from_f64(data.clone(), &[1, 1, h, w], DType::F64).unwrap();
            let got = to_f64_vec(&gaussian_blur(&img, size).unwrap()).unwrap();
            let want = brute_blur(&data, h, w, size);
            for (g, e) in got.iter().zip(&want) {
                assert!((g - e).abs() <= 1e-6, "size {size}: {g} vs {e}");
            }
        }
    }

    #[test]
    fn blur_does_not_increase_variance() {
        fn variance(v: &[f64]) -> f64 {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
        }
        for seed in 0..20 {
            let data = random_image(seed, &[1, 1, 24, 24]);
            let img = from_f64(data.clone(), &[1, 1, 24, 24], DType::F64).unwrap();
            for size in [3, 9, 15] {
                let out = to_f64_vec(&gaussian_blur(&img, size).unwrap()).unwrap();
                assert!(variance(&out) <= variance(&data) + 1e-9);
            }
        }
    }
}
