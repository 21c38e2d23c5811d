use candle_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::dims4;

/// Location of one square crop inside a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Crop {
    pub index: usize,
    pub top: usize,
    pub left: usize,
}

/// Seeded crop coordinates. Draw order per crop: image index, top, left.
pub fn patch_coords(
    batch: usize,
    height: usize,
    width: usize,
    patch: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Crop>> {
    if patch == 0 || patch > height.min(width) {
        return Err(Error::invalid(format!(
            "patch {patch} does not fit a {height}x{width} image"
        )));
    }
    if batch == 0 {
        return Err(Error::invalid("cannot crop from an empty batch"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| Crop {
            index: rng.random_range(0..batch),
            top: rng.random_range(0..=height - patch),
            left: rng.random_range(0..=width - patch),
        })
        .collect())
}

/// `count` random square crops of side `patch`, deterministic in `seed`.
///
/// Two batches of equal shape cropped with the same seed give aligned crops.
pub fn extract_patches(img: &Tensor, patch: usize, count: usize, seed: u64) -> Result<Tensor> {
    let (n, _, h, w) = dims4(img, "extract_patches")?;
    if count == 0 {
        return Err(Error::invalid("patch count must be positive"));
    }
    let crops = patch_coords(n, h, w, patch, count, seed)?;
    let pieces = crops
        .iter()
        .map(|c| {
            Ok(img
                .narrow(0, c.index, 1)?
                .narrow(2, c.top, patch)?
                .narrow(3, c.left, patch)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::cat(&pieces, 0)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{from_f64, to_f64_vec};
    use candle_core::DType;

    fn ramp(n: usize, h: usize, w: usize) -> Tensor {
        let data: Vec<f64> = (0..n * h * w).map(|i| i as f64 / (n * h * w) as f64).collect();
        from_f64(data, &[n, 1, h, w], DType::F64).unwrap()
    }

    #[test]
    fn full_frame_crop_returns_input() {
        let img = ramp(1, 32, 32);
        let out = extract_patches(&img, 32, 1, 9).unwrap();
        assert_eq!(to_f64_vec(&out).unwrap(), to_f64_vec(&img).unwrap());
    }

    #[test]
    fn same_seed_same_coords() {
        assert_eq!(
            patch_coords(4, 64, 64, 32, 10, 5).unwrap(),
            patch_coords(4, 64, 64, 32, 10, 5).unwrap()
        );
    }

    #[test]
    fn coordinates_follow_the_reference_generator() {
        for seed in [0u64, 1] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let want: Vec<(usize, usize, usize)> = (0..8)
                .map(|_| {
                    let i = rng.random_range(0..1usize);
                    let t = rng.random_range(0..=32usize);
                    let l = rng.random_range(0..=32usize);
                    (i, t, l)
                })
                .collect();
            let got: Vec<(usize, usize, usize)> = patch_coords(1, 64, 64, 32, 8, seed)
                .unwrap()
                .into_iter()
                .map(|c| (c.index, c.top, c.left))
                .collect();
            assert_eq!(got, want);
        }
        assert_ne!(
            patch_coords(1, 64, 64, 32, 8, 0).unwrap(),
            patch_coords(1, 64, 64, 32, 8, 1).unwrap()
        );
    }

    #[test]
    fn paired_inputs_get_aligned_crops() {
        let a = ramp(2, 40, 40);
        let b = (ramp(2, 40, 40) * 2.0).unwrap();
        let pa = extract_patches(&a, 16, 6, 77).unwrap();
        let pb = extract_patches(&b, 16, 6, 77).unwrap();
        let doubled = to_f64_vec(&(pa * 2.0).unwrap()).unwrap();
        assert_eq!(doubled, to_f64_vec(&pb).unwrap());
    }

    #[test]
    fn oversized_patch_is_rejected() {
        let img = ramp(1, 16, 16);
        assert!(matches!(extract_patches(&img, 17, 1, 0), Err(Error::InvalidArgument(_))));
    }
}
