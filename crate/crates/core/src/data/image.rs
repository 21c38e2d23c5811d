use std::path::Path;

use candle_core::{DType, Tensor};
use image::{GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{device, dims4, to_f64_vec};

/// Host-side image, channel-major (c, h, w), values nominally in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if !matches!(channels, 1 | 3) {
            return Err(Error::invalid(format!("images have 1 or 3 channels, got {channels}")));
        }
        if data.len() != channels * height * width {
            return Err(Error::invalid(format!(
                "image buffer of {} values does not match {channels}x{height}x{width}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("image contains non-finite values"));
        }
        Ok(Image {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Image {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// (1, c, h, w) tensor.
    pub fn to_tensor(&self, dtype: DType) -> Result<Tensor> {
        Ok(Tensor::from_vec(
            self.data.clone(),
            (1, self.channels, self.height, self.width),
            &device(),
        )?
        .to_dtype(dtype)?)
    }

    /// Crop, optionally flipped horizontally, as a (1, c, patch, patch) tensor.
    pub(crate) fn crop_tensor(
        &self,
        top: usize,
        left: usize,
        patch: usize,
        flip: bool,
        dtype: DType,
    ) -> Result<Tensor> {
        let mut out = Vec::with_capacity(self.channels * patch * patch);
        for c in 0..self.channels {
            for y in top..top + patch {
                for i in 0..patch {
                    let x = if flip { left + patch - 1 - i } else { left + i };
                    out.push(self.at(c, y, x));
                }
            }
        }
        Ok(Tensor::from_vec(out, (1, self.channels, patch, patch), &device())?.to_dtype(dtype)?)
    }

    /// Splits a (n, c, h, w) tensor into host images.
    pub fn from_batch(t: &Tensor) -> Result<Vec<Image>> {
        let (n, c, h, w) = dims4(t, "Image::from_batch")?;
        let flat = to_f64_vec(t)?;
        flat.chunks(c * h * w)
            .take(n)
            .map(|chunk| Image::new(c, h, w, chunk.to_vec()))
            .collect()
    }

    pub fn stack(images: &[Image], dtype: DType) -> Result<Tensor> {
        let parts = images
            .iter()
            .map(|im| im.to_tensor(dtype))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::cat(&parts, 0)?)
    }

    pub fn clamped(mut self) -> Self {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
        self
    }

    /// Reads an 8-bit PNG (or any format the `image` crate decodes) into [0, 1].
    pub fn load(path: &Path, channels: usize) -> Result<Self> {
        let decoded = image::open(path)?;
        let (w, h) = (decoded.width() as usize, decoded.height() as usize);
        let data = match channels {
            1 => decoded.to_luma8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
            3 => {
                let rgb = decoded.to_rgb8();
                let mut planar = vec![0.0; 3 * h * w];
                for (i, px) in rgb.pixels().enumerate() {
                    for c in 0..3 {
                        planar[c * h * w + i] = px.0[c] as f64 / 255.0;
                    }
                }
                planar
            }
            other => return Err(Error::invalid(format!("unsupported channel count {other}"))),
        };
        Image::new(channels, h, w, data)
    }

    /// Writes an 8-bit PNG, clamping to [0, 1].
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let (h, w) = (self.height as u32, self.width as u32);
        let plane = self.height * self.width;
        match self.channels {
            1 => GrayImage::from_raw(w, h, self.data.iter().map(|&v| q(v)).collect())
                .expect("buffer sized from dimensions")
                .save(path)?,
            _ => {
                let mut raw = Vec::with_capacity(3 * plane);
                for i in 0..plane {
                    for c in 0..3 {
                        raw.push(q(self.data[c * plane + i]));
                    }
                }
                RgbImage::from_raw(w, h, raw)
                    .expect("buffer sized from dimensions")
                    .save(path)?
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f64> = (0..3 * 5 * 4).map(|i| i as f64 / 59.0).collect();
        let im = Image::new(3, 5, 4, data).unwrap();
        let path = dir.path().join("a.png");
        im.save_png(&path).unwrap();
        let back = Image::load(&path, 3).unwrap();
        assert_eq!((back.height, back.width), (5, 4));
        for (a, b) in im.data.iter().zip(&back.data) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn rejects_bad_buffers() {
        assert!(Image::new(2, 4, 4, vec![0.0; 32]).is_err());
        assert!(Image::new(1, 4, 4, vec![0.0; 15]).is_err());
        assert!(Image::new(1, 1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn flipped_crop_mirrors_columns() {
        let im = Image::new(1, 2, 3, vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        let t = im.crop_tensor(0, 0, 2, true, DType::F64).unwrap();
        assert_eq!(to_f64_vec(&t).unwrap(), vec![0.1, 0.0, 0.4, 0.3]);
    }
}
