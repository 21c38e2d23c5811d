//! Procedural clean images: gradients, checkers, smooth textures and shapes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image::Image;
use crate::tensor::mix_seed;

const SOURCE_TAG: u64 = 0x5352_4345;

/// Deterministic clean source image number `id`.
pub fn procedural_source(id: usize, size: usize, channels: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(seed, SOURCE_TAG), id as u64));
    let n = size as f64;

    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    let (gx, gy) = (theta.cos(), theta.sin());
    let base = rng.random_range(0.2..0.6);
    let slope = rng.random_range(0.1..0.35);

    let kind = id % 4;
    let cell = rng.random_range(4..=12usize);
    let tones = (rng.random_range(0.1..0.4), rng.random_range(0.55..0.9));
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.5..4.0),
                rng.random_range(0.5..4.0),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.03..0.12),
            )
        })
        .collect();
    let shapes: Vec<Shape> = (0..rng.random_range(2..6))
        .map(|_| Shape {
            disk: rng.random_bool(0.5),
            cx: rng.random_range(0.0..n),
            cy: rng.random_range(0.0..n),
            r: rng.random_range(n / 12.0..n / 4.0),
            value: rng.random_range(0.05..0.95),
        })
        .collect();
    let tint: Vec<f64> = (0..channels).map(|_| rng.random_range(0.8..1.2)).collect();

    let mut data = vec![0.0; channels * size * size];
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64 / n, y as f64 / n);
            let mut v = base + slope * (gx * fx + gy * fy);
            match kind {
                0 => {}
                1 => {
                    let on = ((x / cell) + (y / cell)) % 2 == 0;
                    v = 0.5 * v + if on { tones.0 } else { tones.1 } * 0.5;
                }
                2 => {
                    for &(kx, ky, ph, amp) in &waves {
                        v += amp * (std::f64::consts::TAU * (kx * fx + ky * fy) + ph).sin();
                    }
                }
                _ => {
                    for &(kx, ky, ph, amp) in waves.iter().take(2) {
                        v += 0.5 * amp * (std::f64::consts::TAU * (kx * fx - ky * fy) + ph).sin();
                    }
                }
            }
            if kind != 1 {
                for s in &shapes {
                    if s.contains(x as f64, y as f64) {
                        v = 0.4 * v + 0.6 * s.value;
                    }
                }
            }
            for (c, t) in tint.iter().enumerate() {
                data[(c * size + y) * size + x] = (v * t).clamp(0.02, 0.98);
            }
        }
    }
    Image {
        channels,
        height: size,
        width: size,
        data,
    }
}

struct Shape {
    disk: bool,
    cx: f64,
    cy: f64,
    r: f64,
    value: f64,
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        if self.disk {
            (x - self.cx).powi(2) + (y - self.cy).powi(2) <= self.r * self.r
        } else {
            (x - self.cx).abs() <= self.r && (y - self.cy).abs() <= 0.6 * self.r
        }
    }
}
