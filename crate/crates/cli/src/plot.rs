use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use image::{Rgb, RgbImage};
use sc_denoise::train::IterationSummary;
use serde::{Deserialize, Serialize};

const WIDTH: u32 = 640;
const PANEL: u32 = 240;
const MARGIN: i64 = 24;
const AXIS: Rgb<u8> = Rgb([120, 120, 120]);
const LINE: Rgb<u8> = Rgb([31, 119, 180]);
const GAIN: Rgb<u8> = Rgb([44, 160, 44]);
const LOSS: Rgb<u8> = Rgb([214, 39, 40]);

/// One row of the plot sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub iteration: usize,
    pub psnr_db: f64,
    pub ssim: f64,
    pub delta_db: Option<f64>,
}

impl From<&IterationSummary> for PlotRow {
    fn from(h: &IterationSummary) -> Self {
        PlotRow { iteration: h.k, psnr_db: h.psnr_val, ssim: h.ssim_val, delta_db: h.delta_db }
    }
}

/// Sidecar path written next to a plot.
pub fn sidecar_path(png: &Path) -> PathBuf {
    png.with_extension("csv")
}

#[cfg(test)]
pub fn read_sidecar(path: &Path) -> Result<Vec<PlotRow>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(reader.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Two stacked panels: PSNR per iteration (line) and its change against the previous iteration (bars).
pub fn plot_history(history: &[IterationSummary], png: &Path) -> Result<PathBuf> {
    ensure!(!history.is_empty(), "history is empty, nothing to plot");
    let rows: Vec<PlotRow> = history.iter().map(PlotRow::from).collect();

    let csv_path = sidecar_path(png);
    let mut writer = csv::Writer::from_path(&csv_path).with_context(|| format!("writing {}", csv_path.display()))?;
    for row in &rows {
        writer.serialize(row)?;
    }
    writer.flush()?;

    let mut canvas = Canvas(RgbImage::from_pixel(WIDTH, 2 * PANEL, Rgb([255, 255, 255])));
    let n = rows.len();
    let x_at = |i: usize| MARGIN + ((i as f64 + 0.5) / n as f64 * (WIDTH as i64 - 2 * MARGIN) as f64) as i64;

    let psnr: Vec<f64> = rows.iter().map(|r| r.psnr_db).collect();
    let top = Panel::new(0, &psnr, false);
    canvas.axes(&top);
    let points: Vec<(i64, i64)> = psnr.iter().enumerate().map(|(i, v)| (x_at(i), top.y(*v))).collect();
    for pair in points.windows(2) {
        canvas.line(pair[0], pair[1], LINE);
    }
    for &(x, y) in &points {
        canvas.rect(x - 3, y - 3, x + 3, y + 3, LINE);
    }

    let deltas: Vec<f64> = rows.iter().map(|r| r.delta_db.unwrap_or(0.0)).collect();
    let bottom = Panel::new(PANEL as i64, &deltas, true);
    canvas.axes(&bottom);
    let half = ((WIDTH as i64 - 2 * MARGIN) / (3 * n as i64)).max(1);
    for (i, d) in deltas.iter().enumerate() {
        let (x, zero, y) = (x_at(i), bottom.y(0.0), bottom.y(*d));
        canvas.rect(x - half, zero.min(y), x + half, zero.max(y), if *d >= 0.0 { GAIN } else { LOSS });
    }

    canvas.0.save(png).with_context(|| format!("writing {}", png.display()))?;
    Ok(csv_path)
}

struct Panel {
    top: i64,
    lo: f64,
    hi: f64,
    zero_line: bool,
}

impl Panel {
    fn new(top: i64, values: &[f64], zero_line: bool) -> Self {
        let mut lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if zero_line {
            lo = lo.min(0.0);
            hi = hi.max(0.0);
        }
        let pad = ((hi - lo) * 0.1).max(1e-3);
        Panel { top, lo: lo - pad, hi: hi + pad, zero_line }
    }

    fn y(&self, v: f64) -> i64 {
        let inner = PANEL as i64 - 2 * MARGIN;
        self.top + MARGIN + ((1.0 - (v - self.lo) / (self.hi - self.lo)) * inner as f64).round() as i64
    }
}

struct Canvas(RgbImage);

impl Canvas {
    fn put(&mut self, x: i64, y: i64, c: Rgb<u8>) {
        if x >= 0 && y >= 0 && (x as u32) < self.0.width() && (y as u32) < self.0.height() {
            self.0.put_pixel(x as u32, y as u32, c);
        }
    }

    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = ((x1 - x0).signum(), (y1 - y0).signum());
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.put(x, y, c);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    fn rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb<u8>) {
        for y in y0..=y1 {
            for x in x0..=x1 {
                self.put(x, y, c);
            }
        }
    }

    fn axes(&mut self, p: &Panel) {
        let (left, right) = (MARGIN, WIDTH as i64 - MARGIN);
        let bottom = p.top + PANEL as i64 - MARGIN;
        self.line((left, p.top + MARGIN), (left, bottom), AXIS);
        self.line((left, bottom), (right, bottom), AXIS);
        if p.zero_line {
            let z = p.y(0.0);
            self.line((left, z), (right, z), AXIS);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use sc_denoise::train::IterationStatus;

    fn summary(k: usize, psnr: f64, delta: Option<f64>) -> IterationSummary {
        IterationSummary {
            k,
            status: IterationStatus::Completed,
            best_step: 10,
            psnr_val: psnr,
            ssim_val: 0.8,
            delta_db: delta,
            patch: 16,
            batch: 4,
            steps: 10,
            teacher_checksum: String::new(),
            message: None,
        }
    }

    #[test]
    fn sidecar_matches_history() {
        let dir = tempfile::tempdir().unwrap();
        let history = [summary(0, 30.125, None), summary(1, 30.5, Some(0.375)), summary(2, 30.25, Some(-0.25))];
        let png = dir.path().join("sc.png");
        let csv = plot_history(&history, &png).unwrap();
        let rows = read_sidecar(&csv).unwrap();
        assert_eq!(rows, history.iter().map(PlotRow::from).collect::<Vec<_>>());
        let img = image::open(&png).unwrap();
        assert_eq!((img.width(), img.height()), (WIDTH, 2 * PANEL));
    }

    #[test]
    fn panel_maps_extremes_inside_the_margins() {
        let p = Panel::new(0, &[1.0, 2.0], false);
        assert!(p.y(2.0) > MARGIN && p.y(1.0) < PANEL as i64 - MARGIN);
        assert!(p.y(2.0) < p.y(1.0));
    }
}
