//! Diagnostic mosaics: ground truth, reconstruction and both baselines,
//! their error fields, a bar plot of the three metrics and the energy
//! spectra of all four fields.
//!
//! Layout (no text is drawn):
//! - row 1: ground truth, model, bilinear, bicubic (diverging map, shared
//!   symmetric range from the ground truth);
//! - row 2: bar plot, then |model − gt|, |bilinear − gt|, |bicubic − gt|
//!   (sequential map, shared range);
//! - row 3: log10 E(k) against k for gt (black), model (red), bilinear
//!   (blue) and bicubic (green).
//!
//! Bars come in three groups (relative L2, spectral, high-frequency
//! spectral), each scaled to its largest value, coloured like the curves.

use std::path::{Path, PathBuf};

use diffcoder_core::metrics::{energy_spectrum, LOG_FLOOR};
use diffcoder_core::FlowField;
use image::{Rgb, RgbImage};
use imageproc::drawing::{draw_filled_rect_mut, draw_line_segment_mut};
use imageproc::rect::Rect;

use crate::error::{Error, Result};
use crate::eval::Metrics;

const MARGIN: u32 = 8;
const MIN_PANEL: usize = 128;
const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
const GREY: Rgb<u8> = Rgb([200, 200, 200]);
/// Curve and bar colours: gt, model, bilinear, bicubic.
pub const COLORS: [Rgb<u8>; 4] = [Rgb([0, 0, 0]), Rgb([214, 39, 40]), Rgb([31, 119, 180]), Rgb([44, 160, 44])];

/// Picks, for each percentile `p`, the sample whose rank in the ascending
/// error order is `round(p/100 · (n−1))`. Ties keep the lower index first.
pub fn select_percentiles(errors: &[f64], percentiles: &[f64]) -> Result<Vec<usize>> {
    if errors.is_empty() {
        return Err(Error::Invalid("report has no samples".into()));
    }
    for &p in percentiles {
        if !(0.0..=100.0).contains(&p) {
            return Err(Error::Invalid(format!("percentile {p} outside 0..=100")));
        }
    }
    let mut order: Vec<usize> = (0..errors.len()).collect();
    order.sort_by(|&a, &b| errors[a].total_cmp(&errors[b]).then(a.cmp(&b)));
    let n = errors.len();
    Ok(percentiles
        .iter()
        .map(|&p| order[(p / 100.0 * (n - 1) as f64).round() as usize])
        .collect())
}

fn lerp(a: f64, b: f64, t: f64) -> u8 {
    (a + (b - a) * t).round().clamp(0.0, 255.0) as u8
}

/// Blue–white–red for `t ∈ [−1, 1]`.
fn diverging(t: f64) -> Rgb<u8> {
    let t = if t.is_finite() { t.clamp(-1.0, 1.0) } else { 0.0 };
    if t < 0.0 {
        let s = -t;
        Rgb([lerp(255.0, 33.0, s), lerp(255.0, 102.0, s), lerp(255.0, 172.0, s)])
    } else {
        Rgb([lerp(255.0, 178.0, t), lerp(255.0, 24.0, t), lerp(255.0, 43.0, t)])
    }
}

/// Black–red–yellow–white for `t ∈ [0, 1]`.
fn sequential(t: f64) -> Rgb<u8> {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let c = |x: f64| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
    Rgb([c(3.0 * t), c(3.0 * t - 1.0), c(3.0 * t - 2.0)])
}

fn paint_field(img: &mut RgbImage, x0: u32, y0: u32, scale: u32, field: &FlowField, color: impl Fn(f64) -> Rgb<u8>) {
    let (h, w) = field.shape();
    for i in 0..h {
        for j in 0..w {
            let c = color(field.at(i, j));
            for di in 0..scale {
                for dj in 0..scale {
                    img.put_pixel(x0 + j as u32 * scale + dj, y0 + i as u32 * scale + di, c);
                }
            }
        }
    }
}

fn frame_rect(img: &mut RgbImage, x0: u32, y0: u32, w: u32, h: u32) {
    let (x1, y1) = ((x0 + w) as f32, (y0 + h) as f32);
    let (x0, y0) = (x0 as f32 - 1.0, y0 as f32 - 1.0);
    for (a, b) in [((x0, y0), (x1, y0)), ((x1, y0), (x1, y1)), ((x1, y1), (x0, y1)), ((x0, y1), (x0, y0))] {
        draw_line_segment_mut(img, a, b, GREY);
    }
}

fn bar_plot(img: &mut RgbImage, x0: u32, y0: u32, size: u32, metrics: &[Metrics; 3]) {
    let groups: [[f64; 3]; 3] = [
        metrics.map(|m| m.rel_l2),
        metrics.map(|m| m.spectral),
        metrics.map(|m| m.spectral_high),
    ];
    let pad = size / 10;
    let base = y0 + size - pad;
    let height = (size - 2 * pad) as f64;
    let group_w = (size - 2 * pad) / 3;
    let bar_w = (group_w * 2 / 9).max(1);
    for (g, vals) in groups.iter().enumerate() {
        let top = vals.iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
        for (b, &v) in vals.iter().enumerate() {
            let frac = if top > 0.0 && v.is_finite() { (v / top).clamp(0.0, 1.0) } else { 0.0 };
            let hpx = ((frac * height).round() as u32).max(1);
            let x = x0 + pad + g as u32 * group_w + group_w / 6 + b as u32 * (bar_w + bar_w / 2);
            draw_filled_rect_mut(img, Rect::at(x as i32, (base - hpx) as i32).of_size(bar_w, hpx), COLORS[b + 1]);
        }
    }
    draw_line_segment_mut(img, ((x0 + pad) as f32, base as f32), ((x0 + size - pad) as f32, base as f32), BLACK);
}

fn spectra_plot(img: &mut RgbImage, x0: u32, y0: u32, w: u32, h: u32, spectra: &[Vec<f64>; 4]) {
    let pad = 12;
    let (px0, py0, pw, ph) = (x0 + pad, y0 + pad, w - 2 * pad, h - 2 * pad);
    draw_line_segment_mut(img, (px0 as f32, (py0 + ph) as f32), ((px0 + pw) as f32, (py0 + ph) as f32), BLACK);
    draw_line_segment_mut(img, (px0 as f32, py0 as f32), (px0 as f32, (py0 + ph) as f32), BLACK);
    let n = spectra[0].len().max(2);
    let logs: Vec<Vec<f64>> = spectra.iter().map(|s| s.iter().map(|&e| e.max(LOG_FLOOR).log10()).collect()).collect();
    let (lo, hi) = logs.iter().flatten().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo < hi { (lo, hi) } else { (lo - 1.0, lo + 1.0) };
    // Entry i holds shell k = i + 1; k runs linearly along the x axis.
    let map = |i: usize, y: f64| {
        let fx = i as f64 / (n - 1) as f64;
        let fy = (y - lo) / (hi - lo);
        ((px0 as f64 + fx * pw as f64) as f32, ((py0 + ph) as f64 - fy * ph as f64) as f32)
    };
    // Draw the ground truth last so it stays visible.
    for c in [1, 2, 3, 0] {
        for i in 1..logs[c].len() {
            draw_line_segment_mut(img, map(i - 1, logs[c][i - 1]), map(i, logs[c][i]), COLORS[c]);
        }
    }
}

/// The four fields of one sample with their per-method metrics
/// (model, bilinear, bicubic).
pub struct MosaicInput<'a> {
    pub gt: &'a FlowField,
    pub model: &'a FlowField,
    pub bilinear: &'a FlowField,
    pub bicubic: &'a FlowField,
    pub metrics: [Metrics; 3],
}

/// Energy spectrum values for shells `1..=k_max`.
fn spectrum_values(f: &FlowField) -> Result<Vec<f64>> {
    Ok(energy_spectrum(f)?.energy)
}

pub fn render_mosaic(input: &MosaicInput<'_>) -> Result<RgbImage> {
    let (h, w) = input.gt.shape();
    let fields = [input.gt, input.model, input.bilinear, input.bicubic];
    if fields.iter().any(|f| f.shape() != (h, w)) {
        return Err(Error::Mismatch("mosaic fields differ in shape".into()));
    }
    let scale = (MIN_PANEL / h.max(w)).max(1) as u32;
    let (pw, ph) = (w as u32 * scale, h as u32 * scale);
    let width = 4 * pw + 5 * MARGIN;
    let height = 3 * ph + 4 * MARGIN;
    let mut img = RgbImage::from_pixel(width, height, WHITE);

    let mean = input.gt.values().iter().sum::<f64>() / (h * w) as f64;
    let lim = input.gt.values().iter().map(|v| (v - mean).abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let col = |c: u32| MARGIN + c * (pw + MARGIN);
    for (c, f) in fields.iter().enumerate() {
        paint_field(&mut img, col(c as u32), MARGIN, scale, f, |v| diverging((v - mean) / lim));
        frame_rect(&mut img, col(c as u32), MARGIN, pw, ph);
    }

    let errors: Vec<FlowField> = fields[1..]
        .iter()
        .map(|f| {
            let v = f.values().iter().zip(input.gt.values()).map(|(a, b)| (a - b).abs()).collect();
            FlowField::new(h, w, v)
        })
        .collect::<std::result::Result<_, _>>()?;
    let emax = errors
        .iter()
        .flat_map(|e| e.values().iter().copied())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let row2 = 2 * MARGIN + ph;
    bar_plot(&mut img, col(0), row2, pw.min(ph), &input.metrics);
    frame_rect(&mut img, col(0), row2, pw, ph);
    for (c, e) in errors.iter().enumerate() {
        paint_field(&mut img, col(c as u32 + 1), row2, scale, e, |v| sequential(v / emax));
        frame_rect(&mut img, col(c as u32 + 1), row2, pw, ph);
    }

    let spectra = [
        spectrum_values(input.gt)?,
        spectrum_values(input.model)?,
        spectrum_values(input.bilinear)?,
        spectrum_values(input.bicubic)?,
    ];
    let row3 = 3 * MARGIN + 2 * ph;
    let span = 4 * pw + 3 * MARGIN;
    spectra_plot(&mut img, col(0), row3, span, ph, &spectra);
    frame_rect(&mut img, col(0), row3, span, ph);
    Ok(img)
}

pub fn mosaic_file_name(percentile: f64, index: usize) -> String {
    format!("mosaic_p{percentile}_sample{index:04}.png")
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<PathBuf> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Io { path: path.to_path_buf(), source: std::io::Error::other(e) })?;
    Ok(path.to_path_buf())
}
