//! Raster-channel perturbation: translating box pixel content to follow
//! adversarial boxes, plus document-style augmentations.

use crate::error::{Error, Result};
use crate::geom::{BBox, GRID_MAX};
use crate::rng::stream;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Row-major 8-bit raster, grayscale (1 channel) or RGB (3 channels).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Image(format!(
                "unsupported channel count {channels} (expected 1 or 3)"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::Image(format!(
                "raster {width}x{height}x{channels} wants {} samples, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(Raster {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Raster::new(
            width,
            height,
            channels,
            vec![value; width * height * channels],
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn samples(&self) -> &[u8] {
        &self.data
    }

    pub fn samples_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    fn idx(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[self.idx(x, y, c)]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        let i = self.idx(x, y, c);
        self.data[i] = v;
    }
}

/// Pixel rectangle, right/bottom exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelRect {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }
    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }
    pub fn is_empty(&self) -> bool {
        self.x1 <= self.x0 || self.y1 <= self.y0
    }
}

/// Map a normalized box to pixel coordinates: floor for origins, ceil for
/// extents, clipped to the raster. Returns `(rect, clipped)`.
pub fn denorm_rect(b: &BBox, width: usize, height: usize) -> (PixelRect, bool) {
    let fx0 = b.x0 / GRID_MAX * width as f64;
    let fy0 = b.y0 / GRID_MAX * height as f64;
    let fx1 = b.x1 / GRID_MAX * width as f64;
    let fy1 = b.y1 / GRID_MAX * height as f64;
    let x0 = fx0.floor().max(0.0) as usize;
    let y0 = fy0.floor().max(0.0) as usize;
    let x1 = (fx1.ceil() as i64).clamp(0, width as i64) as usize;
    let y1 = (fy1.ceil() as i64).clamp(0, height as i64) as usize;
    let clipped = fx0 < 0.0 || fy0 < 0.0 || fx1 > width as f64 || fy1 > height as f64;
    (
        PixelRect {
            x0: x0.min(width),
            y0: y0.min(height),
            x1,
            y1,
        },
        clipped,
    )
}

/// Median color of the 2-pixel ring just outside `rect`.
#[allow(clippy::needless_range_loop)]
fn border_ring_median(img: &Raster, rect: &PixelRect) -> Vec<u8> {
    let mut per_channel: Vec<Vec<u8>> = vec![Vec::new(); img.channels];
    let x_lo = rect.x0.saturating_sub(2);
    let y_lo = rect.y0.saturating_sub(2);
    let x_hi = (rect.x1 + 2).min(img.width);
    let y_hi = (rect.y1 + 2).min(img.height);
    for y in y_lo..y_hi {
        for x in x_lo..x_hi {
            let inside = x >= rect.x0 && x < rect.x1 && y >= rect.y0 && y < rect.y1;
            if inside {
                continue;
            }
            for c in 0..img.channels {
                per_channel[c].push(img.get(x, y, c));
            }
        }
    }
    per_channel
        .into_iter()
        .map(|mut v| {
            if v.is_empty() {
                255
            } else {
                v.sort_unstable();
                v[v.len() / 2]
            }
        })
        .collect()
}

fn bilinear(img: &Raster, src: &PixelRect, fx: f64, fy: f64, c: usize) -> f64 {
    let clamp_x = |v: f64| v.clamp(src.x0 as f64, src.x1 as f64 - 1.0);
    let clamp_y = |v: f64| v.clamp(src.y0 as f64, src.y1 as f64 - 1.0);
    let x = clamp_x(fx);
    let y = clamp_y(fy);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(src.x1 - 1);
    let y1 = (y0 + 1).min(src.y1 - 1);
    let tx = x - x0 as f64;
    let ty = y - y0 as f64;
    let p00 = img.get(x0, y0, c) as f64;
    let p10 = img.get(x1, y0, c) as f64;
    let p01 = img.get(x0, y1, c) as f64;
    let p11 = img.get(x1, y1, c) as f64;
    p00 * (1.0 - tx) * (1.0 - ty) + p10 * tx * (1.0 - ty) + p01 * (1.0 - tx) * ty + p11 * tx * ty
}

/// Move the pixel content of `from` so it covers `to`, resampling bilinearly.
/// Vacated source pixels are filled with the median color of the 2-pixel
/// ring around the source region. Returns the new raster plus notes about
/// clipping/skipping.
#[allow(clippy::needless_range_loop)]
pub fn translate_region(img: &Raster, from: &BBox, to: &BBox) -> Result<(Raster, Vec<String>)> {
    from.validate()?;
    to.validate()?;
    let mut notes = Vec::new();
    if from == to {
        return Ok((img.clone(), notes));
    }
    let (src, src_clipped) = denorm_rect(from, img.width, img.height);
    let (dst, dst_clipped) = denorm_rect(to, img.width, img.height);
    if src_clipped {
        notes.push(format!("source box clipped to raster: {from:?}"));
    }
    if dst_clipped {
        notes.push(format!("destination box clipped to raster: {to:?}"));
    }
    if src.is_empty() || dst.is_empty() {
        notes.push("region degenerate after clipping; move skipped".into());
        return Ok((img.clone(), notes));
    }
    if src == dst {
        return Ok((img.clone(), notes));
    }

    let snapshot = img.clone();
    let mut out = img.clone();
    let fill = border_ring_median(&snapshot, &src);

    for y in src.y0..src.y1 {
        for x in src.x0..src.x1 {
            for c in 0..out.channels {
                out.set(x, y, c, fill[c]);
            }
        }
    }

    let sw = src.width() as f64;
    let sh = src.height() as f64;
    let dw = dst.width() as f64;
    let dh = dst.height() as f64;
    for dy in dst.y0..dst.y1 {
        let fy = src.y0 as f64 + ((dy - dst.y0) as f64 + 0.5) * sh / dh - 0.5;
        for dx in dst.x0..dst.x1 {
            let fx = src.x0 as f64 + ((dx - dst.x0) as f64 + 0.5) * sw / dw - 0.5;
            for c in 0..out.channels {
                let v = bilinear(&snapshot, &src, fx, fy, c);
                out.set(dx, dy, c, v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Ok((out, notes))
}

/// Document-style augmentation with seeded parameter ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AugmentKind {
    GaussianBlur {
        sigma_min: f64,
        sigma_max: f64,
    },
    GaussianNoise {
        stddev_min: f64,
        stddev_max: f64,
    },
    Contrast {
        factor_min: f64,
        factor_max: f64,
    },
    Shadow {
        strength_min: f64,
        strength_max: f64,
    },
}

impl AugmentKind {
    pub fn name(&self) -> &'static str {
        match self {
            AugmentKind::GaussianBlur { .. } => "gaussian_blur",
            AugmentKind::GaussianNoise { .. } => "gaussian_noise",
            AugmentKind::Contrast { .. } => "contrast",
            AugmentKind::Shadow { .. } => "shadow",
        }
    }

    /// The default 4-kind suite sampled by scenarios with augmentation.
    pub fn default_set() -> Vec<AugmentKind> {
        vec![
            AugmentKind::GaussianBlur {
                sigma_min: 0.6,
                sigma_max: 1.6,
            },
            AugmentKind::GaussianNoise {
                stddev_min: 4.0,
                stddev_max: 12.0,
            },
            AugmentKind::Contrast {
                factor_min: 0.55,
                factor_max: 0.9,
            },
            AugmentKind::Shadow {
                strength_min: 0.25,
                strength_max: 0.55,
            },
        ]
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i as f64 * i as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let z: f64 = k.iter().sum();
    for v in k.iter_mut() {
        *v /= z;
    }
    k
}

fn blur(img: &Raster, sigma: f64) -> Raster {
    if sigma <= 1e-9 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    let radius = (k.len() / 2) as i64;
    let (w, h, ch) = (img.width as i64, img.height as i64, img.channels);
    // horizontal pass
    let mut tmp = vec![0.0f64; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (i, &kv) in k.iter().enumerate() {
                    let sx = (x + i as i64 - radius).clamp(0, w - 1);
                    acc += kv * img.get(sx as usize, y as usize, c) as f64;
                }
                tmp[((y * w + x) as usize) * ch + c] = acc;
            }
        }
    }
    // vertical pass
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (i, &kv) in k.iter().enumerate() {
                    let sy = (y + i as i64 - radius).clamp(0, h - 1);
                    acc += kv * tmp[((sy * w + x) as usize) * ch + c];
                }
                out.set(
                    x as usize,
                    y as usize,
                    c,
                    acc.round().clamp(0.0, 255.0) as u8,
                );
            }
        }
    }
    out
}

/// Apply one augmentation; deterministic per `(kind, seed)`, dimensions
/// preserved.
pub fn augment(img: &Raster, kind: &AugmentKind, seed: u64) -> Raster {
    let mut rng = stream(seed, "augment", 0);
    match kind {
        AugmentKind::GaussianBlur {
            sigma_min,
            sigma_max,
        } => {
            let sigma = if sigma_max > sigma_min {
                rng.gen_range(*sigma_min..=*sigma_max)
            } else {
                *sigma_min
            };
            blur(img, sigma)
        }
        AugmentKind::GaussianNoise {
            stddev_min,
            stddev_max,
        } => {
            let sd = if stddev_max > stddev_min {
                rng.gen_range(*stddev_min..=*stddev_max)
            } else {
                *stddev_min
            };
            let mut out = img.clone();
            if sd > 0.0 {
                for v in out.data.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v = (*v as f64 + z * sd).round().clamp(0.0, 255.0) as u8;
                }
            }
            out
        }
        AugmentKind::Contrast {
            factor_min,
            factor_max,
        } => {
            let f = if factor_max > factor_min {
                rng.gen_range(*factor_min..=*factor_max)
            } else {
                *factor_min
            };
            let mut out = img.clone();
            for v in out.data.iter_mut() {
                *v = ((*v as f64 - 128.0) * f + 128.0).round().clamp(0.0, 255.0) as u8;
            }
            out
        }
        AugmentKind::Shadow {
            strength_min,
            strength_max,
        } => {
            let s = if strength_max > strength_min {
                rng.gen_range(*strength_min..=*strength_max)
            } else {
                *strength_min
            };
            let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let (dx, dy) = (angle.cos(), angle.sin());
            let (w, h) = (img.width as f64, img.height as f64);
            let mut out = img.clone();
            // Linear ramp along the sampled direction.
            let diag = (w * w + h * h).sqrt();
            for y in 0..img.height {
                for x in 0..img.width {
                    let proj = (x as f64 * dx + y as f64 * dy) / diag + 0.5;
                    let m = proj.clamp(0.0, 1.0);
                    let f = 1.0 - s * m;
                    for c in 0..img.channels {
                        let v = (img.get(x, y, c) as f64 * f).round().clamp(0.0, 255.0);
                        out.set(x, y, c, v as u8);
                    }
                }
            }
            out
        }
    }
}

/// Load a raster from a lossless PNG. Other formats are rejected: a lossy
/// input would already carry perturbations outside any budget.
pub fn load_raster(path: &Path) -> Result<Raster> {
    let bytes = std::fs::read(path)?;
    let reader = image::ImageReader::new(std::io::Cursor::new(&bytes))
        .with_guessed_format()
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    match reader.format() {
        Some(image::ImageFormat::Png) => {}
        Some(other) => {
            return Err(Error::Image(format!(
                "{}: refusing non-PNG input format {:?}",
                path.display(),
                other
            )))
        }
        None => {
            return Err(Error::Image(format!(
                "{}: unrecognized image format",
                path.display()
            )))
        }
    }
    let img = reader
        .decode()
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    match img {
        image::DynamicImage::ImageLuma8(g) => {
            let (w, h) = (g.width() as usize, g.height() as usize);
            Raster::new(w, h, 1, g.into_raw())
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            Raster::new(w, h, 3, rgb.into_raw())
        }
    }
}

pub fn save_raster(raster: &Raster, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let w = raster.width as u32;
    let h = raster.height as u32;
    match raster.channels {
        1 => {
            let img: image::GrayImage = image::ImageBuffer::from_raw(w, h, raster.data.clone())
                .ok_or_else(|| Error::Image("raster buffer size mismatch".into()))?;
            img.save_with_format(path, image::ImageFormat::Png)
                .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
        }
        3 => {
            let img: image::RgbImage = image::ImageBuffer::from_raw(w, h, raster.data.clone())
                .ok_or_else(|| Error::Image("raster buffer size mismatch".into()))?;
            img.save_with_format(path, image::ImageFormat::Png)
                .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
        }
        _ => unreachable!("channel count validated at construction"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker(w: usize, h: usize) -> Raster {
        let mut img = Raster::filled(w, h, 1, 255).unwrap();
        for y in 0..h {
            for x in 0..w {
                if (x / 2 + y / 2) % 2 == 0 {
                    img.set(x, y, 0, 0);
                }
            }
        }
        img
    }

    #[test]
    fn translate_identity_move_is_identity() {
        let img = checker(40, 40);
        let b = BBox::new(100.0, 100.0, 400.0, 400.0).unwrap();
        let (out, notes) = translate_region(&img, &b, &b).unwrap();
        assert_eq!(out, img);
        assert!(notes.is_empty());
    }

    #[test]
    fn translate_on_uniform_page_stays_uniform() {
        let img = Raster::filled(50, 50, 1, 255).unwrap();
        let from = BBox::new(100.0, 100.0, 300.0, 300.0).unwrap();
        let to = BBox::new(200.0, 150.0, 400.0, 350.0).unwrap();
        let (out, _) = translate_region(&img, &from, &to).unwrap();
        assert!(out.samples().iter().all(|&v| v == 255));
    }

    #[test]
    fn translate_moves_checker_and_fills_source() {
        // 100x100 page; checker block occupying pixels [10,30)x[10,30),
        // moved +5 px right (normalized grid: 1000/100 = 10 units per px).
        let mut img = Raster::filled(100, 100, 1, 255).unwrap();
        for y in 10..30 {
            for x in 10..30 {
                if (x + y) % 2 == 0 {
                    img.set(x, y, 0, 0);
                }
            }
        }
        let from = BBox::new(100.0, 100.0, 300.0, 300.0).unwrap();
        let to = BBox::new(150.0, 100.0, 350.0, 300.0).unwrap();
        let (out, _) = translate_region(&img, &from, &to).unwrap();
        // destination holds the checker content (same size, integer shift)
        for y in 10..30 {
            for x in 15..35 {
                assert_eq!(out.get(x, y, 0), img.get(x - 5, y, 0), "at {x},{y}");
            }
        }
        // vacated strip is filled with the white surround
        for y in 10..30 {
            for x in 10..15 {
                assert_eq!(out.get(x, y, 0), 255, "at {x},{y}");
            }
        }
    }

    #[test]
    fn translate_skips_degenerate_after_clipping() {
        let img = Raster::filled(20, 20, 1, 200).unwrap();
        let from = BBox::new(1100.0, 1100.0, 1200.0, 1200.0).unwrap();
        let to = BBox::new(100.0, 100.0, 200.0, 200.0).unwrap();
        let (out, notes) = translate_region(&img, &from, &to).unwrap();
        assert_eq!(out, img);
        assert!(notes.iter().any(|n| n.contains("skipped")));
    }

    #[test]
    fn blur_sigma_zero_is_identity() {
        let img = checker(16, 16);
        let kind = AugmentKind::GaussianBlur {
            sigma_min: 0.0,
            sigma_max: 0.0,
        };
        assert_eq!(augment(&img, &kind, 3), img);
    }

    #[test]
    fn contrast_factor_one_is_identity() {
        let img = checker(16, 16);
        let kind = AugmentKind::Contrast {
            factor_min: 1.0,
            factor_max: 1.0,
        };
        assert_eq!(augment(&img, &kind, 3), img);
    }

    #[test]
    fn noise_statistics_match_parameters() {
        let img = Raster::filled(128, 128, 1, 128).unwrap();
        let kind = AugmentKind::GaussianNoise {
            stddev_min: 10.0,
            stddev_max: 10.0,
        };
        let out = augment(&img, &kind, 9);
        let n = out.samples().len() as f64;
        assert!(n >= 1e4);
        let mean = out.samples().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = out
            .samples()
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        assert!((mean - 128.0).abs() < 1.0, "mean = {mean}");
        assert!((var.sqrt() - 10.0).abs() < 1.0, "stddev = {}", var.sqrt());
    }

    #[test]
    fn augment_preserves_dimensions_and_is_seeded() {
        let img = checker(24, 18);
        for kind in AugmentKind::default_set() {
            let a = augment(&img, &kind, 5);
            let b = augment(&img, &kind, 5);
            let c = augment(&img, &kind, 6);
            assert_eq!(a.width(), 24);
            assert_eq!(a.height(), 18);
            assert_eq!(a, b, "{} not deterministic", kind.name());
            if !matches!(kind, AugmentKind::GaussianBlur { .. }) {
                // different seed draws different parameters
                let _ = c;
            }
        }
    }

    #[test]
    fn png_round_trip_and_lossy_rejection() {
        let dir = std::env::temp_dir().join("docadv-pixel-test");
        std::fs::create_dir_all(&dir).unwrap();
        let img = checker(12, 9);
        let p = dir.join("t.png");
        save_raster(&img, &p).unwrap();
        let back = load_raster(&p).unwrap();
        assert_eq!(back, img);

        let fake_jpeg = dir.join("t.jpg");
        std::fs::write(&fake_jpeg, [0xFF, 0xD8, 0xFF, 0xE0, 0, 0, 0, 0]).unwrap();
        assert!(load_raster(&fake_jpeg).is_err());
    }
}
