//! Before/after overlay images: clean boxes in blue, moved boxes in red,
//! text-modified tokens underlined in green, on top of the perturbed page.

use anyhow::Result;
use docadv_core::attack_pixel::{denorm_rect, Raster};
use docadv_core::data::Document;

const BLUE: [u8; 3] = [40, 80, 220];
const RED: [u8; 3] = [220, 50, 40];
const GREEN: [u8; 3] = [30, 160, 60];

fn to_rgb(img: &Raster) -> Raster {
    if img.channels() == 3 {
        return img.clone();
    }
    let mut data = Vec::with_capacity(img.width() * img.height() * 3);
    for &v in img.samples() {
        data.extend_from_slice(&[v, v, v]);
    }
    Raster::new(img.width(), img.height(), 3, data).expect("rgb buffer")
}

#[allow(clippy::needless_range_loop)]
fn draw_rect(img: &mut Raster, b: &docadv_core::geom::BBox, color: [u8; 3]) {
    let (r, _) = denorm_rect(b, img.width(), img.height());
    if r.is_empty() {
        return;
    }
    let (x1, y1) = (r.x1 - 1, r.y1 - 1);
    for x in r.x0..r.x1 {
        for c in 0..3 {
            img.set(x, r.y0, c, color[c]);
            img.set(x, y1, c, color[c]);
        }
    }
    for y in r.y0..r.y1 {
        for c in 0..3 {
            img.set(r.x0, y, c, color[c]);
            img.set(x1, y, c, color[c]);
        }
    }
}

#[allow(clippy::needless_range_loop)]
fn underline(img: &mut Raster, b: &docadv_core::geom::BBox, color: [u8; 3]) {
    let (r, _) = denorm_rect(b, img.width(), img.height());
    if r.is_empty() {
        return;
    }
    let y = (r.y1 + 1).min(img.height() - 1);
    for x in r.x0..r.x1 {
        for c in 0..3 {
            img.set(x, y, c, color[c]);
        }
    }
}

/// Overlay for one original/perturbed document pair.
pub fn overlay(original: &Document, perturbed: &Document) -> Result<Raster> {
    let base = perturbed
        .raster
        .as_ref()
        .or(original.raster.as_ref())
        .cloned()
        .unwrap_or(Raster::filled(
            original.page.0 as usize,
            original.page.1 as usize,
            1,
            255,
        )?);
    let mut img = to_rgb(&base);
    for (a, b) in original.tokens.iter().zip(&perturbed.tokens) {
        if a.bbox != b.bbox {
            draw_rect(&mut img, &a.bbox, BLUE);
            draw_rect(&mut img, &b.bbox, RED);
        }
        if a.text != b.text {
            underline(&mut img, &b.bbox, GREEN);
        }
    }
    Ok(img)
}
