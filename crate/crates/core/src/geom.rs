//! Axis-aligned box geometry on the normalized [0, 1000] page grid.
//!
//! Boxes are kept as continuous reals internally and only rounded/clamped
//! when they are realized into a document or exported. Overlap of boxes that
//! merely touch (shared edge, empty interior) counts as zero.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Upper bound of the normalized coordinate grid.
pub const GRID_MAX: f64 = 1000.0;

/// Slack applied when checking an IoU budget after projection/rounding.
pub const IOU_TOLERANCE: f64 = 1e-4;

/// Axis-aligned box, corners `(x0, y0)`–`(x1, y1)` with `x0 < x1`, `y0 < y1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let b = BBox { x0, y0, x1, y1 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let fin = self.x0.is_finite()
            && self.y0.is_finite()
            && self.x1.is_finite()
            && self.y1.is_finite();
        if !fin {
            return Err(Error::InvalidGeometry(format!(
                "non-finite coordinates: ({}, {}, {}, {})",
                self.x0, self.y0, self.x1, self.y1
            )));
        }
        if self.x0 >= self.x1 || self.y0 >= self.y1 {
            return Err(Error::InvalidGeometry(format!(
                "degenerate box ({}, {}, {}, {})",
                self.x0, self.y0, self.x1, self.y1
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x0: self.x0 + dx,
            y0: self.y0 + dy,
            x1: self.x1 + dx,
            y1: self.y1 + dy,
        }
    }

    /// Scale width/height by `(sx, sy)` about the box center.
    pub fn scaled_about_center(&self, sx: f64, sy: f64) -> BBox {
        let (cx, cy) = self.center();
        let hw = self.width() / 2.0 * sx;
        let hh = self.height() / 2.0 * sy;
        BBox {
            x0: cx - hw,
            y0: cy - hh,
            x1: cx + hw,
            y1: cy + hh,
        }
    }

    pub fn union_bounds(&self, other: &BBox) -> BBox {
        BBox {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }

    /// Clamp into the [0, GRID_MAX] grid (export path).
    pub fn clamped(&self) -> BBox {
        BBox {
            x0: self.x0.clamp(0.0, GRID_MAX),
            y0: self.y0.clamp(0.0, GRID_MAX),
            x1: self.x1.clamp(0.0, GRID_MAX),
            y1: self.y1.clamp(0.0, GRID_MAX),
        }
    }

    /// Round every coordinate to the integer grid (export path).
    pub fn rounded(&self) -> BBox {
        BBox {
            x0: self.x0.round(),
            y0: self.y0.round(),
            x1: self.x1.round(),
            y1: self.y1.round(),
        }
    }
}

/// Center/log-size parameterization of a box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxParam {
    pub cx: f64,
    pub cy: f64,
    pub logw: f64,
    pub logh: f64,
}

impl BoxParam {
    pub fn encode(b: &BBox) -> BoxParam {
        let (cx, cy) = b.center();
        BoxParam {
            cx,
            cy,
            logw: b.width().ln(),
            logh: b.height().ln(),
        }
    }

    pub fn decode(&self) -> BBox {
        let hw = self.logw.exp() / 2.0;
        let hh = self.logh.exp() / 2.0;
        BBox {
            x0: self.cx - hw,
            y0: self.cy - hh,
            x1: self.cx + hw,
            y1: self.cy + hh,
        }
    }

    pub fn lerp(a: &BoxParam, b: &BoxParam, s: f64) -> BoxParam {
        BoxParam {
            cx: a.cx + s * (b.cx - a.cx),
            cy: a.cy + s * (b.cy - a.cy),
            logw: a.logw + s * (b.logw - a.logw),
            logh: a.logh + s * (b.logh - a.logh),
        }
    }
}

/// Minimum allowed IoU between an original and a perturbed box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayoutBudget {
    tau: f64,
}

impl LayoutBudget {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "layout budget tau must lie in (0, 1], got {tau}"
            )));
        }
        Ok(LayoutBudget { tau })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(0.0);
    let ih = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(0.0);
    iw * ih
}

pub(crate) fn iou_raw(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    inter / union
}

/// Intersection over union in [0, 1].
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    Ok(iou_raw(a, b))
}

pub(crate) fn giou_raw(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    let enclosing = a.union_bounds(b).area();
    inter / union - (enclosing - union) / enclosing
}

/// Generalized IoU in (-1, 1]: IoU minus the normalized empty area of the
/// smallest enclosing box.
pub fn giou(a: &BBox, b: &BBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    Ok(giou_raw(a, b))
}

/// Largest pure-axis translation of a box with the given extent along that
/// axis that keeps IoU against the original at least `tau`.
pub fn max_axis_shift(tau: f64, extent: f64) -> Result<f64> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "tau must lie in (0, 1], got {tau}"
        )));
    }
    if extent.is_nan() || extent <= 0.0 {
        return Err(Error::InvalidGeometry(format!(
            "extent must be positive, got {extent}"
        )));
    }
    Ok(extent * (1.0 - tau) / (1.0 + tau))
}

/// Projection of `cand` onto `{ b : iou(orig, b) >= tau }`, reporting the
/// interpolation scalar `s` in center/log-size space that was kept.
///
/// `s = 1` means `cand` was already feasible; `s = 0` degenerates to `orig`.
pub fn project_to_budget_s(orig: &BBox, cand: &BBox, tau: f64) -> Result<(BBox, f64)> {
    orig.validate()?;
    cand.validate()?;
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "tau must lie in (0, 1], got {tau}"
        )));
    }
    if iou_raw(orig, cand) >= tau {
        return Ok((*cand, 1.0));
    }
    let p0 = BoxParam::encode(orig);
    let p1 = BoxParam::encode(cand);
    // iou(s=0) = 1 >= tau, iou(s=1) < tau: bisect for the boundary.
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    for _ in 0..20 {
        let mid = (lo + hi) / 2.0;
        let b = BoxParam::lerp(&p0, &p1, mid).decode();
        let v = iou_raw(orig, &b);
        if (v - tau).abs() <= IOU_TOLERANCE {
            return Ok((b, mid));
        }
        if v >= tau {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-6 {
            break;
        }
    }
    Ok((BoxParam::lerp(&p0, &p1, lo).decode(), lo))
}

/// Projection of `cand` onto the feasible set, discarding the scalar.
pub fn project_to_budget(orig: &BBox, cand: &BBox, tau: f64) -> Result<BBox> {
    project_to_budget_s(orig, cand, tau).map(|(b, _)| b)
}

/// Realize `cand` on the integer grid while honoring the IoU budget against
/// `orig`. Displacement is damped until the clamped, rounded box satisfies
/// `iou >= tau - IOU_TOLERANCE`; the terminal fallback returns `orig`
/// unchanged (never rounded, so an identity perturbation stays bit-exact).
pub fn snap_to_feasible_grid(orig: &BBox, cand: &BBox, tau: f64) -> BBox {
    if cand == orig {
        return *orig;
    }
    let p0 = BoxParam::encode(orig);
    let p1 = BoxParam::encode(cand);
    let mut s = 1.0f64;
    for _ in 0..48 {
        let b = BoxParam::lerp(&p0, &p1, s).decode().clamped().rounded();
        if b.validate().is_ok() && iou_raw(orig, &b) >= tau - IOU_TOLERANCE {
            if b == *orig {
                return *orig;
            }
            return b;
        }
        s *= 0.8;
    }
    *orig
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn iou_identity() {
        let a = bx(0.0, 0.0, 100.0, 100.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn iou_disjoint() {
        let a = bx(0.0, 0.0, 100.0, 100.0);
        let b = bx(200.0, 200.0, 300.0, 300.0);
        assert_eq!(iou(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn iou_half_overlap() {
        // inter = 50*100 = 5000, union = 10000 + 10000 - 5000 = 15000
        let a = bx(0.0, 0.0, 100.0, 100.0);
        let b = bx(50.0, 0.0, 150.0, 100.0);
        assert!((iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn iou_touching_edges_is_zero() {
        let a = bx(0.0, 0.0, 100.0, 100.0);
        let b = bx(100.0, 0.0, 200.0, 100.0);
        assert_eq!(iou(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn iou_rejects_degenerate() {
        let a = bx(0.0, 0.0, 100.0, 100.0);
        let d = BBox {
            x0: 0.0,
            y0: 0.0,
            x1: 0.0,
            y1: 100.0,
        };
        assert!(matches!(iou(&a, &d), Err(Error::InvalidGeometry(_))));
        assert!(matches!(giou(&d, &a), Err(Error::InvalidGeometry(_))));
    }

    #[test]
    fn giou_identity() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(giou(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn giou_disjoint_unit_squares() {
        // C = 3, U = 2, IoU = 0 -> giou = -(3-2)/3 = -1/3
        let a = bx(0.0, 0.0, 1.0, 1.0);
        let b = bx(2.0, 0.0, 3.0, 1.0);
        assert!((giou(&a, &b).unwrap() + 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn giou_nested_equals_iou() {
        // Nested: C = U = 10000, IoU = 0.5 -> giou = 0.5
        let a = bx(0.0, 0.0, 100.0, 100.0);
        let b = bx(0.0, 0.0, 50.0, 100.0);
        assert!((giou(&a, &b).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn max_axis_shift_examples() {
        assert_eq!(max_axis_shift(1.0, 100.0).unwrap(), 0.0);
        assert!((max_axis_shift(0.6, 100.0).unwrap() - 25.0).abs() < 1e-12);
        assert!((max_axis_shift(0.75, 140.0).unwrap() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn max_axis_shift_bound_is_tight() {
        // Shifting by exactly the bound lands on iou == tau.
        for &(tau, w) in &[(0.6, 100.0), (0.75, 140.0), (0.9, 37.0)] {
            let d = max_axis_shift(tau, w).unwrap();
            let a = bx(0.0, 0.0, w, 20.0);
            let b = a.translated(d, 0.0);
            assert!((iou_raw(&a, &b) - tau).abs() < 1e-9, "tau={tau} w={w}");
        }
    }

    #[test]
    fn concentric_shrink_gives_squared_iou() {
        // shrinking both axes by f about the center leaves IoU = f^2
        let b = bx(120.0, 80.0, 260.0, 140.0);
        for f in [0.9, 0.95, 0.775] {
            let s = b.scaled_about_center(f, f);
            assert!((iou_raw(&b, &s) - f * f).abs() < 1e-12, "f = {f}");
        }
        // so a factor of at least sqrt(tau) keeps the scale mode feasible
        let f = 0.81f64.sqrt();
        assert!(iou_raw(&b, &b.scaled_about_center(f, f)) >= 0.81 - 1e-12);
    }

    #[test]
    fn max_axis_shift_rejects_bad_extent() {
        assert!(max_axis_shift(0.6, 0.0).is_err());
        assert!(max_axis_shift(0.6, -3.0).is_err());
    }

    #[test]
    fn projection_keeps_feasible_candidate() {
        let orig = bx(0.0, 0.0, 100.0, 100.0);
        let cand = orig.translated(5.0, 0.0);
        let (out, s) = project_to_budget_s(&orig, &cand, 0.6).unwrap();
        assert_eq!(out, cand);
        assert_eq!(s, 1.0);
    }

    #[test]
    fn projection_of_identity_is_identity() {
        let orig = bx(10.0, 10.0, 60.0, 40.0);
        let out = project_to_budget(&orig, &orig, 0.9).unwrap();
        assert_eq!(out, orig);
    }

    #[test]
    fn projection_matches_axis_shift_bound() {
        // +30 shift at tau 0.6 on a width-100 box projects to about +25.
        let orig = bx(0.0, 0.0, 100.0, 100.0);
        let cand = orig.translated(30.0, 0.0);
        let out = project_to_budget(&orig, &cand, 0.6).unwrap();
        assert!((out.x0 - 25.0).abs() < 1e-1, "x0 = {}", out.x0);
        assert!((iou_raw(&orig, &out) - 0.6).abs() < 1e-3);
    }

    #[test]
    fn projection_satisfies_budget_on_random_pairs() {
        let mut rng = crate::rng::stream(42, "geom-proj", 0);
        for _ in 0..10_000 {
            let x0 = rng.gen_range(0.0..900.0);
            let y0 = rng.gen_range(0.0..900.0);
            let w = rng.gen_range(5.0..100.0);
            let h = rng.gen_range(5.0..100.0);
            let orig = bx(x0, y0, x0 + w, y0 + h);
            let cand = orig
                .translated(rng.gen_range(-60.0..60.0), rng.gen_range(-60.0..60.0))
                .scaled_about_center(rng.gen_range(0.3..2.2), rng.gen_range(0.3..2.2));
            for &tau in &[0.6, 0.75, 0.9] {
                let out = project_to_budget(&orig, &cand, tau).unwrap();
                assert!(
                    iou_raw(&orig, &out) >= tau - IOU_TOLERANCE,
                    "iou {} below tau {tau}",
                    iou_raw(&orig, &out)
                );
            }
        }
    }

    /// Brute-force reference: largest feasible s on a 0.001 grid.
    fn scan_largest_feasible_s(orig: &BBox, cand: &BBox, tau: f64) -> f64 {
        let p0 = BoxParam::encode(orig);
        let p1 = BoxParam::encode(cand);
        let mut best = 0.0;
        for k in 0..=1000 {
            let s = k as f64 / 1000.0;
            let b = BoxParam::lerp(&p0, &p1, s).decode();
            if iou_raw(orig, &b) >= tau {
                best = s;
            }
        }
        best
    }

    #[test]
    fn projection_agrees_with_scalar_scan() {
        let mut rng = crate::rng::stream(7, "geom-scan", 0);
        for _ in 0..400 {
            let x0 = rng.gen_range(0.0..800.0);
            let y0 = rng.gen_range(0.0..800.0);
            let w = rng.gen_range(10.0..120.0);
            let h = rng.gen_range(8.0..60.0);
            let orig = bx(x0, y0, x0 + w, y0 + h);
            let cand = orig
                .translated(rng.gen_range(-50.0..50.0), rng.gen_range(-30.0..30.0))
                .scaled_about_center(rng.gen_range(0.5..1.6), rng.gen_range(0.5..1.6));
            for &tau in &[0.6, 0.75, 0.9] {
                let (_, s) = project_to_budget_s(&orig, &cand, tau).unwrap();
                let s_ref = scan_largest_feasible_s(&orig, &cand, tau);
                assert!(
                    (s - s_ref).abs() <= 2e-3,
                    "s={s} ref={s_ref} tau={tau} orig={orig:?} cand={cand:?}"
                );
            }
        }
    }

    #[test]
    fn snap_respects_budget_and_grid() {
        let mut rng = crate::rng::stream(11, "geom-snap", 0);
        for _ in 0..2000 {
            let x0 = rng.gen_range(0.0..900.0f64).round();
            let y0 = rng.gen_range(0.0..900.0f64).round();
            let w = rng.gen_range(8.0..90.0f64).round();
            let h = rng.gen_range(8.0..50.0f64).round();
            let orig = bx(x0, y0, x0 + w, y0 + h);
            let cand = orig.translated(rng.gen_range(-40.0..40.0), rng.gen_range(-20.0..20.0));
            for &tau in &[0.6, 0.75, 0.9] {
                let snapped = snap_to_feasible_grid(&orig, &cand, tau);
                assert!(iou_raw(&orig, &snapped) >= tau - IOU_TOLERANCE);
                if snapped != orig {
                    assert_eq!(snapped.x0, snapped.x0.round());
                    assert_eq!(snapped.y1, snapped.y1.round());
                    assert!(snapped.x0 >= 0.0 && snapped.x1 <= GRID_MAX);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn iou_giou_are_symmetric_and_bounded(
            ax in 0.0..900.0f64, ay in 0.0..900.0f64,
            aw in 1.0..100.0f64, ah in 1.0..100.0f64,
            bx_ in 0.0..900.0f64, by in 0.0..900.0f64,
            bw in 1.0..100.0f64, bh in 1.0..100.0f64,
        ) {
            let a = BBox::new(ax, ay, ax + aw, ay + ah).unwrap();
            let b = BBox::new(bx_, by, bx_ + bw, by + bh).unwrap();
            let i = iou(&a, &b).unwrap();
            let g = giou(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&i));
            prop_assert!(g > -1.0 && g <= i + 1e-12);
            prop_assert_eq!(i, iou(&b, &a).unwrap());
            prop_assert_eq!(g, giou(&b, &a).unwrap());
        }

        #[test]
        fn box_param_round_trips(
            x in 0.0..990.0f64, y in 0.0..990.0f64,
            w in 0.5..200.0f64, h in 0.5..200.0f64,
        ) {
            let b = BBox::new(x, y, x + w, y + h).unwrap();
            let d = BoxParam::encode(&b).decode();
            prop_assert!((d.x0 - b.x0).abs() < 1e-9);
            prop_assert!((d.y0 - b.y0).abs() < 1e-9);
            prop_assert!((d.x1 - b.x1).abs() < 1e-9);
            prop_assert!((d.y1 - b.y1).abs() < 1e-9);
        }
    }
}
