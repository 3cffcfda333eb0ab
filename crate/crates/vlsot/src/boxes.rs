//! Axis-aligned boxes `[x, y, w, h]`, top-left anchored, in pixels, and the
//! overlap measures built on them. Point containment uses the closed
//! interval on both axes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if ![x, y, w, h].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("bounding box has non-finite fields".to_string()));
        }
        if w < 0.0 || h < 0.0 {
            return Err(Error::invalid(format!("bounding box extent {w}x{h} is negative")));
        }
        Ok(BoundingBox { x, y, w, h })
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0.0
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// Geometric-mean side length `sqrt(w*h)`, the scalar target size.
    pub fn size(&self) -> f64 {
        (self.w * self.h).sqrt()
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn contains_point(&self, px: f64, py: f64) -> bool {
        px >= self.x && px <= self.right() && py >= self.y && py <= self.bottom()
    }

    /// Box from center coordinates and extents.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        BoundingBox::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }
}

pub fn intersection_area(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.right().min(b.right()) - a.x.max(b.x)).max(0.0);
    let ih = (a.bottom().min(b.bottom()) - a.y.max(b.y)).max(0.0);
    iw * ih
}

/// Intersection over union; zero when the union is empty.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Generalized IoU: `IoU - |C \ (A u B)| / |C|` with `C` the smallest
/// enclosing box. Range `(-1, 1]`; two zero-area boxes give 0 so training
/// stays finite.
pub fn giou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    let cw = a.right().max(b.right()) - a.x.min(b.x);
    let ch = a.bottom().max(b.bottom()) - a.y.min(b.y);
    let c_area = cw * ch;
    if c_area <= 0.0 {
        // Degenerate colinear boxes: no enclosing area to penalize.
        return if union > 0.0 { inter / union } else { 0.0 };
    }
    let iou = if union > 0.0 { inter / union } else { 0.0 };
    iou - (c_area - union) / c_area
}

/// Euclidean distance between box centers.
pub fn center_distance(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
}

/// Complete IoU: IoU minus a normalized center-distance penalty and an
/// aspect-consistency penalty, clamped to `[-1, 1]`. Used by the cAUC
/// metric only (never as a training loss).
pub fn ciou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iou_v = iou(a, b);
    let cw = a.right().max(b.right()) - a.x.min(b.x);
    let ch = a.bottom().max(b.bottom()) - a.y.min(b.y);
    let diag_sq = cw * cw + ch * ch;
    let center_sq = {
        let (ax, ay) = a.center();
        let (bx, by) = b.center();
        (ax - bx).powi(2) + (ay - by).powi(2)
    };
    let center_term = if diag_sq > 0.0 { center_sq / diag_sq } else { 0.0 };
    let aspect = |bx: &BoundingBox| {
        if bx.h > 0.0 {
            (bx.w / bx.h).atan()
        } else {
            std::f64::consts::FRAC_PI_2
        }
    };
    let v = 4.0 / (std::f64::consts::PI * std::f64::consts::PI)
        * (aspect(a) - aspect(b)).powi(2);
    let denom = (1.0 - iou_v) + v;
    let alpha = if denom > 0.0 { v / denom } else { 0.0 };
    (iou_v - center_term - alpha * v).clamp(-1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn giou_identical_is_one() {
        let a = bb(3.0, 4.0, 5.0, 6.0);
        assert_eq!(giou(&a, &a), 1.0);
    }

    #[test]
    fn giou_edge_adjacent_is_zero() {
        let a = bb(0.0, 0.0, 1.0, 1.0);
        let b = bb(1.0, 0.0, 1.0, 1.0);
        assert!((giou(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn giou_distant_hand_value() {
        let a = bb(0.0, 0.0, 1.0, 1.0);
        let b = bb(9.0, 0.0, 1.0, 1.0);
        assert!((giou(&a, &b) - (-0.8)).abs() < 1e-12);
    }

    #[test]
    fn giou_symmetry_and_bound() {
        let a = bb(1.0, 2.0, 3.5, 2.25);
        let b = bb(2.5, 0.5, 1.75, 4.0);
        assert_eq!(giou(&a, &b), giou(&b, &a));
        assert!(giou(&a, &b) <= iou(&a, &b));
        assert!(giou(&a, &b) > -1.0 && giou(&a, &b) <= 1.0);
    }

    #[test]
    fn giou_both_empty_is_zero() {
        let a = bb(1.0, 1.0, 0.0, 0.0);
        let b = bb(5.0, 5.0, 0.0, 0.0);
        assert_eq!(giou(&a, &b), 0.0);
    }

    #[test]
    fn negative_extent_rejected() {
        assert!(BoundingBox::new(0.0, 0.0, -1.0, 2.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, f64::NAN, 2.0).is_err());
    }

    #[test]
    fn ciou_identical_is_one_and_clamped() {
        let a = bb(0.0, 0.0, 4.0, 2.0);
        assert!((ciou(&a, &a) - 1.0).abs() < 1e-12);
        let far = bb(100.0, 100.0, 1.0, 8.0);
        let v = ciou(&a, &far);
        assert!((-1.0..=1.0).contains(&v));
        assert!(v < 0.0);
    }
}
