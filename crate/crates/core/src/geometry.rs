//! Axis-aligned box algebra in normalized frame coordinates.
//!
//! Boxes are stored in center form `(cx, cy, w, h)`; the corner form
//! `(x0, y0, x1, y1)` is always derived from it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalized center-form bounding box.
///
/// Construction validates `0 <= cx, cy <= 1` and `0 < w, h <= 1`, so every
/// `BBox` value is non-degenerate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
}

/// Smallest extent accepted when saturating raw regression outputs.
const MIN_EXTENT: f64 = 1e-12;

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let finite = cx.is_finite() && cy.is_finite() && w.is_finite() && h.is_finite();
        if !finite {
            return Err(Error::invalid(format!(
                "non-finite box ({cx}, {cy}, {w}, {h})"
            )));
        }
        if !(w > 0.0 && h > 0.0) {
            return Err(Error::invalid(format!("degenerate box: w={w}, h={h}")));
        }
        if !(0.0..=1.0).contains(&cx) || !(0.0..=1.0).contains(&cy) || w > 1.0 || h > 1.0 {
            return Err(Error::invalid(format!(
                "box ({cx}, {cy}, {w}, {h}) outside the normalized frame"
            )));
        }
        Ok(BBox { cx, cy, w, h })
    }

    /// Builds a box from corner coordinates `x0 < x1`, `y0 < y1`.
    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        BBox::new((x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0)
    }

    /// Accepts raw sigmoid regression outputs, flooring the extents so an
    /// underflowed sigmoid never yields a degenerate box.
    pub fn from_raw(raw: [f64; 4]) -> Self {
        let sat = |v: f64| if v.is_nan() { 0.5 } else { v.clamp(0.0, 1.0) };
        BBox {
            cx: sat(raw[0]),
            cy: sat(raw[1]),
            w: sat(raw[2]).max(MIN_EXTENT),
            h: sat(raw[3]).max(MIN_EXTENT),
        }
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }
    pub fn cy(&self) -> f64 {
        self.cy
    }
    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    /// Corner view `[x0, y0, x1, y1]`.
    pub fn corners(&self) -> [f64; 4] {
        [
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        ]
    }

    /// Area from the corner coordinates, so that identical boxes give
    /// bit-identical intersection and area.
    pub fn area(&self) -> f64 {
        let [x0, y0, x1, y1] = self.corners();
        (x1 - x0) * (y1 - y0)
    }

    /// Clips the box to the unit frame. Model outputs go through this before
    /// any metric is computed.
    pub fn clamped(&self) -> BBox {
        let [x0, y0, x1, y1] = self.corners();
        let (x0, y0) = (x0.max(0.0), y0.max(0.0));
        let (x1, y1) = (x1.min(1.0), y1.min(1.0));
        BBox {
            cx: (x0 + x1) / 2.0,
            cy: (y0 + y1) / 2.0,
            w: (x1 - x0).max(MIN_EXTENT),
            h: (y1 - y0).max(MIN_EXTENT),
        }
    }

    /// True when `other` lies inside `self` (closed containment).
    pub fn contains(&self, other: &BBox) -> bool {
        let [ax0, ay0, ax1, ay1] = self.corners();
        let [bx0, by0, bx1, by1] = other.corners();
        ax0 <= bx0 && ay0 <= by0 && ax1 >= bx1 && ay1 >= by1
    }

    /// True when `other` lies strictly inside `self`.
    pub fn strictly_contains(&self, other: &BBox) -> bool {
        let [ax0, ay0, ax1, ay1] = self.corners();
        let [bx0, by0, bx1, by1] = other.corners();
        ax0 < bx0 && ay0 < by0 && ax1 > bx1 && ay1 > by1
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let [ax0, ay0, ax1, ay1] = self.corners();
        let [bx0, by0, bx1, by1] = other.corners();
        let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
        let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
        iw * ih
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        inter / union
    }

    /// Generalized IoU: IoU minus the fraction of the enclosing box not
    /// covered by the union. Range `(-1, 1]`.
    pub fn giou(&self, other: &BBox) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        let [ax0, ay0, ax1, ay1] = self.corners();
        let [bx0, by0, bx1, by1] = other.corners();
        let enclosing = (ax1.max(bx1) - ax0.min(bx0)) * (ay1.max(by1) - ay0.min(by0));
        inter / union - ((enclosing - union) / enclosing).max(0.0)
    }

    /// Smallest box containing both inputs.
    pub fn union_box(&self, other: &BBox) -> BBox {
        let [ax0, ay0, ax1, ay1] = self.corners();
        let [bx0, by0, bx1, by1] = other.corners();
        if self.contains(other) {
            return *self;
        }
        if other.contains(self) {
            return *other;
        }
        let (x0, y0, x1, y1) = (ax0.min(bx0), ay0.min(by0), ax1.max(bx1), ay1.max(by1));
        let mut u = BBox {
            cx: (x0 + x1) / 2.0,
            cy: (y0 + y1) / 2.0,
            w: (x1 - x0).min(1.0),
            h: (y1 - y0).min(1.0),
        };
        // the center form can lose an ulp at either corner
        for _ in 0..8 {
            if u.contains(self) && u.contains(other) {
                break;
            }
            u.w = u.w.next_up().min(1.0);
            u.h = u.h.next_up().min(1.0);
        }
        u
    }

    /// Overlap box, or `None` when the interiors are disjoint.
    pub fn intersection_box(&self, other: &BBox) -> Option<BBox> {
        let [ax0, ay0, ax1, ay1] = self.corners();
        let [bx0, by0, bx1, by1] = other.corners();
        let (x0, y0, x1, y1) = (ax0.max(bx0), ay0.max(by0), ax1.min(bx1), ay1.min(by1));
        if x1 <= x0 || y1 <= y0 {
            return None;
        }
        Some(BBox {
            cx: (x0 + x1) / 2.0,
            cy: (y0 + y1) / 2.0,
            w: x1 - x0,
            h: y1 - y0,
        })
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

/// How the ground-truth relation region of a subject/object pair is built.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RegionMode {
    #[default]
    Union,
    /// Intersection when the pair's IoU exceeds `theta`, union otherwise.
    Mixture { theta: f64 },
}

impl RegionMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RegionMode::Union => Ok(()),
            RegionMode::Mixture { theta } if (0.0..1.0).contains(&theta) => Ok(()),
            RegionMode::Mixture { theta } => Err(Error::invalid(format!(
                "mixture theta must lie in [0, 1), got {theta}"
            ))),
        }
    }
}

pub fn relation_region(sub: &BBox, obj: &BBox, mode: RegionMode) -> Result<BBox> {
    mode.validate()?;
    match mode {
        RegionMode::Union => Ok(sub.union_box(obj)),
        RegionMode::Mixture { theta } => {
            if sub.iou(obj) > theta {
                // iou > theta >= 0 implies a positive-area overlap
                sub.intersection_box(obj)
                    .ok_or_else(|| Error::invalid("positive IoU without overlap"))
            } else {
                Ok(sub.union_box(obj))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(cx: f64, cy: f64, w: f64, h: f64) -> BBox {
        BBox::new(cx, cy, w, h).unwrap()
    }

    /// Corner-arithmetic oracle kept separate from the implementation.
    fn corner_iou(a: [f64; 4], b: [f64; 4]) -> (f64, f64) {
        let ix = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
        let iy = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
        let inter = ix * iy;
        let area = |c: [f64; 4]| (c[2] - c[0]) * (c[3] - c[1]);
        let union = area(a) + area(b) - inter;
        let ex = a[2].max(b[2]) - a[0].min(b[0]);
        let ey = a[3].max(b[3]) - a[1].min(b[1]);
        (inter / union, inter / union - (ex * ey - union) / (ex * ey))
    }

    #[test]
    fn degenerate_boxes_are_rejected() {
        assert!(BBox::new(0.5, 0.5, 0.0, 0.2).is_err());
        assert!(BBox::new(0.5, 0.5, 0.2, -0.1).is_err());
        assert!(BBox::new(1.5, 0.5, 0.2, 0.2).is_err());
        assert!(BBox::new(f64::NAN, 0.5, 0.2, 0.2).is_err());
    }

    #[test]
    fn iou_identity_and_disjoint() {
        let a = b(0.3, 0.4, 0.2, 0.1);
        assert_eq!(a.iou(&a), 1.0);
        let left = b(0.1, 0.5, 0.1, 0.1);
        let right = b(0.9, 0.5, 0.1, 0.1);
        assert_eq!(left.iou(&right), 0.0);
    }

    #[test]
    fn iou_quarter_overlap_matches_corner_oracle() {
        let a = b(0.25, 0.25, 0.5, 0.5);
        let c = b(0.5, 0.5, 0.5, 0.5);
        let (oracle, _) = corner_iou([0.0, 0.0, 0.5, 0.5], [0.25, 0.25, 0.75, 0.75]);
        // 0.0625 / (0.25 + 0.25 - 0.0625)
        assert!((oracle - 1.0 / 7.0).abs() < 1e-15);
        assert!((a.iou(&c) - oracle).abs() < 1e-15);
    }

    #[test]
    fn giou_cases() {
        let a = b(0.3, 0.3, 0.2, 0.2);
        assert_eq!(a.giou(&a), 1.0);
        // touching boxes whose union exactly fills the enclosing box
        let l = b(0.25, 0.5, 0.5, 0.2);
        let r = b(0.75, 0.5, 0.5, 0.2);
        assert!(l.giou(&r).abs() < 1e-15);
        // far-separated small boxes
        let p = b(0.1, 0.1, 0.1, 0.1);
        let q = b(0.9, 0.9, 0.1, 0.1);
        let (_, oracle) = corner_iou(p.corners(), q.corners());
        // enclosing 0.9*0.9 = 0.81, union 0.02 => -(0.79/0.81)
        assert!((oracle + 0.79 / 0.81).abs() < 1e-12);
        assert!((p.giou(&q) - oracle).abs() < 1e-15);
        assert!(p.giou(&q) < 0.0);
    }

    #[test]
    fn union_box_cases() {
        let outer = b(0.5, 0.5, 0.6, 0.6);
        let inner = b(0.5, 0.45, 0.2, 0.1);
        assert_eq!(inner.union_box(&outer), outer);
        assert_eq!(outer.union_box(&outer), outer);
        let tl = b(0.1, 0.1, 0.2, 0.2);
        let br = b(0.8, 0.7, 0.2, 0.2);
        let u = tl.union_box(&br);
        let c = u.corners();
        let expected = [0.0, 0.0, 0.9, 0.8];
        for k in 0..4 {
            assert!((c[k] - expected[k]).abs() < 1e-15, "{c:?}");
        }
        assert!(u.contains(&tl) && u.contains(&br));
    }

    #[test]
    fn relation_region_modes() {
        let s = b(0.4, 0.4, 0.4, 0.4);
        let o = b(0.6, 0.6, 0.4, 0.4);
        assert_eq!(
            relation_region(&s, &o, RegionMode::Union).unwrap(),
            s.union_box(&o)
        );
        let mix0 = relation_region(&s, &o, RegionMode::Mixture { theta: 0.0 }).unwrap();
        let c = mix0.corners();
        let expected = [0.4, 0.4, 0.6, 0.6];
        for k in 0..4 {
            assert!((c[k] - expected[k]).abs() < 1e-12);
        }
        // IoU 0.2 by the corner oracle: choose boxes (0,0)-(0.5,0.5) and (0.25,0)-(0.75,0.5) shifted
        let p = BBox::from_corners(0.0, 0.0, 0.6, 0.5).unwrap();
        let q = BBox::from_corners(0.4, 0.0, 1.0, 0.5).unwrap();
        let (iou, _) = corner_iou(p.corners(), q.corners());
        assert!((iou - 0.2).abs() < 1e-12);
        let r = relation_region(&p, &q, RegionMode::Mixture { theta: 0.5 }).unwrap();
        assert_eq!(r, p.union_box(&q));
    }

    #[test]
    fn theta_out_of_range_is_rejected() {
        let s = b(0.4, 0.4, 0.4, 0.4);
        assert!(relation_region(&s, &s, RegionMode::Mixture { theta: 1.0 }).is_err());
        assert!(relation_region(&s, &s, RegionMode::Mixture { theta: -0.1 }).is_err());
    }

    #[test]
    fn clamping_keeps_boxes_in_frame() {
        let raw = BBox::from_raw([0.95, 0.05, 0.4, 0.3]);
        let c = raw.clamped().corners();
        assert!(c[0] >= 0.0 && c[1] >= 0.0 && c[2] <= 1.0 && c[3] <= 1.0);
        assert!((c[2] - 1.0).abs() < 1e-15 && c[1] == 0.0);
    }

    #[test]
    fn serde_validates() {
        let ok: BBox = serde_json::from_str("[0.5,0.5,0.2,0.2]").unwrap();
        assert_eq!(ok, b(0.5, 0.5, 0.2, 0.2));
        assert!(serde_json::from_str::<BBox>("[0.5,0.5,0.0,0.2]").is_err());
    }
}
