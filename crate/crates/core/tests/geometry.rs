use dds_core::geometry::{relation_region, BBox, RegionMode};
use dds_core::Error;
use proptest::prelude::*;

fn b(cx: f64, cy: f64, w: f64, h: f64) -> BBox {
    BBox::new(cx, cy, w, h).unwrap()
}

// Independent corner arithmetic.
fn corners(x: &BBox) -> (f64, f64, f64, f64) {
    let [cx, cy, w, h] = x.to_array();
    (cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
}

fn oracle_inter(a: &BBox, c: &BBox) -> f64 {
    let (ax0, ay0, ax1, ay1) = corners(a);
    let (bx0, by0, bx1, by1) = corners(c);
    let w = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let h = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    w * h
}

fn oracle_iou(a: &BBox, c: &BBox) -> f64 {
    let i = oracle_inter(a, c);
    let u = a.w() * a.h() + c.w() * c.h() - i;
    i / u
}

fn oracle_giou(a: &BBox, c: &BBox) -> f64 {
    let (ax0, ay0, ax1, ay1) = corners(a);
    let (bx0, by0, bx1, by1) = corners(c);
    let enclose = (ax1.max(bx1) - ax0.min(bx0)) * (ay1.max(by1) - ay0.min(by0));
    let i = oracle_inter(a, c);
    let u = a.w() * a.h() + c.w() * c.h() - i;
    i / u - (enclose - u) / enclose
}

#[test]
fn iou_identity_and_disjoint() {
    let a = b(0.3, 0.4, 0.2, 0.1);
    assert_eq!(a.iou(&a), 1.0);
    assert_eq!(b(0.1, 0.1, 0.1, 0.1).iou(&b(0.9, 0.9, 0.1, 0.1)), 0.0);
}

#[test]
fn iou_matches_corner_oracle() {
    let a = b(0.25, 0.25, 0.5, 0.5);
    let c = b(0.5, 0.5, 0.5, 0.5);
    // overlap [0.25,0.5]^2 = 1/16, union 2/4 - 1/16 = 7/16
    assert!((a.iou(&c) - 1.0 / 7.0).abs() < 1e-15);
    assert!((a.iou(&c) - oracle_iou(&a, &c)).abs() < 1e-15);
}

#[test]
fn giou_examples() {
    let a = b(0.3, 0.6, 0.2, 0.4);
    assert_eq!(a.giou(&a), 1.0);
    // side by side, union fills the enclosing box
    let l = b(0.25, 0.5, 0.5, 1.0);
    let r = b(0.75, 0.5, 0.5, 1.0);
    assert!(l.giou(&r).abs() < 1e-15);
    let p = b(0.05, 0.05, 0.1, 0.1);
    let q = b(0.95, 0.95, 0.1, 0.1);
    let want = oracle_giou(&p, &q);
    assert!(want < -0.9);
    assert!((p.giou(&q) - want).abs() < 1e-12);
}

#[test]
fn degenerate_boxes_are_rejected() {
    assert!(matches!(BBox::new(0.5, 0.5, 0.0, 0.2), Err(Error::InvalidInput(_))));
    assert!(matches!(BBox::new(0.5, 0.5, 0.2, -0.1), Err(Error::InvalidInput(_))));
    assert!(BBox::new(f64::NAN, 0.5, 0.2, 0.2).is_err());
}

#[test]
fn union_box_examples() {
    let outer = b(0.5, 0.5, 0.6, 0.6);
    let inner = b(0.5, 0.5, 0.2, 0.2);
    assert_eq!(inner.union_box(&outer), outer);
    assert_eq!(inner.union_box(&inner), inner);
    let tl = b(0.1, 0.1, 0.2, 0.2);
    let br = b(0.8, 0.7, 0.2, 0.2);
    let u = tl.union_box(&br);
    let [x0, y0, x1, y1] = u.corners();
    assert!((x0 - 0.0).abs() < 1e-15 && (y0 - 0.0).abs() < 1e-15);
    assert!((x1 - 0.9).abs() < 1e-15 && (y1 - 0.8).abs() < 1e-15);
}

#[test]
fn relation_region_modes() {
    let s = b(0.4, 0.4, 0.4, 0.4);
    let o = b(0.6, 0.6, 0.4, 0.4);
    assert_eq!(relation_region(&s, &o, RegionMode::Union).unwrap(), s.union_box(&o));
    let mix0 = relation_region(&s, &o, RegionMode::Mixture { theta: 0.0 }).unwrap();
    assert_eq!(Some(mix0), s.intersection_box(&o));
    let [x0, y0, x1, y1] = mix0.corners();
    assert!((x0 - 0.4).abs() < 1e-12 && (y0 - 0.4).abs() < 1e-12);
    assert!((x1 - 0.6).abs() < 1e-12 && (y1 - 0.6).abs() < 1e-12);

    // IoU 0.2 exactly: two unit-height strips overlapping by 1/3 of a width
    let p = b(0.3, 0.5, 0.3, 0.2);
    let q = b(0.5, 0.5, 0.3, 0.2);
    let iou = oracle_iou(&p, &q);
    assert!((iou - 0.2).abs() < 1e-12);
    let r = relation_region(&p, &q, RegionMode::Mixture { theta: 0.5 }).unwrap();
    assert_eq!(r, p.union_box(&q));
    assert!(relation_region(&p, &q, RegionMode::Mixture { theta: 1.0 }).is_err());
    assert!(relation_region(&p, &q, RegionMode::Mixture { theta: -0.1 }).is_err());
}

fn arb_box() -> impl Strategy<Value = BBox> {
    (0.0..=1.0f64, 0.0..=1.0f64, 1e-3..=1.0f64, 1e-3..=1.0f64).prop_map(|(cx, cy, w, h)| b(cx, cy, w, h))
}

/// Boxes lying inside the frame, as generated and clamped boxes do.
fn framed_box() -> impl Strategy<Value = BBox> {
    (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64).prop_filter_map("degenerate", |(a, b2, c, d)| {
        let (x0, x1) = (a.min(c), a.max(c));
        let (y0, y1) = (b2.min(d), b2.max(d));
        BBox::from_corners(x0, y0, x1, y1).ok().filter(|x| x.w() > 1e-6 && x.h() > 1e-6)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn symmetric_and_bounded(a in arb_box(), c in arb_box()) {
        prop_assert_eq!(a.iou(&c), c.iou(&a));
        prop_assert_eq!(a.giou(&c), c.giou(&a));
        prop_assert!(a.giou(&c) <= a.iou(&c));
        prop_assert!((0.0..=1.0).contains(&a.iou(&c)));
        prop_assert!(a.giou(&c) > -1.0 && a.giou(&c) <= 1.0);
        prop_assert!((a.iou(&c) - oracle_iou(&a, &c)).abs() < 1e-12);
        prop_assert!((a.giou(&c) - oracle_giou(&a, &c)).abs() < 1e-12);
    }

    #[test]
    fn union_contains_both(a in framed_box(), c in framed_box()) {
        let u = a.union_box(&c);
        prop_assert!(u.contains(&a) && u.contains(&c));
        prop_assert!(u.area() >= a.area().max(c.area()) - 1e-15);
    }

    #[test]
    fn mixture_branch_is_determined_by_iou(a in arb_box(), c in arb_box(), theta in 0.0..1.0f64) {
        let r = relation_region(&a, &c, RegionMode::Mixture { theta }).unwrap();
        if a.iou(&c) <= theta {
            prop_assert_eq!(r, a.union_box(&c));
        } else {
            prop_assert_eq!(Some(r), a.intersection_box(&c));
        }
    }

    #[test]
    fn corner_round_trip_within_an_ulp(a in arb_box()) {
        let [x0, y0, x1, y1] = a.corners();
        let back = BBox::from_corners(x0, y0, x1, y1).unwrap();
        for (p, q) in a.to_array().iter().zip(back.to_array()) {
            let ulp = f64::EPSILON * p.abs().max(1.0);
            prop_assert!((p - q).abs() <= 2.0 * ulp, "{p} vs {q}");
        }
    }
}
