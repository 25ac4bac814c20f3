//! Axis-aligned boxes, IoU / GIoU with analytic gradients, L1 box distance
//! and greedy NMS.
//!
//! Gradients are returned as `[f64; 4]` in the coordinate order of the box
//! type they refer to. Zero-area configurations define IoU as 0 so that
//! collapsed predictions never produce NaN.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Corner-form box `(x1, y1, x2, y2)` in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxXYXY {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

/// Center-form box `(cx, cy, w, h)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxCXCYWH {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoxXYXY {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = Self { x1, y1, x2, y2 };
        if !b.is_valid() {
            return Err(Error::Validation(alloc::format!("invalid corner box {b:?}")));
        }
        Ok(b)
    }

    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite()) && self.x1 <= self.x2 && self.y1 <= self.y2
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1).max(0.0) * (self.y2 - self.y1).max(0.0)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            x1: a[0],
            y1: a[1],
            x2: a[2],
            y2: a[3],
        }
    }

    pub fn to_cxcywh(&self) -> BoxCXCYWH {
        BoxCXCYWH {
            cx: 0.5 * (self.x1 + self.x2),
            cy: 0.5 * (self.y1 + self.y2),
            w: self.x2 - self.x1,
            h: self.y2 - self.y1,
        }
    }
}

impl BoxCXCYWH {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let b = Self { cx, cy, w, h };
        if !b.is_valid() {
            return Err(Error::Validation(alloc::format!("invalid center box {b:?}")));
        }
        Ok(b)
    }

    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite()) && self.w >= 0.0 && self.h >= 0.0
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            cx: a[0],
            cy: a[1],
            w: a[2],
            h: a[3],
        }
    }

    pub fn to_xyxy(&self) -> BoxXYXY {
        BoxXYXY {
            x1: self.cx - 0.5 * self.w,
            y1: self.cy - 0.5 * self.h,
            x2: self.cx + 0.5 * self.w,
            y2: self.cy + 0.5 * self.h,
        }
    }
}

/// Chains a gradient w.r.t. corner coordinates back to center coordinates.
pub fn xyxy_grad_to_cxcywh(g: [f64; 4]) -> [f64; 4] {
    [g[0] + g[2], g[1] + g[3], 0.5 * (g[2] - g[0]), 0.5 * (g[3] - g[1])]
}

/// Shared pieces of IoU and GIoU, with the partial derivatives needed to
/// differentiate both.
struct Overlap {
    inter: f64,
    union: f64,
    hull: f64,
    d_inter_a: [f64; 4],
    d_inter_b: [f64; 4],
    d_area_a: [f64; 4],
    d_area_b: [f64; 4],
    d_hull_a: [f64; 4],
    d_hull_b: [f64; 4],
}

/// Derivative of `min(p, q)` w.r.t. `(p, q)`; ties go to the first argument.
#[inline]
fn dmin(p: f64, q: f64) -> (f64, f64) {
    if p <= q {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    }
}

#[inline]
fn dmax(p: f64, q: f64) -> (f64, f64) {
    if p >= q {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    }
}

fn overlap(a: &BoxXYXY, b: &BoxXYXY) -> Overlap {
    let (aw, ah) = (a.x2 - a.x1, a.y2 - a.y1);
    let (bw, bh) = (b.x2 - b.x1, b.y2 - b.y1);
    let area_a = aw * ah;
    let area_b = bw * bh;
    let d_area_a = [-ah, -aw, ah, aw];
    let d_area_b = [-bh, -bw, bh, bw];

    let iw = a.x2.min(b.x2) - a.x1.max(b.x1);
    let ih = a.y2.min(b.y2) - a.y1.max(b.y1);
    let mut d_inter_a = [0.0; 4];
    let mut d_inter_b = [0.0; 4];
    let inter = if iw > 0.0 && ih > 0.0 {
        let (r_a, r_b) = dmin(a.x2, b.x2);
        let (l_a, l_b) = dmax(a.x1, b.x1);
        let (t_a, t_b) = dmin(a.y2, b.y2);
        let (u_a, u_b) = dmax(a.y1, b.y1);
        d_inter_a = [-l_a * ih, -u_a * iw, r_a * ih, t_a * iw];
        d_inter_b = [-l_b * ih, -u_b * iw, r_b * ih, t_b * iw];
        iw * ih
    } else {
        0.0
    };

    let cw = a.x2.max(b.x2) - a.x1.min(b.x1);
    let ch = a.y2.max(b.y2) - a.y1.min(b.y1);
    let (r_a, r_b) = dmax(a.x2, b.x2);
    let (l_a, l_b) = dmin(a.x1, b.x1);
    let (t_a, t_b) = dmax(a.y2, b.y2);
    let (u_a, u_b) = dmin(a.y1, b.y1);
    let d_hull_a = [-l_a * ch, -u_a * cw, r_a * ch, t_a * cw];
    let d_hull_b = [-l_b * ch, -u_b * cw, r_b * ch, t_b * cw];

    Overlap {
        inter,
        union: area_a + area_b - inter,
        hull: cw * ch,
        d_inter_a,
        d_inter_b,
        d_area_a,
        d_area_b,
        d_hull_a,
        d_hull_b,
    }
}

pub fn iou(a: &BoxXYXY, b: &BoxXYXY) -> f64 {
    iou_with_grad(a, b).0
}

/// IoU and its gradients w.r.t. the corner coordinates of `a` and `b`.
pub fn iou_with_grad(a: &BoxXYXY, b: &BoxXYXY) -> (f64, [f64; 4], [f64; 4]) {
    let o = overlap(a, b);
    if o.union <= 0.0 {
        return (0.0, [0.0; 4], [0.0; 4]);
    }
    let u = o.union;
    let i = o.inter;
    // d(I/U) = dI (1/U + I/U²) − (dAa + dAb) I/U²
    let ci = 1.0 / u + i / (u * u);
    let ca = -i / (u * u);
    let ga = core::array::from_fn(|k| ci * o.d_inter_a[k] + ca * o.d_area_a[k]);
    let gb = core::array::from_fn(|k| ci * o.d_inter_b[k] + ca * o.d_area_b[k]);
    ((i / u).clamp(0.0, 1.0), ga, gb)
}

pub fn giou(a: &BoxXYXY, b: &BoxXYXY) -> f64 {
    giou_with_grad(a, b).0
}

/// Generalized IoU, `IoU − (hull − union)/hull`, with gradients.
pub fn giou_with_grad(a: &BoxXYXY, b: &BoxXYXY) -> (f64, [f64; 4], [f64; 4]) {
    let o = overlap(a, b);
    if o.union <= 0.0 || o.hull <= 0.0 {
        return (0.0, [0.0; 4], [0.0; 4]);
    }
    let (i, u, c) = (o.inter, o.union, o.hull);
    let value = i / u - (c - u) / c;
    // giou = I/U − 1 + U/C with U = Aa + Ab − I
    let ci = 1.0 / u + i / (u * u) - 1.0 / c;
    let ca = -i / (u * u) + 1.0 / c;
    let cc = -u / (c * c);
    let ga = core::array::from_fn(|k| ci * o.d_inter_a[k] + ca * o.d_area_a[k] + cc * o.d_hull_a[k]);
    let gb = core::array::from_fn(|k| ci * o.d_inter_b[k] + ca * o.d_area_b[k] + cc * o.d_hull_b[k]);
    (value, ga, gb)
}

/// Sum of absolute center-form differences and the subgradient w.r.t. `a`
/// (`sign(0) = 0`). The gradient w.r.t. `b` is its negation.
pub fn l1_box(a: &BoxCXCYWH, b: &BoxCXCYWH) -> (f64, [f64; 4]) {
    let pa = a.to_array();
    let pb = b.to_array();
    let mut grad = [0.0; 4];
    let mut sum = 0.0;
    for k in 0..4 {
        let d = pa[k] - pb[k];
        sum += d.abs();
        grad[k] = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
    }
    (sum, grad)
}

/// Greedy non-maximum suppression.
///
/// Returns kept indices in descending score order. Equal scores are visited
/// in ascending original index. A box is suppressed when its IoU with an
/// already kept box is strictly greater than `iou_threshold`.
pub fn nms(boxes: &[(BoxXYXY, f64)], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| boxes[j].1.total_cmp(&boxes[i].1).then(i.cmp(&j)));
    let mut kept: Vec<usize> = Vec::new();
    for idx in order {
        let b = &boxes[idx].0;
        if kept.iter().all(|&k| iou(&boxes[k].0, b) <= iou_threshold) {
            kept.push(idx);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_check, Tensor2D};
    use proptest::prelude::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoxXYXY {
        BoxXYXY::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn iou_reference_cases() {
        let a = bx(0.1, 0.1, 0.4, 0.5);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(0.6, 0.6, 0.9, 0.9)), 0.0);
        // [0,0,2,2] vs [1,0,3,2] scaled by 1/4: intersection 2, union 6
        let v = iou(&bx(0.0, 0.0, 0.5, 0.5), &bx(0.25, 0.0, 0.75, 0.5));
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_boxes_have_zero_iou() {
        let p = bx(0.3, 0.3, 0.3, 0.3);
        assert_eq!(iou(&p, &p), 0.0);
        assert_eq!(giou(&p, &p), 0.0);
        let (_, ga, gb) = giou_with_grad(&p, &p);
        assert_eq!(ga, [0.0; 4]);
        assert_eq!(gb, [0.0; 4]);
    }

    #[test]
    fn giou_reference_cases() {
        let a = bx(0.2, 0.2, 0.6, 0.7);
        assert_eq!(giou(&a, &a), 1.0);
        // [0,0,1,1] vs [2,0,3,1]: IoU 0, hull 3, union 2
        let v = giou(&bx(0.0, 0.0, 0.25, 0.25), &bx(0.5, 0.0, 0.75, 0.25));
        assert!((v + 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn invalid_boxes_are_rejected() {
        assert!(BoxXYXY::new(0.5, 0.0, 0.4, 1.0).is_err());
        assert!(BoxCXCYWH::new(0.5, 0.5, -0.1, 0.2).is_err());
        assert!(BoxCXCYWH::new(f64::NAN, 0.5, 0.1, 0.2).is_err());
    }

    #[test]
    fn l1_reference_cases() {
        let a = BoxCXCYWH::new(0.5, 0.5, 0.2, 0.3).unwrap();
        assert_eq!(l1_box(&a, &a), (0.0, [0.0; 4]));
        let b = BoxCXCYWH::new(0.4, 0.5, 0.2, 0.3).unwrap();
        let (v, g) = l1_box(&a, &b);
        assert!((v - 0.1).abs() < 1e-15);
        assert_eq!(g, [1.0, 0.0, 0.0, 0.0]);
    }

    fn check_box_grad(f: impl Fn(&BoxXYXY, &BoxXYXY) -> f64, a: BoxXYXY, b: BoxXYXY, ga: [f64; 4], gb: [f64; 4]) {
        let xa = Tensor2D::row_vector(&a.to_array());
        let xb = Tensor2D::row_vector(&b.to_array());
        let to_box = |t: &Tensor2D| BoxXYXY::from_array([t.get(0, 0), t.get(0, 1), t.get(0, 2), t.get(0, 3)]);
        let ea = finite_diff_check(|t| f(&to_box(t), &b), &xa, &Tensor2D::row_vector(&ga), 1e-5).unwrap();
        let eb = finite_diff_check(|t| f(&a, &to_box(t)), &xb, &Tensor2D::row_vector(&gb), 1e-5).unwrap();
        assert!(ea < 1e-4 && eb < 1e-4, "{ea} {eb} for {a:?} {b:?}");
    }

    fn well_separated(a: &BoxXYXY, b: &BoxXYXY) -> bool {
        let xs = [a.x1, a.x2, b.x1, b.x2];
        let ys = [a.y1, a.y2, b.y1, b.y2];
        let apart = |v: [f64; 4]| (0..4).all(|i| (0..4).all(|j| i == j || (v[i] - v[j]).abs() > 1e-3));
        apart(xs) && apart(ys)
    }

    proptest! {
        #[test]
        fn iou_giou_bounds_and_symmetry(
            ax in 0.0..0.8f64, ay in 0.0..0.8f64, aw in 0.0..0.5f64, ah in 0.0..0.5f64,
            bx_ in 0.0..0.8f64, by in 0.0..0.8f64, bw in 0.0..0.5f64, bh in 0.0..0.5f64,
        ) {
            let a = bx(ax, ay, ax + aw, ay + ah);
            let b = bx(bx_, by, bx_ + bw, by + bh);
            let i = iou(&a, &b);
            let g = giou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&i));
            prop_assert!(g <= i + 1e-15);
            prop_assert!(g > -1.0 - 1e-15);
            prop_assert_eq!(i, iou(&b, &a));
            prop_assert!((g - giou(&b, &a)).abs() < 1e-15);
        }

        #[test]
        fn giou_equals_iou_when_hull_is_union(
            ax in 0.0..0.5f64, ay in 0.0..0.5f64, aw in 0.1..0.5f64, ah in 0.1..0.5f64,
            fx in 0.0..1.0f64, fy in 0.0..1.0f64, sw in 0.1..1.0f64, sh in 0.1..1.0f64,
        ) {
            let a = bx(ax, ay, ax + aw, ay + ah);
            let (iw, ih) = (aw * sw, ah * sh);
            let x1 = ax + fx * (aw - iw);
            let y1 = ay + fy * (ah - ih);
            let inner = bx(x1, y1, x1 + iw, y1 + ih);
            prop_assert!((giou(&a, &inner) - iou(&a, &inner)).abs() < 1e-12);
        }

        #[test]
        fn center_form_round_trip(cx in 0.0..1.0f64, cy in 0.0..1.0f64, w in 0.0..1.0f64, h in 0.0..1.0f64) {
            let b = BoxCXCYWH::new(cx, cy, w, h).unwrap();
            let r = b.to_xyxy().to_cxcywh();
            for (p, q) in b.to_array().iter().zip(r.to_array()) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn iou_and_giou_gradients_match_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let mut checked = 0;
        while checked < 40 {
            let mut mk = || {
                let x = rng.random_range(0.0..0.6);
                let y = rng.random_range(0.0..0.6);
                bx(x, y, x + rng.random_range(0.05..0.4), y + rng.random_range(0.05..0.4))
            };
            let (a, b) = (mk(), mk());
            if !well_separated(&a, &b) {
                continue;
            }
            let (_, ga, gb) = iou_with_grad(&a, &b);
            check_box_grad(iou, a, b, ga, gb);
            let (_, ga, gb) = giou_with_grad(&a, &b);
            check_box_grad(giou, a, b, ga, gb);
            checked += 1;
        }
    }

    #[test]
    fn center_form_chain_rule() {
        let a = BoxCXCYWH::new(0.4, 0.45, 0.3, 0.2).unwrap();
        let b = BoxCXCYWH::new(0.5, 0.5, 0.25, 0.35).unwrap();
        let (_, ga, _) = giou_with_grad(&a.to_xyxy(), &b.to_xyxy());
        let gc = xyxy_grad_to_cxcywh(ga);
        let x = Tensor2D::row_vector(&a.to_array());
        let f = |t: &Tensor2D| {
            let p = BoxCXCYWH::from_array([t.get(0, 0), t.get(0, 1), t.get(0, 2), t.get(0, 3)]);
            giou(&p.to_xyxy(), &b.to_xyxy())
        };
        assert!(finite_diff_check(f, &x, &Tensor2D::row_vector(&gc), 1e-5).unwrap() < 1e-4);
    }

    #[test]
    fn nms_reference_cases() {
        let a = bx(0.0, 0.0, 0.4, 0.4);
        assert_eq!(nms(&[(a, 0.3)], 0.5), vec![0]);
        assert_eq!(nms(&[(a, 0.8), (a, 0.9)], 0.5), vec![1]);
        // B overlaps A at IoU 0.6: widths 0.4 and shift s with (0.4-s)/(0.4+s) = 0.6 → s = 0.1
        let b = bx(0.1, 0.0, 0.5, 0.4);
        assert!((iou(&a, &b) - 0.6).abs() < 1e-12);
        let c = bx(0.7, 0.7, 0.9, 0.9);
        assert_eq!(nms(&[(a, 0.9), (b, 0.8), (c, 0.7)], 0.5), vec![0, 2]);
        // equal scores: lower index first
        assert_eq!(nms(&[(c, 0.5), (a, 0.5)], 0.5), vec![0, 1]);
    }

    proptest! {
        #[test]
        fn nms_output_properties(raw in proptest::collection::vec((0.0..0.7f64, 0.0..0.7f64, 0.05..0.3f64, 0.05..0.3f64, 0.0..1.0f64), 1..25), thr in 0.1..0.9f64) {
            let boxes: Vec<(BoxXYXY, f64)> = raw.iter().map(|&(x, y, w, h, s)| (bx(x, y, x + w, y + h), s)).collect();
            let kept = nms(&boxes, thr);
            prop_assert!(!kept.is_empty());
            for w in kept.windows(2) {
                prop_assert!(boxes[w[0]].1 >= boxes[w[1]].1);
            }
            for (i, &p) in kept.iter().enumerate() {
                prop_assert!(p < boxes.len());
                for &q in &kept[i + 1..] {
                    prop_assert!(iou(&boxes[p].0, &boxes[q].0) <= thr);
                }
            }
        }
    }
}
