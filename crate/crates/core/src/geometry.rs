//! Box representations and overlap measures.
//!
//! Coordinates are normalized image units. The center form (`BoxCcwh`) is what
//! the losses and the refinement model operate on; the corner form (`BoxXyxy`)
//! is what overlap computations use.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest width or height a box may have after clipping.
pub const MIN_BOX_DIM: f64 = 1e-6;

/// Center-parameterized box: `(cx, cy, w, h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxCcwh {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

/// Corner-parameterized box: `(x1, y1, x2, y2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxXyxy {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoxCcwh {
    pub const fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    /// Checked constructor: all fields finite, positive dims.
    pub fn try_new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let b = Self::new(cx, cy, w, h);
        if b.is_valid() {
            Ok(b)
        } else {
            Err(Error::InvalidBox(format!("{b:?}")))
        }
    }

    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite()) && self.w > 0.0 && self.h > 0.0
    }

    /// Coordinates in `[cx, cy, w, h]` order, the slot order used by gradients.
    pub fn to_array(self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_xyxy(self) -> BoxXyxy {
        ccwh_to_xyxy(self)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Multiplies all four fields by `s`.
    pub fn scaled(self, s: f64) -> Self {
        Self::new(self.cx * s, self.cy * s, self.w * s, self.h * s)
    }

    /// Floors width and height at `min_dim`.
    pub fn clip_dims(self, min_dim: f64) -> Self {
        Self::new(self.cx, self.cy, self.w.max(min_dim), self.h.max(min_dim))
    }
}

impl BoxXyxy {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn is_valid(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2]
            .iter()
            .all(|v| v.is_finite())
            && self.x1 < self.x2
            && self.y1 < self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn to_ccwh(self) -> BoxCcwh {
        xyxy_to_ccwh(self)
    }

    pub fn scaled(self, s: f64) -> Self {
        Self::new(self.x1 * s, self.y1 * s, self.x2 * s, self.y2 * s)
    }

    pub fn translated(self, dx: f64, dy: f64) -> Self {
        Self::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }
}

pub fn ccwh_to_xyxy(b: BoxCcwh) -> BoxXyxy {
    let hw = 0.5 * b.w;
    let hh = 0.5 * b.h;
    BoxXyxy::new(b.cx - hw, b.cy - hh, b.cx + hw, b.cy + hh)
}

pub fn xyxy_to_ccwh(b: BoxXyxy) -> BoxCcwh {
    BoxCcwh::new(
        0.5 * (b.x1 + b.x2),
        0.5 * (b.y1 + b.y2),
        b.x2 - b.x1,
        b.y2 - b.y1,
    )
}

/// Intersection, union and enclosing-box areas of a pair.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Overlap {
    pub inter: f64,
    pub union: f64,
    pub enclosing: f64,
}

pub(crate) fn overlap(a: &BoxXyxy, b: &BoxXyxy) -> Overlap {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    let cw = a.x2.max(b.x2) - a.x1.min(b.x1);
    let ch = a.y2.max(b.y2) - a.y1.min(b.y1);
    Overlap {
        inter,
        union,
        enclosing: cw * ch,
    }
}

/// Intersection over union, in `[0, 1]`.
pub fn iou(a: &BoxXyxy, b: &BoxXyxy) -> f64 {
    let o = overlap(a, b);
    o.inter / o.union
}

/// Generalized IoU, in `[-1, 1]`: IoU minus the fraction of the enclosing
/// box not covered by the union.
pub fn giou(a: &BoxXyxy, b: &BoxXyxy) -> f64 {
    let o = overlap(a, b);
    // rounding can leave the enclosing area a hair under the union
    o.inter / o.union - (o.enclosing - o.union).max(0.0) / o.enclosing
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Area oracle: counts grid-cell centers at resolution `step` covered by a
    /// predicate over the bounding region.
    fn raster_area(
        region: &BoxXyxy,
        step: f64,
        inside: impl Fn(f64, f64) -> bool,
    ) -> f64 {
        let nx = (region.width() / step).round() as usize;
        let ny = (region.height() / step).round() as usize;
        let mut count = 0usize;
        for i in 0..nx {
            let x = region.x1 + (i as f64 + 0.5) * step;
            for j in 0..ny {
                let y = region.y1 + (j as f64 + 0.5) * step;
                if inside(x, y) {
                    count += 1;
                }
            }
        }
        count as f64 * step * step
    }

    fn contains(b: &BoxXyxy, x: f64, y: f64) -> bool {
        x >= b.x1 && x <= b.x2 && y >= b.y1 && y <= b.y2
    }

    fn raster_iou_giou(a: &BoxXyxy, b: &BoxXyxy) -> (f64, f64) {
        let region = BoxXyxy::new(
            a.x1.min(b.x1),
            a.y1.min(b.y1),
            a.x2.max(b.x2),
            a.y2.max(b.y2),
        );
        let step = 1e-3;
        let inter = raster_area(&region, step, |x, y| contains(a, x, y) && contains(b, x, y));
        let union = raster_area(&region, step, |x, y| contains(a, x, y) || contains(b, x, y));
        let encl = region.area();
        (inter / union, inter / union - (encl - union) / encl)
    }

    #[test]
    fn conversion_examples() {
        let b = ccwh_to_xyxy(BoxCcwh::new(0.5, 0.5, 1.0, 1.0));
        assert_eq!(b, BoxXyxy::new(0.0, 0.0, 1.0, 1.0));
        let b = ccwh_to_xyxy(BoxCcwh::new(0.2, 0.3, 0.2, 0.1));
        assert_abs_diff_eq!(b.x1, 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(b.y1, 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(b.x2, 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(b.y2, 0.35, epsilon = 1e-15);
    }

    #[test]
    fn round_trip_random_boxes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let x1: f64 = rng.random_range(0.0..0.9);
            let y1: f64 = rng.random_range(0.0..0.9);
            let b = BoxXyxy::new(
                x1,
                y1,
                x1 + rng.random_range(1e-3..0.1),
                y1 + rng.random_range(1e-3..0.1),
            );
            let back = b.to_ccwh().to_xyxy();
            for (u, v) in [(b.x1, back.x1), (b.y1, back.y1), (b.x2, back.x2), (b.y2, back.y2)] {
                worst = worst.max((u - v).abs());
            }
        }
        assert!(worst < 1e-12, "max deviation {worst}");
    }

    #[test]
    fn try_new_rejects_degenerate() {
        assert!(BoxCcwh::try_new(0.5, 0.5, 0.0, 0.1).is_err());
        assert!(BoxCcwh::try_new(0.5, f64::NAN, 0.1, 0.1).is_err());
        assert!(BoxCcwh::try_new(0.5, 0.5, 0.1, 0.1).is_ok());
    }

    #[test]
    fn iou_examples() {
        let a = BoxXyxy::new(0.0, 0.0, 1.0, 1.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BoxXyxy::new(2.0, 0.0, 3.0, 1.0)), 0.0);
        let v = iou(&BoxXyxy::new(0.0, 0.0, 2.0, 2.0), &BoxXyxy::new(1.0, 1.0, 3.0, 3.0));
        assert_abs_diff_eq!(v, 1.0 / 7.0, epsilon = 1e-15);
    }

    #[test]
    fn giou_examples() {
        let a = BoxXyxy::new(0.0, 0.0, 1.0, 1.0);
        assert_eq!(giou(&a, &a), 1.0);
        let v = giou(&a, &BoxXyxy::new(2.0, 0.0, 3.0, 1.0));
        assert_abs_diff_eq!(v, -1.0 / 3.0, epsilon = 1e-15);
        let v = giou(&BoxXyxy::new(0.0, 0.0, 2.0, 2.0), &BoxXyxy::new(1.0, 1.0, 3.0, 3.0));
        assert_abs_diff_eq!(v, 1.0 / 7.0 - 2.0 / 9.0, epsilon = 1e-15);
    }

    #[test]
    fn closed_forms_agree_with_raster_oracle() {
        let cases = [
            (BoxXyxy::new(0.0, 0.0, 2.0, 2.0), BoxXyxy::new(1.0, 1.0, 3.0, 3.0)),
            (BoxXyxy::new(0.0, 0.0, 1.0, 1.0), BoxXyxy::new(2.0, 0.0, 3.0, 1.0)),
            (BoxXyxy::new(0.1, 0.2, 0.7, 0.5), BoxXyxy::new(0.3, 0.1, 0.9, 0.8)),
        ];
        for (a, b) in cases {
            let (ri, rg) = raster_iou_giou(&a, &b);
            assert_abs_diff_eq!(iou(&a, &b), ri, epsilon = 5e-3);
            assert_abs_diff_eq!(giou(&a, &b), rg, epsilon = 5e-3);
        }
    }

    #[test]
    fn scale_and_translation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let mk = |rng: &mut ChaCha8Rng| {
                let x1: f64 = rng.random_range(0.0..0.8);
                let y1: f64 = rng.random_range(0.0..0.8);
                BoxXyxy::new(x1, y1, x1 + rng.random_range(0.01..0.3), y1 + rng.random_range(0.01..0.3))
            };
            let a = mk(&mut rng);
            let b = mk(&mut rng);
            let (i0, g0) = (iou(&a, &b), giou(&a, &b));
            for s in [0.5, 2.0, 10.0] {
                assert_abs_diff_eq!(iou(&a.scaled(s), &b.scaled(s)), i0, epsilon = 1e-9);
                assert_abs_diff_eq!(giou(&a.scaled(s), &b.scaled(s)), g0, epsilon = 1e-9);
            }
            let (dx, dy) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            assert_abs_diff_eq!(iou(&a.translated(dx, dy), &b.translated(dx, dy)), i0, epsilon = 1e-9);
            assert_abs_diff_eq!(giou(&a.translated(dx, dy), &b.translated(dx, dy)), g0, epsilon = 1e-9);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_box() -> impl Strategy<Value = BoxXyxy> {
            (0.0f64..1.0, 0.0f64..1.0, 1e-3f64..0.5, 1e-3f64..0.5)
                .prop_map(|(x, y, w, h)| BoxXyxy::new(x, y, x + w, y + h))
        }

        proptest! {
            #[test]
            fn symmetric(a in arb_box(), b in arb_box()) {
                prop_assert_eq!(iou(&a, &b), iou(&b, &a));
                prop_assert_eq!(giou(&a, &b), giou(&b, &a));
            }

            #[test]
            fn giou_bounded_by_iou(a in arb_box(), b in arb_box()) {
                let (i, g) = (iou(&a, &b), giou(&a, &b));
                prop_assert!(g <= i);
                prop_assert!((0.0..=1.0).contains(&i));
                prop_assert!((-1.0..=1.0).contains(&g));
            }
        }
    }
}
