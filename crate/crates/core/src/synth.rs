//! Seeded synthetic scenes spanning the COCO size buckets, and noise models
//! that turn ground truth into initial predictions.
//!
//! Areas are expressed in virtual pixels of a square image with side
//! `image_side` (640 by default), i.e. `w * h * side^2` for a normalized box.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cocoeval::SizeBucket;
use crate::error::{Error, Result};
use crate::geometry::{BoxCcwh, MIN_BOX_DIM};

pub const DEFAULT_IMAGE_SIDE: f64 = 640.0;
pub const SMALL_MAX_AREA: f64 = 32.0 * 32.0;
pub const MEDIUM_MAX_AREA: f64 = 96.0 * 96.0;
pub const MAX_ASPECT: f64 = 3.0;

/// Deterministic RNG for a `(seed, stream)` pair.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: u64,
    pub gt: Vec<BoxCcwh>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Jitter scaled by each box's own width and height.
    Proportional,
    /// The same jitter magnitude for every box, whatever its size.
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    pub mode: NoiseMode,
    /// Center jitter as a fraction of the box dim (proportional mode).
    #[serde(default)]
    pub sigma_center: f64,
    /// Size jitter as a fraction of the box dim (proportional mode).
    #[serde(default)]
    pub sigma_size: f64,
    /// Jitter in normalized units (absolute mode).
    #[serde(default)]
    pub sigma_abs: f64,
}

impl NoiseModel {
    pub fn zero() -> Self {
        Self {
            mode: NoiseMode::Absolute,
            sigma_center: 0.0,
            sigma_size: 0.0,
            sigma_abs: 0.0,
        }
    }

    pub fn absolute(sigma: f64) -> Self {
        Self {
            sigma_abs: sigma,
            ..Self::zero()
        }
    }

    pub fn proportional(sigma_center: f64, sigma_size: f64) -> Self {
        Self {
            mode: NoiseMode::Proportional,
            sigma_center,
            sigma_size,
            sigma_abs: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma_center", self.sigma_center),
            ("sigma_size", self.sigma_size),
            ("sigma_abs", self.sigma_abs),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Half-open area range in virtual pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaRange {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeDistribution {
    /// Proportions of small, medium, large boxes.
    pub mix: [f64; 3],
    #[serde(default = "default_ranges")]
    pub ranges: [AreaRange; 3],
    #[serde(default = "default_side")]
    pub image_side: f64,
}

fn default_side() -> f64 {
    DEFAULT_IMAGE_SIDE
}

fn default_ranges() -> [AreaRange; 3] {
    [
        AreaRange { min: 100.0, max: SMALL_MAX_AREA },
        AreaRange { min: SMALL_MAX_AREA, max: MEDIUM_MAX_AREA },
        AreaRange { min: MEDIUM_MAX_AREA, max: 160.0 * 160.0 },
    ]
}

impl Default for SizeDistribution {
    fn default() -> Self {
        Self::with_mix([1.0 / 3.0; 3])
    }
}

impl SizeDistribution {
    pub fn with_mix(mix: [f64; 3]) -> Self {
        Self {
            mix,
            ranges: default_ranges(),
            image_side: DEFAULT_IMAGE_SIDE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let infeasible = |m: String| Err(Error::InfeasibleDistribution(m));
        if self.mix.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return infeasible(format!("mix entries must be >= 0: {:?}", self.mix));
        }
        if (self.mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return infeasible(format!("mix must sum to 1: {:?}", self.mix));
        }
        if !(self.image_side.is_finite() && self.image_side > 0.0) {
            return infeasible(format!("image side must be > 0, got {}", self.image_side));
        }
        let limits = [(0.0, SMALL_MAX_AREA), (SMALL_MAX_AREA, MEDIUM_MAX_AREA), (MEDIUM_MAX_AREA, f64::INFINITY)];
        let side2 = self.image_side * self.image_side;
        for (k, (r, (lo, hi))) in self.ranges.iter().zip(limits).enumerate() {
            if self.mix[k] == 0.0 {
                continue;
            }
            if !(r.min.is_finite() && r.max.is_finite() && r.min < r.max) {
                return infeasible(format!("bucket {k}: empty range [{}, {})", r.min, r.max));
            }
            if r.min < lo || r.max > hi || r.min <= 0.0 {
                return infeasible(format!(
                    "bucket {k}: range [{}, {}) leaves the bucket's area limits ({lo}, {hi})",
                    r.min, r.max
                ));
            }
            // the longest side of an extreme-aspect box must fit in the image
            if (r.max * MAX_ASPECT).sqrt() > self.image_side || r.max > side2 {
                return infeasible(format!("bucket {k}: area {} cannot fit the image", r.max));
            }
        }
        Ok(())
    }

    fn bucket_of_area(&self, area: f64) -> SizeBucket {
        SizeBucket::of_area(area)
    }

    /// Size bucket of a normalized box under this distribution's image side.
    pub fn bucket(&self, b: &BoxCcwh) -> SizeBucket {
        self.bucket_of_area(self.pixel_area(b))
    }

    pub fn pixel_area(&self, b: &BoxCcwh) -> f64 {
        b.w * b.h * self.image_side * self.image_side
    }
}

/// Draws a scene of `n_boxes` ground-truth boxes.
///
/// Bucket per box follows `dist.mix`; area is log-uniform inside the bucket's
/// range, aspect ratio log-uniform in `[1/3, 3]`, and the center is placed so the
/// box lies inside the unit square.
pub fn gen_scene(seed: u64, n_boxes: usize, dist: &SizeDistribution) -> Result<Scene> {
    if n_boxes == 0 {
        return Err(Error::Config("a scene needs at least one box".into()));
    }
    dist.validate()?;
    let mut rng = rng_for(seed, 0);
    let side = dist.image_side;
    let gt = (0..n_boxes)
        .map(|_| {
            let u: f64 = rng.random();
            let mut k = (0..3).rev().find(|&i| dist.mix[i] > 0.0).unwrap_or(0);
            let mut acc = 0.0;
            for i in 0..3 {
                acc += dist.mix[i];
                if dist.mix[i] > 0.0 && u < acc {
                    k = i;
                    break;
                }
            }
            let want = [SizeBucket::Small, SizeBucket::Medium, SizeBucket::Large][k];
            let r = dist.ranges[k];
            loop {
                let area = (r.min.ln() + rng.random::<f64>() * (r.max.ln() - r.min.ln())).exp();
                let aspect = (rng.random_range(-1.0..1.0) * MAX_ASPECT.ln()).exp();
                let w = (area * aspect).sqrt() / side;
                let h = (area / aspect).sqrt() / side;
                let cx = w / 2.0 + rng.random::<f64>() * (1.0 - w);
                let cy = h / 2.0 + rng.random::<f64>() * (1.0 - h);
                let b = BoxCcwh::new(cx, cy, w, h);
                // float rounding can push an area across a threshold
                if dist.bucket(&b) == want {
                    break b;
                }
            }
        })
        .collect();
    Ok(Scene { id: seed, gt })
}

/// Jittered copy of a scene's ground truth, one prediction per gt box.
pub fn perturb(scene: &Scene, noise: &NoiseModel, seed: u64) -> Vec<BoxCcwh> {
    let mut rng = rng_for(seed, 1);
    let mut n = || -> f64 { StandardNormal.sample(&mut rng) };
    scene
        .gt
        .iter()
        .map(|g| {
            let d = match noise.mode {
                NoiseMode::Proportional => [
                    noise.sigma_center * g.w * n(),
                    noise.sigma_center * g.h * n(),
                    noise.sigma_size * g.w * n(),
                    noise.sigma_size * g.h * n(),
                ],
                NoiseMode::Absolute => [
                    noise.sigma_abs * n(),
                    noise.sigma_abs * n(),
                    noise.sigma_abs * n(),
                    noise.sigma_abs * n(),
                ],
            };
            BoxCcwh::new(g.cx + d[0], g.cy + d[1], g.w + d[2], g.h + d[3]).clip_dims(MIN_BOX_DIM)
        })
        .collect()
}

/// Line format: `scene_id,cx,cy,w,h` per box, with a header row.
pub fn scenes_to_text(scenes: &[Scene]) -> String {
    let mut out = String::from("scene_id,cx,cy,w,h\n");
    for s in scenes {
        for b in &s.gt {
            // `{:?}` on f64 is shortest round-trip
            let _ = writeln!(out, "{},{:?},{:?},{:?},{:?}", s.id, b.cx, b.cy, b.w, b.h);
        }
    }
    out
}

pub fn scenes_from_text(text: &str) -> Result<Vec<Scene>> {
    let mut scenes: Vec<Scene> = Vec::new();
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: "<scenes>".into(),
        msg: format!("line {line}: {msg}"),
    };
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("scene_id")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(parse_err(i + 1, format!("expected 5 fields, got {}", fields.len())));
        }
        let id: u64 = fields[0]
            .parse()
            .map_err(|e| parse_err(i + 1, format!("scene id: {e}")))?;
        let mut v = [0.0; 4];
        for (k, f) in fields[1..].iter().enumerate() {
            v[k] = f.parse().map_err(|e| parse_err(i + 1, format!("{f}: {e}")))?;
        }
        let b = BoxCcwh::try_new(v[0], v[1], v[2], v[3]).map_err(|e| parse_err(i + 1, e.to_string()))?;
        match scenes.last_mut() {
            Some(s) if s.id == id => s.gt.push(b),
            _ => scenes.push(Scene { id, gt: vec![b] }),
        }
    }
    Ok(scenes)
}

pub fn write_scenes(path: &Path, scenes: &[Scene]) -> Result<()> {
    std::fs::write(path, scenes_to_text(scenes)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_only_mix_stays_small() {
        let dist = SizeDistribution::with_mix([1.0, 0.0, 0.0]);
        for seed in 0..50 {
            let s = gen_scene(seed, 20, &dist).unwrap();
            for b in &s.gt {
                assert!(dist.pixel_area(b) < 1024.0);
            }
        }
    }

    #[test]
    fn large_only_mix_stays_large() {
        let dist = SizeDistribution::with_mix([0.0, 0.0, 1.0]);
        for seed in 0..50 {
            for b in &gen_scene(seed, 20, &dist).unwrap().gt {
                assert!(dist.pixel_area(b) > 9216.0);
            }
        }
    }

    #[test]
    fn medium_only_and_bounds() {
        let dist = SizeDistribution::with_mix([0.0, 1.0, 0.0]);
        for seed in 0..50 {
            for b in &gen_scene(seed, 20, &dist).unwrap().gt {
                let a = dist.pixel_area(b);
                assert!(a > 1024.0 && a <= 9216.0, "{a}");
                let x = b.to_xyxy();
                assert!(x.x1 >= 0.0 && x.y1 >= 0.0 && x.x2 <= 1.0 && x.y2 <= 1.0);
                let ar = b.w / b.h;
                assert!((1.0 / 3.0 - 1e-12..=3.0 + 1e-12).contains(&ar));
            }
        }
    }

    #[test]
    fn mixed_buckets_all_present() {
        let dist = SizeDistribution::default();
        let s = gen_scene(1, 300, &dist).unwrap();
        let mut counts = [0usize; 3];
        for b in &s.gt {
            counts[dist.bucket(b).index()] += 1;
        }
        assert!(counts.iter().all(|&c| c > 60), "{counts:?}");
        assert_eq!(counts.iter().sum::<usize>(), 300);
    }

    #[test]
    fn deterministic_per_seed() {
        let dist = SizeDistribution::default();
        assert_eq!(gen_scene(42, 8, &dist).unwrap(), gen_scene(42, 8, &dist).unwrap());
        assert_ne!(gen_scene(42, 8, &dist).unwrap(), gen_scene(43, 8, &dist).unwrap());
        let s = gen_scene(42, 8, &dist).unwrap();
        let noise = NoiseModel::absolute(0.01);
        assert_eq!(perturb(&s, &noise, 3), perturb(&s, &noise, 3));
    }

    #[test]
    fn infeasible_distributions_rejected() {
        let mut d = SizeDistribution::with_mix([0.5, 0.6, 0.0]);
        assert!(matches!(d.validate(), Err(Error::InfeasibleDistribution(_))));
        d = SizeDistribution::with_mix([1.0, 0.0, 0.0]);
        d.ranges[0] = AreaRange { min: 500.0, max: 2000.0 };
        assert!(gen_scene(0, 3, &d).is_err());
        d.ranges[0] = AreaRange { min: 500.0, max: 400.0 };
        assert!(gen_scene(0, 3, &d).is_err());
        let mut d = SizeDistribution::with_mix([0.0, 0.0, 1.0]);
        d.ranges[2] = AreaRange { min: 10_000.0, max: 400_000.0 };
        assert!(gen_scene(0, 3, &d).is_err());
        assert!(gen_scene(0, 0, &SizeDistribution::default()).is_err());
    }

    #[test]
    fn zero_noise_is_identity() {
        let s = gen_scene(5, 10, &SizeDistribution::default()).unwrap();
        assert_eq!(perturb(&s, &NoiseModel::zero(), 1), s.gt);
        assert_eq!(perturb(&s, &NoiseModel::proportional(0.0, 0.0), 1), s.gt);
    }

    /// Mean |Δw| per bucket over many draws.
    fn mean_abs_dw(noise: &NoiseModel, relative: bool) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (k, mix) in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]].into_iter().enumerate() {
            let dist = SizeDistribution::with_mix(mix);
            let mut sum = 0.0;
            let mut n = 0usize;
            for seed in 0..100 {
                let s = gen_scene(seed, 100, &dist).unwrap();
                let p = perturb(&s, noise, seed + 1000);
                for (g, q) in s.gt.iter().zip(&p) {
                    let d = (q.w - g.w).abs();
                    sum += if relative { d / g.w } else { d };
                    n += 1;
                }
            }
            out[k] = sum / n as f64;
        }
        out
    }

    #[test]
    fn absolute_noise_is_size_independent() {
        // sigma small enough that clipping never triggers
        let m = mean_abs_dw(&NoiseModel::absolute(0.002), false);
        let folded = 0.002 * (2.0 / std::f64::consts::PI).sqrt();
        for v in m {
            assert!((v - m[0]).abs() / m[0] < 0.05, "{m:?}");
            assert!((v - folded).abs() / folded < 0.05, "{m:?}");
        }
    }

    #[test]
    fn proportional_noise_is_relative() {
        let m = mean_abs_dw(&NoiseModel::proportional(0.1, 0.1), true);
        for v in m {
            assert!((v - m[0]).abs() / m[0] < 0.05, "{m:?}");
        }
    }

    #[test]
    fn text_round_trip() {
        let dist = SizeDistribution::default();
        let scenes: Vec<Scene> = (0..3).map(|s| gen_scene(s, 4, &dist).unwrap()).collect();
        let text = scenes_to_text(&scenes);
        assert_eq!(text.lines().count(), 13);
        assert_eq!(scenes_from_text(&text).unwrap(), scenes);
        assert!(scenes_from_text("1,0.5,0.5,0.1\n").is_err());
        assert!(scenes_from_text("1,0.5,0.5,0.1,-0.2\n").is_err());
    }
}
