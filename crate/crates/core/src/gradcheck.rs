//! Central finite-difference check of the analytic loss gradients.
//!
//! Points are sampled away from every kink: each L1 residual exceeds
//! `min_gap`, and for GIoU no pair of corresponding edges, and no intersection
//! extent, is within `min_gap` of a switch point.

use rand::Rng;

use crate::geometry::{BoxCcwh, BoxXyxy};
use crate::losses::{
    giou_loss, grad_giou_loss, grad_l1, grad_sized_l1, l1_loss, sized_l1_loss, CoordWeights,
    SizedConfig,
};
use crate::par::Exec;
use crate::synth::rng_for;

#[derive(Debug, Clone, Copy)]
pub struct GradcheckOptions {
    pub points: usize,
    pub seed: u64,
    pub step: f64,
    pub min_gap: f64,
    /// Pass threshold on the max relative error.
    pub tolerance: f64,
    /// Flip the sign of every analytic gradient (harness self-test).
    pub inject_sign_flip: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            points: 1000,
            seed: 0,
            step: 1e-6,
            min_gap: 1e-3,
            tolerance: 1e-5,
            inject_sign_flip: false,
        }
    }
}

/// Relative error with the denominator floored at this value, so exact-zero
/// gradients compare absolutely.
pub const REL_FLOOR: f64 = 1e-3;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossCheck {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub checks: Vec<LossCheck>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() <= self.tolerance
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!("{:<10} points={:<5} max_rel_err={:.3e}\n", c.name, c.points, c.max_rel_err));
        }
        out.push_str(&format!(
            "overall    max_rel_err={:.3e} tolerance={:.0e} {}\n",
            self.max_rel_err(),
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        ));
        out
    }
}

/// A matched batch sampled away from gradient kinks.
pub fn sample_point<R: Rng>(rng: &mut R, min_gap: f64) -> (Vec<BoxCcwh>, Vec<BoxCcwh>) {
    let n = rng.random_range(1..=4);
    let mut pred = Vec::with_capacity(n);
    let mut gt = Vec::with_capacity(n);
    while pred.len() < n {
        let g = BoxCcwh::new(
            rng.random_range(0.1..0.9),
            rng.random_range(0.1..0.9),
            rng.random_range(0.01..0.4),
            rng.random_range(0.01..0.4),
        );
        let p = BoxCcwh::new(
            g.cx + rng.random_range(-0.5..0.5) * g.w,
            g.cy + rng.random_range(-0.5..0.5) * g.h,
            g.w * rng.random_range(0.5..1.5),
            g.h * rng.random_range(0.5..1.5),
        );
        if non_degenerate(&p, &g, min_gap) {
            pred.push(p);
            gt.push(g);
        }
    }
    (pred, gt)
}

fn non_degenerate(p: &BoxCcwh, g: &BoxCcwh, gap: f64) -> bool {
    let (pa, ga) = (p.to_array(), g.to_array());
    if (0..4).any(|j| (pa[j] - ga[j]).abs() <= gap) {
        return false;
    }
    let (a, b): (BoxXyxy, BoxXyxy) = (p.to_xyxy(), g.to_xyxy());
    let edges = [(a.x1, b.x1), (a.y1, b.y1), (a.x2, b.x2), (a.y2, b.y2)];
    if edges.iter().any(|(u, v)| (u - v).abs() <= gap) {
        return false;
    }
    let iw = a.x2.min(b.x2) - a.x1.max(b.x1);
    let ih = a.y2.min(b.y2) - a.y1.max(b.y1);
    iw.abs() > gap && ih.abs() > gap && a.width() > gap && a.height() > gap
}

fn central_diff(pred: &[BoxCcwh], step: f64, f: &dyn Fn(&[BoxCcwh]) -> f64) -> Vec<[f64; 4]> {
    let mut out = vec![[0.0; 4]; pred.len()];
    let mut work = pred.to_vec();
    for i in 0..pred.len() {
        for j in 0..4 {
            let base = pred[i].to_array();
            let mut hi = base;
            let mut lo = base;
            hi[j] += step;
            lo[j] -= step;
            work[i] = BoxCcwh::from_array(hi);
            let fh = f(&work);
            work[i] = BoxCcwh::from_array(lo);
            let fl = f(&work);
            work[i] = pred[i];
            out[i][j] = (fh - fl) / (2.0 * step);
        }
    }
    out
}

fn max_err(analytic: &[[f64; 4]], numeric: &[[f64; 4]], flip: bool) -> f64 {
    let s = if flip { -1.0 } else { 1.0 };
    analytic
        .iter()
        .zip(numeric)
        .flat_map(|(a, n)| (0..4).map(move |j| rel_err(s * a[j], n[j])))
        .fold(0.0, f64::max)
}

/// Max relative errors of `[l1, sized_l1, giou]` at one sampled point.
fn check_point(pred: &[BoxCcwh], gt: &[BoxCcwh], opts: &GradcheckOptions) -> [f64; 3] {
    let unit = vec![CoordWeights::UNIT; gt.len()];
    let cfg = SizedConfig::default();
    let flip = opts.inject_sign_flip;

    let l1_num = central_diff(pred, opts.step, &|p| l1_loss(p, gt, &unit).expect("matched lengths"));
    let l1_an = grad_l1(pred, gt, &unit).expect("matched lengths");

    let s_num = central_diff(pred, opts.step, &|p| sized_l1_loss(p, gt, &cfg).expect("matched lengths"));
    let s_an = grad_sized_l1(pred, gt, &cfg).expect("matched lengths");

    let g_num = central_diff(pred, opts.step, &|p| p.iter().zip(gt).map(|(a, b)| giou_loss(a, b)).sum());
    let g_an: Vec<[f64; 4]> = pred.iter().zip(gt).map(|(a, b)| grad_giou_loss(a, b)).collect();

    [
        max_err(&l1_an, &l1_num, flip),
        max_err(&s_an, &s_num, flip),
        max_err(&g_an, &g_num, flip),
    ]
}

pub fn run_gradcheck(opts: &GradcheckOptions, exec: Exec) -> GradcheckReport {
    let errs = exec.map_range(opts.points, |k| {
        let mut rng = rng_for(opts.seed, k as u64);
        let (pred, gt) = sample_point(&mut rng, opts.min_gap);
        check_point(&pred, &gt, opts)
    });
    let names = ["l1", "sized_l1", "giou"];
    let checks = (0..3)
        .map(|i| LossCheck {
            name: names[i],
            max_rel_err: errs.iter().map(|e| e[i]).fold(0.0, f64::max),
            points: opts.points,
        })
        .collect();
    GradcheckReport {
        checks,
        tolerance: opts.tolerance,
    }
}
