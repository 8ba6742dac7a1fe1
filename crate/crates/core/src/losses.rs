//! Box regression losses and their gradients with respect to the prediction.
//!
//! Three losses are provided over matched `(pred, gt)` pairs in center form:
//!
//! * weighted L1, `Σ_{i,j} w_{i,j} |pred_{i,j} - gt_{i,j}|`, which is the plain L1
//!   loss when every weight is `1.0`;
//! * sized L1, the weighted L1 loss with `w = 1/width` on the `{cx, w}` slots and
//!   `w = 1/height` on the `{cy, h}` slots of each ground-truth box, so every box
//!   contributes as if it were rescaled to unit width and height;
//! * GIoU loss, `1 - giou(pred, gt)`.
//!
//! The composite regression loss is `λ_l1 · L1 + λ_giou · Σ giou_loss`, where the
//! L1 term is either the plain or the sized variant.
//!
//! Sized weights depend only on ground truth, so gradients treat them as
//! constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{overlap, BoxCcwh, BoxXyxy};

/// Default floor applied to ground-truth dims before taking reciprocals.
pub const DEFAULT_SIZED_EPSILON: f64 = 1e-6;

/// Optional rescaling of sized weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Compensation {
    /// Pure `1/width`, `1/height` weights.
    #[default]
    None,
    /// Width-group weights multiplied by the batch mean gt width, height-group
    /// weights by the batch mean gt height. Restores the loss to the batch's
    /// original scale.
    BatchMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizedConfig {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub compensation: Compensation,
}

fn default_epsilon() -> f64 {
    DEFAULT_SIZED_EPSILON
}

impl Default for SizedConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_SIZED_EPSILON,
            compensation: Compensation::None,
        }
    }
}

impl SizedConfig {
    pub fn with_compensation(compensation: Compensation) -> Self {
        Self {
            compensation,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1e-3) {
            return Err(Error::Config(format!(
                "sized epsilon must lie in (0, 1e-3], got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Relative weights of the two regression terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_l1: f64,
    pub lambda_giou: f64,
}

impl Default for LossWeights {
    /// DETR's usual 5:2 ratio.
    fn default() -> Self {
        Self {
            lambda_l1: 5.0,
            lambda_giou: 2.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_l1", self.lambda_l1), ("lambda_giou", self.lambda_giou)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Per-box weights for the `[cx, cy, w, h]` slots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordWeights(pub [f64; 4]);

impl CoordWeights {
    pub const UNIT: CoordWeights = CoordWeights([1.0; 4]);
}

/// Which L1 term the composite loss uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum L1Kind {
    Plain,
    Sized(SizedConfig),
}

impl L1Kind {
    /// Weights this variant applies to a matched batch.
    pub fn weights(&self, gt: &[BoxCcwh]) -> Vec<CoordWeights> {
        match self {
            L1Kind::Plain => vec![CoordWeights::UNIT; gt.len()],
            L1Kind::Sized(cfg) => sized_weights(gt, cfg),
        }
    }
}

fn check_len(what: &'static str, left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::LengthMismatch { what, left, right });
    }
    Ok(())
}

/// Weighted L1 over matched pairs.
pub fn l1_loss(pred: &[BoxCcwh], gt: &[BoxCcwh], weights: &[CoordWeights]) -> Result<f64> {
    check_len("pred vs gt", pred.len(), gt.len())?;
    check_len("pred vs weights", pred.len(), weights.len())?;
    Ok(pred
        .iter()
        .zip(gt)
        .zip(weights)
        .map(|((p, g), w)| weighted_abs(p, g, w))
        .sum())
}

fn weighted_abs(p: &BoxCcwh, g: &BoxCcwh, w: &CoordWeights) -> f64 {
    let (p, g) = (p.to_array(), g.to_array());
    (0..4).map(|j| w.0[j] * (p[j] - g[j]).abs()).sum()
}

/// `1/max(width, ε)` on the `{cx, w}` slots, `1/max(height, ε)` on `{cy, h}`.
pub fn sized_weights(gt: &[BoxCcwh], cfg: &SizedConfig) -> Vec<CoordWeights> {
    if gt.is_empty() {
        return Vec::new();
    }
    let (sw, sh) = match cfg.compensation {
        Compensation::None => (1.0, 1.0),
        Compensation::BatchMean => {
            let n = gt.len() as f64;
            (
                gt.iter().map(|b| b.w).sum::<f64>() / n,
                gt.iter().map(|b| b.h).sum::<f64>() / n,
            )
        }
    };
    gt.iter()
        .map(|b| {
            let ww = sw / b.w.max(cfg.epsilon);
            let wh = sh / b.h.max(cfg.epsilon);
            CoordWeights([ww, wh, ww, wh])
        })
        .collect()
}

pub fn sized_l1_loss(pred: &[BoxCcwh], gt: &[BoxCcwh], cfg: &SizedConfig) -> Result<f64> {
    l1_loss(pred, gt, &sized_weights(gt, cfg))
}

/// `1 - giou(pred, gt)`, in `[0, 2]`.
pub fn giou_loss(pred: &BoxCcwh, gt: &BoxCcwh) -> f64 {
    1.0 - crate::geometry::giou(&pred.to_xyxy(), &gt.to_xyxy())
}

/// `λ_l1 · L1 + λ_giou · Σ giou_loss` over matched pairs.
pub fn composite_reg_loss(
    pred: &[BoxCcwh],
    gt: &[BoxCcwh],
    kind: &L1Kind,
    lw: &LossWeights,
) -> Result<f64> {
    check_len("pred vs gt", pred.len(), gt.len())?;
    let l1 = l1_loss(pred, gt, &kind.weights(gt))?;
    let giou: f64 = pred.iter().zip(gt).map(|(p, g)| giou_loss(p, g)).sum();
    Ok(lw.lambda_l1 * l1 + lw.lambda_giou * giou)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Gradient of [`l1_loss`] per predicted box. Ties get subgradient 0.
pub fn grad_l1(
    pred: &[BoxCcwh],
    gt: &[BoxCcwh],
    weights: &[CoordWeights],
) -> Result<Vec<[f64; 4]>> {
    check_len("pred vs gt", pred.len(), gt.len())?;
    check_len("pred vs weights", pred.len(), weights.len())?;
    Ok(pred
        .iter()
        .zip(gt)
        .zip(weights)
        .map(|((p, g), w)| {
            let (p, g) = (p.to_array(), g.to_array());
            std::array::from_fn(|j| w.0[j] * sign(p[j] - g[j]))
        })
        .collect())
}

pub fn grad_sized_l1(
    pred: &[BoxCcwh],
    gt: &[BoxCcwh],
    cfg: &SizedConfig,
) -> Result<Vec<[f64; 4]>> {
    grad_l1(pred, gt, &sized_weights(gt, cfg))
}

/// Gradient of [`giou_loss`] with respect to the `[cx, cy, w, h]` of `pred`.
///
/// At `pred == gt` (the minimum, where every edge is a kink) this returns 0.
pub fn grad_giou_loss(pred: &BoxCcwh, gt: &BoxCcwh) -> [f64; 4] {
    if pred == gt {
        return [0.0; 4];
    }
    let a = pred.to_xyxy();
    let b = gt.to_xyxy();
    let o = overlap(&a, &b);
    let (inter, union, encl) = (o.inter, o.union, o.enclosing);

    // loss = 2 - I/U - U/C with U = A_pred + A_gt - I
    let g_inter = -1.0 / union - inter / (union * union) + 1.0 / encl;
    let g_area = inter / (union * union) - 1.0 / encl;
    let g_encl = union / (encl * encl);

    let corners = grad_giou_corners(&a, &b, g_inter, g_area, g_encl);
    let [gx1, gy1, gx2, gy2] = corners;
    [gx1 + gx2, gy1 + gy2, 0.5 * (gx2 - gx1), 0.5 * (gy2 - gy1)]
}

/// Chain rule from (I, A_pred, C) partials to the predicted corners.
fn grad_giou_corners(a: &BoxXyxy, b: &BoxXyxy, g_inter: f64, g_area: f64, g_encl: f64) -> [f64; 4] {
    let iw = a.x2.min(b.x2) - a.x1.max(b.x1);
    let ih = a.y2.min(b.y2) - a.y1.max(b.y1);
    let overlapping = iw > 0.0 && ih > 0.0;
    let (aw, ah) = (a.width(), a.height());
    let cw = a.x2.max(b.x2) - a.x1.min(b.x1);
    let ch = a.y2.max(b.y2) - a.y1.min(b.y1);

    // d(iw)/d(corner), d(cw)/d(corner) etc. are 0 or ±1 depending on which box
    // sets the bound.
    let d_iw = |own_is_bound: bool, s: f64| if overlapping && own_is_bound { s } else { 0.0 };
    let d_c = |own_is_bound: bool, s: f64| if own_is_bound { s } else { 0.0 };

    let di = [
        d_iw(a.x1 > b.x1, -1.0) * ih,
        d_iw(a.y1 > b.y1, -1.0) * iw,
        d_iw(a.x2 < b.x2, 1.0) * ih,
        d_iw(a.y2 < b.y2, 1.0) * iw,
    ];
    let da = [-ah, -aw, ah, aw];
    let dc = [
        d_c(a.x1 < b.x1, -1.0) * ch,
        d_c(a.y1 < b.y1, -1.0) * cw,
        d_c(a.x2 > b.x2, 1.0) * ch,
        d_c(a.y2 > b.y2, 1.0) * cw,
    ];
    std::array::from_fn(|k| g_inter * di[k] + g_area * da[k] + g_encl * dc[k])
}

/// Gradient of [`composite_reg_loss`] per predicted box.
pub fn grad_composite(
    pred: &[BoxCcwh],
    gt: &[BoxCcwh],
    kind: &L1Kind,
    lw: &LossWeights,
) -> Result<Vec<[f64; 4]>> {
    let mut grads = grad_l1(pred, gt, &kind.weights(gt))?;
    for ((g, p), t) in grads.iter_mut().zip(pred).zip(gt) {
        let gg = grad_giou_loss(p, t);
        for j in 0..4 {
            g[j] = lw.lambda_l1 * g[j] + lw.lambda_giou * gg[j];
        }
    }
    Ok(grads)
}
