use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::{BoxCcwh, MIN_BOX_DIM};

pub const N_FEATURES: usize = 5;

/// Linear box refinement: `pred = init + W · (1, cx, cy, w, h)` on the initial
/// box, with width and height floored at [`MIN_BOX_DIM`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinementModel {
    pub weights: [[f64; N_FEATURES]; 4],
}

impl Default for RefinementModel {
    fn default() -> Self {
        Self::identity()
    }
}

/// Gradient with respect to the model weights.
pub type ModelGrad = [[f64; N_FEATURES]; 4];

pub fn zero_grad() -> ModelGrad {
    [[0.0; N_FEATURES]; 4]
}

pub fn features(b: &BoxCcwh) -> [f64; N_FEATURES] {
    [1.0, b.cx, b.cy, b.w, b.h]
}

impl RefinementModel {
    /// `W = 0`: predictions equal the initial boxes.
    pub fn identity() -> Self {
        Self {
            weights: [[0.0; N_FEATURES]; 4],
        }
    }

    fn raw(&self, init: &BoxCcwh) -> [f64; 4] {
        let phi = features(init);
        let base = init.to_array();
        std::array::from_fn(|r| {
            base[r] + self.weights[r].iter().zip(&phi).map(|(w, f)| w * f).sum::<f64>()
        })
    }

    pub fn predict(&self, init: &BoxCcwh) -> BoxCcwh {
        BoxCcwh::from_array(self.raw(init)).clip_dims(MIN_BOX_DIM)
    }

    /// Prediction plus, per output slot, whether it passes gradient (clipped
    /// dims do not).
    pub fn predict_with_mask(&self, init: &BoxCcwh) -> (BoxCcwh, [bool; 4]) {
        let raw = self.raw(init);
        let mask = [true, true, raw[2] >= MIN_BOX_DIM, raw[3] >= MIN_BOX_DIM];
        (BoxCcwh::from_array(raw).clip_dims(MIN_BOX_DIM), mask)
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().flatten().all(|v| v.is_finite())
    }

    /// Plain-text dump: four lines of five space-separated values.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for row in &self.weights {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", cells.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if rows.len() != 4 {
            return Err(Error::Parse {
                path: "<model>".into(),
                msg: format!("expected 4 rows, got {}", rows.len()),
            });
        }
        let mut weights = [[0.0; N_FEATURES]; 4];
        for (r, line) in rows.iter().enumerate() {
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    path: "<model>".into(),
                    msg: format!("row {r}: {e}"),
                })?;
            if vals.len() != N_FEATURES {
                return Err(Error::Parse {
                    path: "<model>".into(),
                    msg: format!("row {r}: expected {N_FEATURES} values, got {}", vals.len()),
                });
            }
            weights[r].copy_from_slice(&vals);
        }
        Ok(Self { weights })
    }
}

/// `teacher ← α·teacher + (1−α)·student`, elementwise.
pub fn ema_update(teacher: &RefinementModel, student: &RefinementModel, alpha: f64) -> RefinementModel {
    let mut out = *teacher;
    for (o, s) in out.weights.iter_mut().flatten().zip(student.weights.iter().flatten()) {
        *o = alpha * *o + (1.0 - alpha) * s;
    }
    out
}

/// Teacher refinements of the weak view, used as targets for the student.
/// Every box is accepted.
pub fn pseudo_label(teacher: &RefinementModel, weak_inits: &[BoxCcwh]) -> Vec<BoxCcwh> {
    weak_inits.iter().map(|b| teacher.predict(b)).collect()
}
