//! Desk-scale training of a shared linear box-refinement model.
//!
//! Each step predicts boxes from the current model, matches predictions to
//! targets per scene with the Hungarian solver, and takes one gradient step on
//! the composite regression loss averaged over matched pairs. Per-scene work
//! runs through [`Exec`]; per-scene results are reduced in scene order, so
//! training is bit-reproducible whatever the thread count.

mod data;
mod model;
mod semi;
mod trace;

pub use data::{derive_seed, Dataset, LabeledScene, UnlabeledScene, UnlabeledSet};
pub use model::{ema_update, features, pseudo_label, zero_grad, ModelGrad, RefinementModel, N_FEATURES};
pub use semi::{train_semi, BranchMode, PseudoLabelRule, SemiConfig, SemiOutcome};
pub use trace::{BucketStats, EpochStats, ErrorTrace, TRACE_BUCKETS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoxCcwh;
use crate::losses::{composite_reg_loss, grad_composite, L1Kind, LossWeights, SizedConfig};
use crate::matching::{hungarian, reg_cost_matrix};
use crate::par::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    PlainL1,
    SizedL1,
}

impl LossVariant {
    pub fn name(self) -> &'static str {
        match self {
            LossVariant::PlainL1 => "plain_l1",
            LossVariant::SizedL1 => "sized_l1",
        }
    }
}

/// Learning-rate schedule over the whole run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine decay from `learning_rate` at the first step to 0 after the last.
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Scenes per gradient step; 0 means the whole dataset.
    #[serde(default)]
    pub batch_size: usize,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
    pub loss_variant: LossVariant,
    #[serde(default)]
    pub sized: SizedConfig,
    #[serde(default)]
    pub loss_weights: LossWeights,
    /// Use sized weights in the matching cost as well as in the loss.
    #[serde(default)]
    pub match_with_sized: bool,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 200,
            batch_size: 0,
            lr_schedule: LrSchedule::Constant,
            loss_variant: LossVariant::PlainL1,
            sized: SizedConfig::default(),
            loss_weights: LossWeights::default(),
            match_with_sized: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        self.sized.validate()?;
        self.loss_weights.validate()
    }

    /// Rate used at `step` of a run of `total` steps.
    pub fn rate_at(&self, step: usize, total: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => {
                let t = step as f64 / total.max(1) as f64;
                0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }

    /// Copy of this config with the scheduled rate for `step` filled in.
    pub(crate) fn at_step(&self, step: usize, total: usize) -> TrainConfig {
        TrainConfig {
            learning_rate: self.rate_at(step, total),
            ..*self
        }
    }

    /// L1 term for a given variant under this config's sized settings.
    pub fn l1_kind(&self, variant: LossVariant) -> L1Kind {
        match variant {
            LossVariant::PlainL1 => L1Kind::Plain,
            LossVariant::SizedL1 => L1Kind::Sized(self.sized),
        }
    }

    pub fn match_kind(&self) -> L1Kind {
        if self.match_with_sized {
            L1Kind::Sized(self.sized)
        } else {
            L1Kind::Plain
        }
    }
}

/// One term of a training objective: model inputs, their targets, which L1
/// variant to use, and the term's weight.
#[derive(Debug, Clone, Copy)]
pub struct Branch<'a> {
    pub inits: &'a [Vec<BoxCcwh>],
    pub targets: &'a [Vec<BoxCcwh>],
    pub kind: L1Kind,
    pub weight: f64,
}

/// Mean loss and gradient of one branch.
#[derive(Debug, Clone, Copy)]
pub struct BranchEval {
    pub loss: f64,
    pub grad: ModelGrad,
    pub pairs: usize,
}

struct SceneEval {
    loss: f64,
    grad: ModelGrad,
    pairs: usize,
}

fn eval_scene(
    model: &RefinementModel,
    inits: &[BoxCcwh],
    targets: &[BoxCcwh],
    kind: &L1Kind,
    match_kind: &L1Kind,
    lw: &LossWeights,
) -> Result<SceneEval> {
    if inits.is_empty() || targets.is_empty() {
        return Ok(SceneEval { loss: 0.0, grad: zero_grad(), pairs: 0 });
    }
    let (preds, masks): (Vec<BoxCcwh>, Vec<[bool; 4]>) =
        inits.iter().map(|b| model.predict_with_mask(b)).unzip();
    let costs = reg_cost_matrix(&preds, targets, match_kind, lw)?;
    let m = hungarian(&costs);
    let mp: Vec<BoxCcwh> = m.pairs.iter().map(|&(i, _)| preds[i]).collect();
    let mt: Vec<BoxCcwh> = m.pairs.iter().map(|&(_, j)| targets[j]).collect();
    let loss = composite_reg_loss(&mp, &mt, kind, lw)?;
    let box_grads = grad_composite(&mp, &mt, kind, lw)?;

    let mut grad = zero_grad();
    for (&(i, _), g) in m.pairs.iter().zip(&box_grads) {
        let phi = features(&inits[i]);
        for r in 0..4 {
            if !masks[i][r] {
                continue;
            }
            for (k, f) in phi.iter().enumerate() {
                grad[r][k] += g[r] * f;
            }
        }
    }
    Ok(SceneEval { loss, grad, pairs: m.len() })
}

/// Mean composite loss and its gradient over the matched pairs of a branch.
pub fn branch_loss_grad(
    model: &RefinementModel,
    branch: &Branch<'_>,
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<BranchEval> {
    if branch.inits.len() != branch.targets.len() {
        return Err(Error::LengthMismatch {
            what: "branch inits vs targets",
            left: branch.inits.len(),
            right: branch.targets.len(),
        });
    }
    let match_kind = cfg.match_kind();
    let per_scene = exec.map_range(branch.inits.len(), |s| {
        eval_scene(
            model,
            &branch.inits[s],
            &branch.targets[s],
            &branch.kind,
            &match_kind,
            &cfg.loss_weights,
        )
    });
    let mut loss = 0.0;
    let mut grad = zero_grad();
    let mut pairs = 0usize;
    for se in per_scene {
        let se = se?;
        loss += se.loss;
        pairs += se.pairs;
        for (a, b) in grad.iter_mut().flatten().zip(se.grad.iter().flatten()) {
            *a += b;
        }
    }
    if pairs > 0 {
        let inv = 1.0 / pairs as f64;
        loss *= inv;
        grad.iter_mut().flatten().for_each(|g| *g *= inv);
    }
    Ok(BranchEval { loss, grad, pairs })
}

/// Weighted objective over several branches; returns `(loss, grad)`.
pub fn objective(
    model: &RefinementModel,
    branches: &[Branch<'_>],
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<(f64, ModelGrad)> {
    let mut loss = 0.0;
    let mut grad = zero_grad();
    for b in branches {
        let e = branch_loss_grad(model, b, cfg, exec)?;
        loss += b.weight * e.loss;
        for (a, g) in grad.iter_mut().flatten().zip(e.grad.iter().flatten()) {
            *a += b.weight * g;
        }
    }
    Ok((loss, grad))
}

/// Result of one gradient step: the updated model and the loss before it.
#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    pub model: RefinementModel,
    pub loss: f64,
    pub grad: ModelGrad,
}

/// One full-batch gradient step on the weighted branch objective.
pub fn sgd_step(
    model: &RefinementModel,
    branches: &[Branch<'_>],
    cfg: &TrainConfig,
    step: usize,
    exec: Exec,
) -> Result<StepOutcome> {
    let (loss, grad) = objective(model, branches, cfg, exec)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite { what: "loss", step });
    }
    if grad.iter().flatten().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite { what: "gradient", step });
    }
    let mut next = *model;
    for (w, g) in next.weights.iter_mut().flatten().zip(grad.iter().flatten()) {
        *w -= cfg.learning_rate * g;
    }
    if !next.is_finite() {
        return Err(Error::NonFinite { what: "model weights", step });
    }
    Ok(StepOutcome { model: next, loss, grad })
}

/// Consecutive scene ranges of at most `batch_size` (0 = everything).
pub(crate) fn batch_ranges(n: usize, batch_size: usize) -> Vec<std::ops::Range<usize>> {
    let bs = if batch_size == 0 { n.max(1) } else { batch_size };
    (0..n).step_by(bs).map(|s| s..(s + bs).min(n)).collect()
}

/// Supervised training from the identity model. The trace holds per-bucket
/// errors on `dataset` after every epoch.
pub fn train_supervised(
    dataset: &Dataset,
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<(RefinementModel, ErrorTrace)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    let inits = dataset.inits();
    let targets = dataset.targets();
    let kind = cfg.l1_kind(cfg.loss_variant);
    let mut model = RefinementModel::identity();
    let mut trace = ErrorTrace::default();
    let batches = batch_ranges(dataset.len(), cfg.batch_size);
    let total = cfg.epochs * batches.len();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        for range in batches.iter().cloned() {
            let branch = Branch {
                inits: &inits[range.clone()],
                targets: &targets[range],
                kind,
                weight: 1.0,
            };
            model = sgd_step(&model, &[branch], &cfg.at_step(step, total), step, exec)?.model;
            step += 1;
        }
        trace.push(EpochStats::measure(epoch, &model, dataset.scenes.iter().map(|s| (&s.init, &s.gt)), dataset.image_side));
    }
    Ok((model, trace))
}
