//! Teacher-student training.
//!
//! Each step the teacher refines the weak view of a batch of unlabeled scenes;
//! those refinements become targets for the student's strong view. The student
//! takes a gradient step on `L_sup + λ_u · L_unsup` and the teacher follows by
//! EMA. Whatever size bias the student picks up from its loss is handed to the
//! teacher through the EMA and comes back through the pseudo-labels.

use serde::{Deserialize, Serialize};

use super::{
    batch_ranges, ema_update, pseudo_label, sgd_step, Branch, Dataset, EpochStats, ErrorTrace,
    LossVariant, RefinementModel, TrainConfig, UnlabeledSet,
};
use crate::error::{Error, Result};
use crate::geometry::BoxCcwh;
use crate::par::Exec;

/// Where the configured L1 variant applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchMode {
    /// Supervised and unsupervised branches both use the configured variant.
    Both,
    /// Only the supervised branch does; the unsupervised one uses plain L1.
    SupervisedOnly,
}

/// Which teacher boxes become pseudo-labels. Only accept-all exists: the usual
/// filter is a classification-confidence threshold, and there is no classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PseudoLabelRule {
    #[default]
    AcceptAll,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemiConfig {
    pub train: TrainConfig,
    /// EMA momentum α; `teacher ← α·teacher + (1−α)·student`.
    #[serde(default = "default_alpha")]
    pub ema_momentum: f64,
    pub branch_mode: BranchMode,
    pub unsup_weight: f64,
    #[serde(default)]
    pub pseudo_label_rule: PseudoLabelRule,
}

fn default_alpha() -> f64 {
    0.999
}

impl SemiConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        // α = 1 (frozen teacher) and α = 0 (teacher = student) are accepted as
        // degenerate settings
        if !(0.0..=1.0).contains(&self.ema_momentum) {
            return Err(Error::Config(format!(
                "ema_momentum must lie in [0, 1], got {}",
                self.ema_momentum
            )));
        }
        if !(self.unsup_weight.is_finite() && self.unsup_weight >= 0.0) {
            return Err(Error::Config(format!(
                "unsup_weight must be finite and >= 0, got {}",
                self.unsup_weight
            )));
        }
        Ok(())
    }

    /// L1 variant used by the unsupervised branch.
    pub fn unsup_variant(&self) -> LossVariant {
        match self.branch_mode {
            BranchMode::Both => self.train.loss_variant,
            BranchMode::SupervisedOnly => LossVariant::PlainL1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemiOutcome {
    pub teacher: RefinementModel,
    pub student: RefinementModel,
    /// Student on the labeled set, per epoch.
    pub trace: ErrorTrace,
    /// Teacher on the unlabeled set's weak view against hidden gt, per epoch.
    pub teacher_trace: ErrorTrace,
}

/// Teacher-student training from identity student and teacher. Unlabeled
/// batches are indexed like labeled ones and cycle if there are fewer.
pub fn train_semi(
    labeled: &Dataset,
    unlabeled: &UnlabeledSet,
    cfg: &SemiConfig,
    exec: Exec,
) -> Result<SemiOutcome> {
    cfg.validate()?;
    if labeled.is_empty() || unlabeled.is_empty() {
        return Err(Error::Config("semi-supervised training needs labeled and unlabeled scenes".into()));
    }
    let tc = &cfg.train;
    let sup_inits = labeled.inits();
    let sup_targets = labeled.targets();
    let weak: Vec<Vec<BoxCcwh>> = unlabeled.scenes.iter().map(|s| s.weak.clone()).collect();
    let strong: Vec<Vec<BoxCcwh>> = unlabeled.scenes.iter().map(|s| s.strong.clone()).collect();
    let sup_kind = tc.l1_kind(tc.loss_variant);
    let unsup_kind = tc.l1_kind(cfg.unsup_variant());

    let sup_batches = batch_ranges(labeled.len(), tc.batch_size);
    let unsup_batches = batch_ranges(unlabeled.len(), tc.batch_size);

    let total = tc.epochs * sup_batches.len();
    let mut student = RefinementModel::identity();
    let mut teacher = RefinementModel::identity();
    let mut trace = ErrorTrace::default();
    let mut teacher_trace = ErrorTrace::default();
    let mut step = 0usize;
    for epoch in 0..tc.epochs {
        for (b, range) in sup_batches.iter().enumerate() {
            let sc = tc.at_step(step, total);
            let sup = Branch {
                inits: &sup_inits[range.clone()],
                targets: &sup_targets[range.clone()],
                kind: sup_kind,
                weight: 1.0,
            };
            let out = if cfg.unsup_weight == 0.0 {
                sgd_step(&student, &[sup], &sc, step, exec)?
            } else {
                let ur = unsup_batches[b % unsup_batches.len()].clone();
                let pseudo: Vec<Vec<BoxCcwh>> =
                    weak[ur.clone()].iter().map(|w| pseudo_label(&teacher, w)).collect();
                let unsup = Branch {
                    inits: &strong[ur],
                    targets: &pseudo,
                    kind: unsup_kind,
                    weight: cfg.unsup_weight,
                };
                sgd_step(&student, &[sup, unsup], &sc, step, exec)?
            };
            student = out.model;
            teacher = ema_update(&teacher, &student, cfg.ema_momentum);
            step += 1;
        }
        trace.push(EpochStats::measure(
            epoch,
            &student,
            labeled.scenes.iter().map(|s| (&s.init, &s.gt)),
            labeled.image_side,
        ));
        teacher_trace.push(EpochStats::measure(
            epoch,
            &teacher,
            unlabeled.scenes.iter().map(|s| (&s.weak, &s.gt)),
            unlabeled.image_side,
        ));
    }
    Ok(SemiOutcome {
        teacher,
        student,
        trace,
        teacher_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{NoiseModel, SizeDistribution};
    use crate::trainer::{objective, train_supervised};

    fn sets() -> (Dataset, UnlabeledSet) {
        let dist = SizeDistribution::default();
        let l = Dataset::generate(1, 5, 4, &dist, &NoiseModel::absolute(0.01)).unwrap();
        let u = UnlabeledSet::generate(1, 6, 4, &dist, &NoiseModel::absolute(0.003), &NoiseModel::absolute(0.015)).unwrap();
        (l, u)
    }

    fn semi(mode: BranchMode, w: f64) -> SemiConfig {
        SemiConfig {
            train: TrainConfig {
                learning_rate: 0.01,
                epochs: 4,
                loss_variant: LossVariant::SizedL1,
                ..TrainConfig::default()
            },
            ema_momentum: 0.9,
            branch_mode: mode,
            unsup_weight: w,
            pseudo_label_rule: PseudoLabelRule::AcceptAll,
        }
    }

    #[test]
    fn zero_unsup_weight_reduces_to_supervised() {
        let (l, u) = sets();
        let c = semi(BranchMode::Both, 0.0);
        let s = train_semi(&l, &u, &c, Exec::Parallel).unwrap();
        let (m, t) = train_supervised(&l, &c.train, Exec::Parallel).unwrap();
        assert_eq!(s.student, m);
        assert_eq!(s.trace, t);
    }

    #[test]
    fn frozen_teacher_with_unit_momentum() {
        let (l, u) = sets();
        let c = SemiConfig { ema_momentum: 1.0, ..semi(BranchMode::Both, 1.0) };
        let s = train_semi(&l, &u, &c, Exec::Parallel).unwrap();
        assert_eq!(s.teacher, RefinementModel::identity());
        assert_ne!(s.student, RefinementModel::identity());
    }

    #[test]
    fn branch_modes_share_supervised_gradient() {
        let (l, u) = sets();
        let (inits, targets) = (l.inits(), l.targets());
        let strong: Vec<_> = u.scenes.iter().map(|s| s.strong.clone()).collect();
        let weak: Vec<_> = u.scenes.iter().map(|s| s.weak.clone()).collect();
        let grads: Vec<_> = [BranchMode::Both, BranchMode::SupervisedOnly]
            .iter()
            .map(|&mode| {
                let c = semi(mode, 1.0);
                let sup = Branch { inits: &inits, targets: &targets, kind: c.train.l1_kind(c.train.loss_variant), weight: 1.0 };
                let unsup = Branch { inits: &strong, targets: &weak, kind: c.train.l1_kind(c.unsup_variant()), weight: 1.0 };
                let m = RefinementModel::identity();
                let (_, gs) = objective(&m, &[sup], &c.train, Exec::Sequential).unwrap();
                let (_, gu) = objective(&m, &[unsup], &c.train, Exec::Sequential).unwrap();
                (gs, gu)
            })
            .collect();
        assert_eq!(grads[0].0, grads[1].0);
        assert_ne!(grads[0].1, grads[1].1);
    }

    #[test]
    fn deterministic_and_modes_differ() {
        let (l, u) = sets();
        let a = train_semi(&l, &u, &semi(BranchMode::Both, 1.0), Exec::Parallel).unwrap();
        let b = train_semi(&l, &u, &semi(BranchMode::Both, 1.0), Exec::Sequential).unwrap();
        assert_eq!(a, b);
        let c = train_semi(&l, &u, &semi(BranchMode::SupervisedOnly, 1.0), Exec::Parallel).unwrap();
        assert_ne!(a.trace, c.trace);
    }

    #[test]
    fn validation() {
        let (l, u) = sets();
        let bad = SemiConfig { ema_momentum: 1.5, ..semi(BranchMode::Both, 1.0) };
        assert!(train_semi(&l, &u, &bad, Exec::Parallel).is_err());
        let bad = SemiConfig { unsup_weight: -1.0, ..semi(BranchMode::Both, 1.0) };
        assert!(bad.validate().is_err());
        let empty = UnlabeledSet { scenes: vec![], image_side: 640.0 };
        assert!(train_semi(&l, &empty, &semi(BranchMode::Both, 1.0), Exec::Parallel).is_err());
    }
}
