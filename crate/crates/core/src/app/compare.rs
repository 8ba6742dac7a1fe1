//! Paired-seed comparison of loss variants.
//!
//! For each seed every arm trains on the same generated data, so differences
//! between arms are paired. Supervised arms are scored by the trained model on
//! the labeled data. Semi arms are scored by the final teacher on the weak view
//! of the unlabeled data against its hidden ground truth, which is where
//! pseudo-label quality shows.

use std::fmt::Write as _;

use crate::cocoeval::SizeBucket;
use crate::error::Result;
use crate::par::Exec;
use crate::trainer::{
    train_semi, train_supervised, BranchMode, BucketStats, ErrorTrace, LossVariant, SemiConfig,
    TRACE_BUCKETS,
};

use super::{write_file, CompareMode, ExperimentConfig};

/// Final statistics of one arm at one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub seed: u64,
    /// Indexed like [`TRACE_BUCKETS`].
    pub buckets: [BucketStats; 4],
    pub bias_gap: f64,
}

impl RunResult {
    fn from_trace(seed: u64, trace: &ErrorTrace) -> Self {
        let last = trace.last().expect("training runs at least one epoch");
        Self {
            seed,
            buckets: last.buckets,
            bias_gap: trace.bias_gap(),
        }
    }

    pub fn rel_err(&self, bucket: SizeBucket) -> f64 {
        self.buckets[bucket.index()].mean_rel_err
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmResult {
    /// `plain_l1`, `sized_l1`, or in semi mode `sized_l1:<branch mode>`.
    pub label: String,
    pub variant: LossVariant,
    pub branch_mode: Option<BranchMode>,
    /// One per seed, in seed order.
    pub runs: Vec<RunResult>,
}

impl ArmResult {
    fn mean(&self, f: impl Fn(&RunResult) -> f64) -> f64 {
        self.runs.iter().map(f).sum::<f64>() / self.runs.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub mode: CompareMode,
    pub arms: Vec<ArmResult>,
}

impl CompareReport {
    pub fn arm(&self, label: &str) -> Option<&ArmResult> {
        self.arms.iter().find(|a| a.label == label)
    }

    /// `variant,bucket,mean_rel_err,mean_iou,bias_gap`, averaged over seeds.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,bucket,mean_rel_err,mean_iou,bias_gap\n");
        for arm in &self.arms {
            let gap = arm.mean(|r| r.bias_gap);
            for (k, b) in TRACE_BUCKETS.iter().enumerate() {
                if arm.runs.iter().any(|r| r.buckets[k].count == 0) {
                    continue;
                }
                let err = arm.mean(|r| r.buckets[k].mean_rel_err);
                let iou = arm.mean(|r| r.buckets[k].mean_iou);
                let _ = writeln!(out, "{},{},{:?},{:?},{:?}", arm.label, b, err, iou, gap);
            }
        }
        out
    }

    /// Per-seed rows: `variant,seed,bucket,mean_rel_err,mean_iou,bias_gap`.
    pub fn runs_csv(&self) -> String {
        let mut out = String::from("variant,seed,bucket,mean_rel_err,mean_iou,bias_gap\n");
        for arm in &self.arms {
            for r in &arm.runs {
                for (b, s) in TRACE_BUCKETS.iter().zip(&r.buckets) {
                    if s.count > 0 {
                        let _ = writeln!(
                            out,
                            "{},{},{},{:?},{:?},{:?}",
                            arm.label, r.seed, b, s.mean_rel_err, s.mean_iou, r.bias_gap
                        );
                    }
                }
            }
        }
        out
    }

    /// One line per non-plain arm: paired wins against `plain_l1`.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let Some(base) = self.arm(LossVariant::PlainL1.name()) else {
            return out;
        };
        let (what, score): (&str, fn(&RunResult) -> f64) = match self.mode {
            CompareMode::Supervised => ("small-bucket error", |r| r.rel_err(SizeBucket::Small)),
            CompareMode::Semi => ("bias gap", |r| r.bias_gap),
        };
        for arm in self.arms.iter().filter(|a| a.label != base.label) {
            let wins = arm
                .runs
                .iter()
                .zip(&base.runs)
                .filter(|(a, b)| score(a) <= score(b))
                .count();
            let _ = writeln!(
                out,
                "{}: {} <= plain_l1 in {}/{} seeds (mean {:.6} vs {:.6})",
                arm.label,
                what,
                wins,
                arm.runs.len(),
                arm.mean(score),
                base.mean(score)
            );
        }
        out
    }
}

struct Arm {
    label: String,
    variant: LossVariant,
    branch_mode: Option<BranchMode>,
}

fn arms(cfg: &ExperimentConfig) -> Vec<Arm> {
    let mut out = Vec::new();
    for &variant in &cfg.compare.variants {
        let modes: Vec<Option<BranchMode>> = match (cfg.compare.mode, variant) {
            (CompareMode::Supervised, _) => vec![None],
            // the branch mode only changes which variant the unsupervised branch
            // uses, so plain L1 is the same run under every mode
            (CompareMode::Semi, LossVariant::PlainL1) => vec![Some(BranchMode::Both)],
            (CompareMode::Semi, _) => cfg.compare.branch_modes.iter().copied().map(Some).collect(),
        };
        let single = modes.len() == 1;
        for branch_mode in modes {
            let label = match branch_mode {
                Some(m) if !single || variant != LossVariant::PlainL1 => {
                    format!("{}:{}", variant.name(), branch_mode_name(m))
                }
                _ => variant.name().to_string(),
            };
            if out.iter().any(|a: &Arm| a.label == label) {
                continue;
            }
            out.push(Arm { label, variant, branch_mode });
        }
    }
    out
}

fn branch_mode_name(m: BranchMode) -> &'static str {
    match m {
        BranchMode::Both => "both",
        BranchMode::SupervisedOnly => "supervised_only",
    }
}

fn run_arm(cfg: &ExperimentConfig, arm: &Arm, seed: u64, exec: Exec) -> Result<RunResult> {
    let mut train = cfg.train;
    train.loss_variant = arm.variant;
    train.seed = seed;
    let labeled = cfg.labeled_data(seed)?;
    match arm.branch_mode {
        None => {
            let (_, trace) = train_supervised(&labeled, &train, exec)?;
            Ok(RunResult::from_trace(seed, &trace))
        }
        Some(mode) => {
            let semi = SemiConfig {
                train,
                branch_mode: mode,
                ..cfg.semi()?
            };
            let unlabeled = cfg.unlabeled_data(seed)?;
            let out = train_semi(&labeled, &unlabeled, &semi, exec)?;
            Ok(RunResult::from_trace(seed, &out.teacher_trace))
        }
    }
}

/// Runs every arm at seeds `cfg.seed .. cfg.seed + repeats` and writes
/// `compare.csv` and `compare_runs.csv`.
pub fn run_compare(cfg: &ExperimentConfig, exec: Exec) -> Result<CompareReport> {
    if cfg.compare.mode == CompareMode::Semi {
        cfg.semi()?;
        cfg.unlabeled_data(cfg.seed)?;
    }
    let arms = arms(cfg);
    let repeats = cfg.compare.repeats;
    // (arm, seed) jobs are independent; training inside each runs sequentially
    // so the thread pool is not oversubscribed
    let results = exec.map_range(arms.len() * repeats, |job| {
        let (a, k) = (job / repeats, job % repeats);
        run_arm(cfg, &arms[a], cfg.seed.wrapping_add(k as u64), Exec::Sequential)
    });
    let mut results = results.into_iter();
    let mut out = Vec::with_capacity(arms.len());
    for arm in arms {
        let runs = results.by_ref().take(repeats).collect::<Result<Vec<_>>>()?;
        out.push(ArmResult {
            label: arm.label,
            variant: arm.variant,
            branch_mode: arm.branch_mode,
            runs,
        });
    }
    let report = CompareReport {
        mode: cfg.compare.mode,
        arms: out,
    };
    write_file(&cfg.out_dir, "compare.csv", &report.to_csv())?;
    write_file(&cfg.out_dir, "compare_runs.csv", &report.runs_csv())?;
    Ok(report)
}
