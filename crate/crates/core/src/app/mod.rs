//! Experiment configuration and the commands behind the `sizedl1` binary.
//!
//! Every command writes its outputs under an output directory and returns a
//! value the binary turns into an exit code: 0 on success, 1 when a checked
//! property fails, 2 for bad input (config, files, arguments).

mod compare;

pub use compare::{run_compare, ArmResult, CompareReport, RunResult};

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cocoeval::{load_dets, load_gt, map_by_size, SizeTable};
use crate::error::{Error, Result};
use crate::gradcheck::{run_gradcheck, GradcheckOptions, GradcheckReport};
use crate::par::Exec;
use crate::synth::{NoiseModel, SizeDistribution};
use crate::trainer::{
    train_semi, train_supervised, BranchMode, Dataset, ErrorTrace, LossVariant, PseudoLabelRule,
    RefinementModel, SemiConfig, TrainConfig, UnlabeledSet,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PROPERTY: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

/// Exit code for an error: input problems map to 2, failures during a run to 1.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFinite { .. } | Error::EmptyMatching | Error::BruteForceTooLarge(_) => EXIT_PROPERTY,
        _ => EXIT_INPUT,
    }
}

/// Labeled synthetic data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub scenes: usize,
    pub boxes_per_scene: usize,
    #[serde(default)]
    pub sizes: SizeDistribution,
    pub noise: NoiseModel,
}

/// Unlabeled synthetic data; box sizes follow the labeled data's distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnlabeledConfig {
    pub scenes: usize,
    pub boxes_per_scene: usize,
    pub weak_noise: NoiseModel,
    pub strong_noise: NoiseModel,
}

/// The teacher-student part of a [`SemiConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemiSection {
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

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompareMode {
    #[default]
    Supervised,
    Semi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    #[serde(default)]
    pub mode: CompareMode,
    /// Paired seeds `seed, seed + 1, ...`.
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_variants")]
    pub variants: Vec<LossVariant>,
    /// Semi mode only: branch modes tried for every non-plain variant.
    #[serde(default = "default_branch_modes")]
    pub branch_modes: Vec<BranchMode>,
}

fn default_repeats() -> usize {
    10
}

fn default_variants() -> Vec<LossVariant> {
    vec![LossVariant::PlainL1, LossVariant::SizedL1]
}

fn default_branch_modes() -> Vec<BranchMode> {
    vec![BranchMode::Both, BranchMode::SupervisedOnly]
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            mode: CompareMode::Supervised,
            repeats: default_repeats(),
            variants: default_variants(),
            branch_modes: default_branch_modes(),
        }
    }
}

/// Everything one experiment needs. Unknown keys are rejected at every level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seeds data generation; copied into `train.seed`.
    #[serde(default)]
    pub seed: u64,
    pub data: DataConfig,
    #[serde(default)]
    pub unlabeled: Option<UnlabeledConfig>,
    pub train: TrainConfig,
    #[serde(default)]
    pub semi: Option<SemiSection>,
    #[serde(default)]
    pub compare: CompareSection,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            msg: e.to_string(),
        })?;
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Replaces the base seed everywhere it is used.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.scenes == 0 || d.boxes_per_scene == 0 {
            return Err(Error::Config("data.scenes and data.boxes_per_scene must be >= 1".into()));
        }
        d.sizes.validate()?;
        d.noise.validate()?;
        if let Some(u) = &self.unlabeled {
            if u.scenes == 0 || u.boxes_per_scene == 0 {
                return Err(Error::Config(
                    "unlabeled.scenes and unlabeled.boxes_per_scene must be >= 1".into(),
                ));
            }
            u.weak_noise.validate()?;
            u.strong_noise.validate()?;
        }
        self.train.validate()?;
        if let Some(s) = &self.semi {
            self.semi_config(s).validate()?;
        }
        let c = &self.compare;
        if c.repeats == 0 {
            return Err(Error::Config("compare.repeats must be >= 1".into()));
        }
        if c.variants.is_empty() {
            return Err(Error::Config("compare.variants must not be empty".into()));
        }
        if c.mode == CompareMode::Semi && c.branch_modes.is_empty() {
            return Err(Error::Config("compare.branch_modes must not be empty".into()));
        }
        Ok(())
    }

    fn semi_config(&self, s: &SemiSection) -> SemiConfig {
        SemiConfig {
            train: self.train,
            ema_momentum: s.ema_momentum,
            branch_mode: s.branch_mode,
            unsup_weight: s.unsup_weight,
            pseudo_label_rule: s.pseudo_label_rule,
        }
    }

    /// Teacher-student settings; requires the `semi` and `unlabeled` sections.
    pub fn semi(&self) -> Result<SemiConfig> {
        let s = self
            .semi
            .as_ref()
            .ok_or_else(|| Error::Config("missing `semi` section".into()))?;
        Ok(self.semi_config(s))
    }

    pub fn labeled_data(&self, seed: u64) -> Result<Dataset> {
        let d = &self.data;
        Dataset::generate(seed, d.scenes, d.boxes_per_scene, &d.sizes, &d.noise)
    }

    pub fn unlabeled_data(&self, seed: u64) -> Result<UnlabeledSet> {
        let u = self
            .unlabeled
            .as_ref()
            .ok_or_else(|| Error::Config("missing `unlabeled` section".into()))?;
        UnlabeledSet::generate(
            seed,
            u.scenes,
            u.boxes_per_scene,
            &self.data.sizes,
            &u.weak_noise,
            &u.strong_noise,
        )
    }
}

pub(crate) fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn cmd_gradcheck(opts: &GradcheckOptions, out: Option<&Path>, exec: Exec) -> Result<GradcheckReport> {
    let report = run_gradcheck(opts, exec);
    if let Some(dir) = out {
        write_file(dir, "gradcheck.txt", &report.to_text())?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub model: RefinementModel,
    pub trace: ErrorTrace,
}

/// Supervised run; writes `trace.csv` and `model.txt`.
pub fn cmd_train(cfg: &ExperimentConfig, exec: Exec) -> Result<TrainOutput> {
    let data = cfg.labeled_data(cfg.seed)?;
    let (model, trace) = train_supervised(&data, &cfg.train, exec)?;
    write_file(&cfg.out_dir, "trace.csv", &trace.to_csv())?;
    write_file(&cfg.out_dir, "model.txt", &model.to_text())?;
    Ok(TrainOutput { model, trace })
}

/// Teacher-student run; writes the student's `trace.csv` (labeled data), the
/// teacher's `teacher_trace.csv` (weak view of the unlabeled data), and both
/// model dumps.
pub fn cmd_semi(cfg: &ExperimentConfig, exec: Exec) -> Result<crate::trainer::SemiOutcome> {
    let semi = cfg.semi()?;
    let labeled = cfg.labeled_data(cfg.seed)?;
    let unlabeled = cfg.unlabeled_data(cfg.seed)?;
    let out = train_semi(&labeled, &unlabeled, &semi, exec)?;
    write_file(&cfg.out_dir, "trace.csv", &out.trace.to_csv())?;
    write_file(&cfg.out_dir, "teacher_trace.csv", &out.teacher_trace.to_csv())?;
    write_file(&cfg.out_dir, "model.txt", &out.student.to_text())?;
    write_file(&cfg.out_dir, "teacher.txt", &out.teacher.to_text())?;
    Ok(out)
}

/// Size-bucketed mAP of a results file against a ground-truth file; writes
/// `map.csv` when `out` is given.
pub fn cmd_eval(gt: &Path, det: &Path, out: Option<&Path>, exec: Exec) -> Result<SizeTable> {
    let gt = load_gt(gt)?;
    let dets = load_dets(det, &gt)?;
    let table = map_by_size(&dets, &gt, exec);
    if let Some(dir) = out {
        write_file(dir, "map.csv", &table.to_csv())?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "data": {"scenes": 2, "boxes_per_scene": 3, "noise": {"mode": "absolute", "sigma_abs": 0.01}},
        "train": {"learning_rate": 0.001, "epochs": 2, "loss_variant": "sized_l1"}
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::parse(MINIMAL, "inline").unwrap();
        assert_eq!(c.seed, 0);
        assert_eq!(c.compare, CompareSection::default());
        assert_eq!(c.out_dir, PathBuf::from("out"));
        assert_eq!(c.data.sizes, SizeDistribution::default());
        assert!(c.semi().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let typo = MINIMAL.replace("\"epochs\"", "\"epoch\"");
        assert!(matches!(ExperimentConfig::parse(&typo, "x"), Err(Error::Parse { .. })));
        let extra = MINIMAL.replace("\"data\"", "\"colour\": 1, \"data\"");
        assert!(ExperimentConfig::parse(&extra, "x").is_err());
        let variant = MINIMAL.replace("sized_l1", "sized_L1");
        assert!(ExperimentConfig::parse(&variant, "x").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let zero = MINIMAL.replace("\"scenes\": 2", "\"scenes\": 0");
        assert!(matches!(ExperimentConfig::parse(&zero, "x"), Err(Error::Config(_))));
        let lr = MINIMAL.replace("0.001", "-1.0");
        assert!(ExperimentConfig::parse(&lr, "x").is_err());
    }

    #[test]
    fn seed_override_reaches_train_config() {
        let c = ExperimentConfig::parse(MINIMAL, "inline").unwrap().with_seed(42);
        assert_eq!((c.seed, c.train.seed), (42, 42));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_INPUT);
        assert_eq!(exit_code(&Error::Parse { path: "p".into(), msg: "m".into() }), EXIT_INPUT);
        assert_eq!(exit_code(&Error::NonFinite { what: "loss", step: 3 }), EXIT_PROPERTY);
    }
}
