//! Scale-normalized L1 box regression.
//!
//! The plain L1 box loss scales with box size, so large boxes dominate training
//! and small boxes are localized worse. The sized L1 loss divides each residual
//! by the matched ground-truth box's width (for `cx`, `w`) or height (for `cy`,
//! `h`), which makes every box contribute as if it had unit size.
//!
//! Modules:
//!
//! * [`geometry`]: box forms, IoU, GIoU.
//! * [`losses`]: plain, sized and GIoU losses with analytic gradients.
//! * [`matching`]: Hungarian assignment and a brute-force oracle.
//! * [`synth`]: seeded scenes across COCO size buckets, noise models.
//! * [`trainer`]: supervised and teacher-student training of a linear
//!   refinement model, with per-bucket error traces.
//! * [`cocoeval`]: size-bucketed COCO mAP.
//! * [`app`]: the `sizedl1` command-line experiments.

pub mod app;
pub mod cocoeval;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod losses;
pub mod matching;
pub mod par;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use par::Exec;
