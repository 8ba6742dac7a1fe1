//! Size-bucketed COCO box AP.
//!
//! Follows `pycocotools` bbox evaluation: per image and category, detections are
//! sorted by score and greedily matched to the best still-free ground truth at
//! each IoU threshold; crowd and out-of-bucket ground truths are ignored rather
//! than penalized; precision is interpolated at 101 recall points and averaged
//! over the ten thresholds `0.50:0.05:0.95`.
//!
//! Unlike `pycocotools`, whose bucket area ranges overlap at `32^2` and `96^2`,
//! buckets here partition the areas: a box with area exactly on a threshold
//! belongs to the lower bucket. Precision is `tp / (tp + fp)` without the
//! `np.spacing(1)` guard, so a perfect ranking scores exactly 1.

mod eval;
mod io;

pub use eval::{ap, iou_thresholds, map_by_size, recall_thresholds, SizeTable, MAX_DETS};
pub use io::{load_dets, load_gt, parse_dets, parse_gt};

use serde::{Deserialize, Serialize};

/// COCO ground-truth annotation, pixel-space `[x, y, w, h]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: [f64; 4],
    pub area: f64,
    pub iscrowd: bool,
}

/// One entry of a COCO results array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: [f64; 4],
    pub score: f64,
}

impl DetectionRecord {
    pub fn area(&self) -> f64 {
        self.bbox[2] * self.bbox[3]
    }
}

/// Validated ground-truth collection.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CocoGt {
    pub image_ids: Vec<u64>,
    pub category_ids: Vec<u64>,
    pub annotations: Vec<GtAnnotation>,
}

impl CocoGt {
    pub fn len(&self) -> usize {
        self.annotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.annotations.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeBucket {
    Small,
    Medium,
    Large,
    All,
}

impl SizeBucket {
    pub const SIZED: [SizeBucket; 3] = [SizeBucket::Small, SizeBucket::Medium, SizeBucket::Large];

    /// Partitioning bucket of a pixel area: `(0, 1024]` small, `(1024, 9216]`
    /// medium, larger is large.
    pub fn of_area(area: f64) -> SizeBucket {
        if area <= 1024.0 {
            SizeBucket::Small
        } else if area <= 9216.0 {
            SizeBucket::Medium
        } else {
            SizeBucket::Large
        }
    }

    pub fn contains(self, area: f64) -> bool {
        match self {
            SizeBucket::All => true,
            b => SizeBucket::of_area(area) == b,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SizeBucket::Small => "small",
            SizeBucket::Medium => "medium",
            SizeBucket::Large => "large",
            SizeBucket::All => "all",
        }
    }

    /// Position in `[small, medium, large, all]`.
    pub fn index(self) -> usize {
        self as usize
    }
}

impl std::fmt::Display for SizeBucket {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
