use std::fmt::Write as _;

use crate::cocoeval::SizeBucket;
use crate::geometry::{iou, BoxCcwh};

use super::RefinementModel;

/// Row order of per-bucket statistics.
pub const TRACE_BUCKETS: [SizeBucket; 4] =
    [SizeBucket::Small, SizeBucket::Medium, SizeBucket::Large, SizeBucket::All];

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BucketStats {
    /// Mean of `‖pred − gt‖₁ / (w + h)` over gt boxes in the bucket.
    pub mean_rel_err: f64,
    pub mean_iou: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Indexed like [`TRACE_BUCKETS`].
    pub buckets: [BucketStats; 4],
}

impl EpochStats {
    /// Refines each init with `model` and scores it against its own gt box.
    pub fn measure<'a>(
        epoch: usize,
        model: &RefinementModel,
        pairs: impl Iterator<Item = (&'a Vec<BoxCcwh>, &'a Vec<BoxCcwh>)>,
        image_side: f64,
    ) -> Self {
        let mut sums = [(0.0f64, 0.0f64, 0usize); 4];
        for (inits, gts) in pairs {
            for (init, g) in inits.iter().zip(gts) {
                let p = model.predict(init);
                let (pa, ga) = (p.to_array(), g.to_array());
                let rel = (0..4).map(|j| (pa[j] - ga[j]).abs()).sum::<f64>() / (g.w + g.h);
                let ov = iou(&p.to_xyxy(), &g.to_xyxy());
                let b = SizeBucket::of_area(g.w * g.h * image_side * image_side);
                for idx in [b.index(), SizeBucket::All.index()] {
                    sums[idx].0 += rel;
                    sums[idx].1 += ov;
                    sums[idx].2 += 1;
                }
            }
        }
        let buckets = sums.map(|(r, o, n)| {
            if n == 0 {
                BucketStats { mean_rel_err: f64::NAN, mean_iou: f64::NAN, count: 0 }
            } else {
                BucketStats { mean_rel_err: r / n as f64, mean_iou: o / n as f64, count: n }
            }
        });
        Self { epoch, buckets }
    }

    pub fn get(&self, bucket: SizeBucket) -> &BucketStats {
        &self.buckets[bucket.index()]
    }
}

/// Per-epoch, per-bucket localization error.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ErrorTrace {
    pub epochs: Vec<EpochStats>,
}

impl ErrorTrace {
    pub fn push(&mut self, e: EpochStats) {
        self.epochs.push(e);
    }

    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }

    pub fn final_rel_err(&self, bucket: SizeBucket) -> f64 {
        self.last().map_or(f64::NAN, |e| e.get(bucket).mean_rel_err)
    }

    /// Final small-bucket error over final large-bucket error.
    pub fn bias_gap(&self) -> f64 {
        self.final_rel_err(SizeBucket::Small) / self.final_rel_err(SizeBucket::Large)
    }

    /// `epoch,bucket,mean_rel_err,mean_iou`; empty buckets are skipped.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,bucket,mean_rel_err,mean_iou\n");
        for e in &self.epochs {
            for (b, s) in TRACE_BUCKETS.iter().zip(&e.buckets) {
                if s.count > 0 {
                    let _ = writeln!(out, "{},{},{:?},{:?}", e.epoch, b, s.mean_rel_err, s.mean_iou);
                }
            }
        }
        out
    }
}
