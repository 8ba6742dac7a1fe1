//! Helpers shared by the integration test targets.

#![allow(dead_code)]

use std::path::PathBuf;

use sizedl1::cocoeval::{CocoGt, DetectionRecord};

pub fn fixture_dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

/// Exhaustive-matching reference for size-bucketed COCO mAP.
///
/// For every image, category, bucket and IoU threshold it enumerates every
/// one-to-one assignment of detections to ground truth (crowd boxes may take
/// any number of detections) and keeps the assignment that is lexicographically
/// best in score order, each detection preferring a non-ignored match over an
/// ignored one and then higher IoU. AP is the mean over 101 recall levels of the
/// best precision reached at or beyond that recall.
pub mod coco_oracle {
    use super::*;

    #[derive(Clone, Copy, PartialEq, Eq, Debug)]
    pub enum Bucket {
        Small,
        Medium,
        Large,
        All,
    }

    pub const BUCKETS: [Bucket; 4] = [Bucket::Small, Bucket::Medium, Bucket::Large, Bucket::All];

    fn in_bucket(b: Bucket, area: f64) -> bool {
        match b {
            Bucket::Small => area <= 32.0 * 32.0,
            Bucket::Medium => area > 32.0 * 32.0 && area <= 96.0 * 96.0,
            Bucket::Large => area > 96.0 * 96.0,
            Bucket::All => true,
        }
    }

    fn iou(d: [f64; 4], g: [f64; 4], crowd: bool) -> f64 {
        let ix = (d[0] + d[2]).min(g[0] + g[2]) - d[0].max(g[0]);
        let iy = (d[1] + d[3]).min(g[1] + g[3]) - d[1].max(g[1]);
        let inter = ix.max(0.0) * iy.max(0.0);
        let union = if crowd { d[2] * d[3] } else { d[2] * d[3] + g[2] * g[3] - inter };
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }

    /// numpy.linspace(.5, .95, 10)
    pub fn iou_grid() -> Vec<f64> {
        let step = (0.95 - 0.5) / 9.0;
        (0..10).map(|i| if i == 9 { 0.95 } else { 0.5 + i as f64 * step }).collect()
    }

    /// numpy.linspace(0, 1, 101)
    fn recall_grid() -> Vec<f64> {
        (0..=100).map(|i| if i == 100 { 1.0 } else { i as f64 * 0.01 }).collect()
    }

    #[derive(Clone, Copy, PartialEq, PartialOrd)]
    struct Key(u8, f64);

    struct Gt {
        bbox: [f64; 4],
        crowd: bool,
        ignored: bool,
    }

    /// All assignment hypotheses; `None` is an unmatched detection.
    fn enumerate(
        k: usize,
        options: &[Vec<usize>],
        gts: &[Gt],
        used: &mut Vec<bool>,
        cur: &mut Vec<Option<usize>>,
        out: &mut Vec<Vec<Option<usize>>>,
    ) {
        if k == options.len() {
            out.push(cur.clone());
            return;
        }
        cur.push(None);
        enumerate(k + 1, options, gts, used, cur, out);
        cur.pop();
        for &j in &options[k] {
            if used[j] && !gts[j].crowd {
                continue;
            }
            let was = used[j];
            used[j] = true;
            cur.push(Some(j));
            enumerate(k + 1, options, gts, used, cur, out);
            cur.pop();
            used[j] = was;
        }
    }

    /// `(score, is_tp)` per non-ignored detection, plus the non-ignored gt count.
    fn image_outcome(
        gts: &[Gt],
        dets: &[&DetectionRecord],
        thr: f64,
        bucket: Bucket,
    ) -> (Vec<(f64, bool)>, usize) {
        let ious: Vec<Vec<f64>> = dets
            .iter()
            .map(|d| gts.iter().map(|g| iou(d.bbox, g.bbox, g.crowd)).collect())
            .collect();
        let options: Vec<Vec<usize>> = ious
            .iter()
            .map(|row| (0..gts.len()).filter(|&j| row[j] >= thr).collect())
            .collect();
        let mut all = Vec::new();
        enumerate(0, &options, gts, &mut vec![false; gts.len()], &mut Vec::new(), &mut all);
        let key = |h: &Vec<Option<usize>>| -> Vec<Key> {
            h.iter()
                .enumerate()
                .map(|(k, m)| match m {
                    None => Key(0, 0.0),
                    Some(j) => Key(if gts[*j].ignored { 1 } else { 2 }, ious[k][*j]),
                })
                .collect()
        };
        let best = all
            .iter()
            .max_by(|a, b| key(a).partial_cmp(&key(b)).unwrap())
            .expect("the empty assignment always exists");
        let mut rows = Vec::new();
        for (d, m) in dets.iter().zip(best) {
            match m {
                Some(j) if gts[*j].ignored => {}
                Some(_) => rows.push((d.score, true)),
                None if !in_bucket(bucket, d.bbox[2] * d.bbox[3]) => {}
                None => rows.push((d.score, false)),
            }
        }
        (rows, gts.iter().filter(|g| !g.ignored).count())
    }

    fn ap_at(gt: &CocoGt, dets: &[DetectionRecord], cat: u64, thr: f64, bucket: Bucket) -> Option<f64> {
        let mut images = gt.image_ids.clone();
        images.sort_unstable();
        let mut rows = Vec::new();
        let mut npos = 0;
        for &img in &images {
            let gts: Vec<Gt> = gt
                .annotations
                .iter()
                .filter(|a| a.image_id == img && a.category_id == cat)
                .map(|a| Gt {
                    bbox: a.bbox,
                    crowd: a.iscrowd,
                    ignored: a.iscrowd || !in_bucket(bucket, a.area),
                })
                .collect();
            let mut ds: Vec<&DetectionRecord> =
                dets.iter().filter(|d| d.image_id == img && d.category_id == cat).collect();
            ds.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
            ds.truncate(100);
            let (r, n) = image_outcome(&gts, &ds, thr, bucket);
            rows.extend(r);
            npos += n;
        }
        if npos == 0 {
            return None;
        }
        rows.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let (mut tp, mut fp) = (0.0, 0.0);
        let mut curve = Vec::new();
        for (_, hit) in rows {
            if hit {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            curve.push((tp / npos as f64, tp / (tp + fp)));
        }
        let sum: f64 = recall_grid()
            .iter()
            .map(|&r| {
                curve
                    .iter()
                    .filter(|(rc, _)| *rc >= r)
                    .map(|(_, p)| *p)
                    .fold(0.0, f64::max)
            })
            .sum();
        Some(sum / 101.0)
    }

    /// `[small, medium, large, all]`.
    pub fn map_by_size(dets: &[DetectionRecord], gt: &CocoGt) -> [Option<f64>; 4] {
        let mut cats = gt.category_ids.clone();
        cats.sort_unstable();
        BUCKETS.map(|b| {
            let vals: Vec<f64> = cats
                .iter()
                .flat_map(|&c| iou_grid().into_iter().map(move |t| (c, t)))
                .filter_map(|(c, t)| ap_at(gt, dets, c, t, b))
                .collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        })
    }
}
