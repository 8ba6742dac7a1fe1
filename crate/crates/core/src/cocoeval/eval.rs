use std::collections::BTreeMap;

use super::{CocoGt, DetectionRecord, GtAnnotation, SizeBucket};
use crate::par::Exec;

/// Detections kept per image and category.
pub const MAX_DETS: usize = 100;

/// `0.50:0.05:0.95`, bit-identical to `numpy.linspace(.5, .95, 10)`.
pub fn iou_thresholds() -> Vec<f64> {
    let step = (0.95 - 0.5) / 9.0;
    (0..10)
        .map(|i| if i == 9 { 0.95 } else { i as f64 * step + 0.5 })
        .collect()
}

/// `0:0.01:1`, bit-identical to `numpy.linspace(0, 1, 101)`.
pub fn recall_thresholds() -> Vec<f64> {
    (0..=100)
        .map(|i| if i == 100 { 1.0 } else { i as f64 * 0.01 })
        .collect()
}

/// IoU of two pixel-space `xywh` boxes; a crowd gt divides by the detection
/// area only.
fn iou_xywh(d: &[f64; 4], g: &[f64; 4], crowd: bool) -> f64 {
    let iw = ((d[0] + d[2]).min(g[0] + g[2]) - d[0].max(g[0])).max(0.0);
    let ih = ((d[1] + d[3]).min(g[1] + g[3]) - d[1].max(g[1])).max(0.0);
    let inter = iw * ih;
    let da = d[2] * d[3];
    let union = if crowd { da } else { da + g[2] * g[3] - inter };
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Matching outcome of one image for one category and bucket.
struct ImageEval {
    scores: Vec<f64>,
    /// `[threshold][det]`
    matched: Vec<Vec<bool>>,
    ignored: Vec<Vec<bool>>,
    n_positive: usize,
}

fn evaluate_image(
    gts: &[&GtAnnotation],
    dets: &[&DetectionRecord],
    bucket: SizeBucket,
    thresholds: &[f64],
) -> ImageEval {
    let gt_ignored = |g: &GtAnnotation| g.iscrowd || !bucket.contains(g.area);
    // non-ignored first, stable
    let mut gts: Vec<&GtAnnotation> = gts.to_vec();
    gts.sort_by_key(|g| gt_ignored(g));
    let g_ig: Vec<bool> = gts.iter().map(|g| gt_ignored(g)).collect();

    let mut dets: Vec<&DetectionRecord> = dets.to_vec();
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
    dets.truncate(MAX_DETS);

    let ious: Vec<Vec<f64>> = dets
        .iter()
        .map(|d| gts.iter().map(|g| iou_xywh(&d.bbox, &g.bbox, g.iscrowd)).collect())
        .collect();

    let mut matched = vec![vec![false; dets.len()]; thresholds.len()];
    let mut ignored = vec![vec![false; dets.len()]; thresholds.len()];
    for (t, &thr) in thresholds.iter().enumerate() {
        let mut gt_taken = vec![false; gts.len()];
        for (di, d) in dets.iter().enumerate() {
            let mut best = thr.min(1.0 - 1e-10);
            let mut m: Option<usize> = None;
            for gi in 0..gts.len() {
                if gt_taken[gi] && !gts[gi].iscrowd {
                    continue;
                }
                // once matched to a real gt, stop at the ignored tail
                if let Some(mi) = m {
                    if !g_ig[mi] && g_ig[gi] {
                        break;
                    }
                }
                if ious[di][gi] < best {
                    continue;
                }
                best = ious[di][gi];
                m = Some(gi);
            }
            match m {
                Some(gi) => {
                    matched[t][di] = true;
                    ignored[t][di] = g_ig[gi];
                    gt_taken[gi] = true;
                }
                None => ignored[t][di] = !bucket.contains(d.area()),
            }
        }
    }
    ImageEval {
        scores: dets.iter().map(|d| d.score).collect(),
        matched,
        ignored,
        n_positive: g_ig.iter().filter(|&&ig| !ig).count(),
    }
}

/// 101-point interpolated precision from per-detection outcomes already in
/// score order. `None` when there are no positives.
fn interpolated_ap(tp: &[bool], fp: &[bool], n_positive: usize, rec_thr: &[f64]) -> Option<f64> {
    if n_positive == 0 {
        return None;
    }
    let mut tp_sum = 0.0;
    let mut fp_sum = 0.0;
    let mut recall = Vec::with_capacity(tp.len());
    let mut precision = Vec::with_capacity(tp.len());
    for (&t, &f) in tp.iter().zip(fp) {
        tp_sum += t as u8 as f64;
        fp_sum += f as u8 as f64;
        recall.push(tp_sum / n_positive as f64);
        let seen = fp_sum + tp_sum;
        precision.push(if seen > 0.0 { tp_sum / seen } else { 0.0 });
    }
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let q_sum: f64 = rec_thr
        .iter()
        .map(|&r| {
            let pi = recall.partition_point(|&x| x < r);
            precision.get(pi).copied().unwrap_or(0.0)
        })
        .sum();
    Some(q_sum / rec_thr.len() as f64)
}

/// AP per threshold for one category in one bucket, over every image in
/// `image_ids` (in that order).
fn category_ap(
    image_ids: &[u64],
    gts: &BTreeMap<u64, Vec<&GtAnnotation>>,
    dets: &BTreeMap<u64, Vec<&DetectionRecord>>,
    bucket: SizeBucket,
    thresholds: &[f64],
) -> Vec<Option<f64>> {
    let empty_g = Vec::new();
    let empty_d = Vec::new();
    let evals: Vec<ImageEval> = image_ids
        .iter()
        .map(|id| {
            evaluate_image(
                gts.get(id).unwrap_or(&empty_g),
                dets.get(id).unwrap_or(&empty_d),
                bucket,
                thresholds,
            )
        })
        .collect();
    let n_positive: usize = evals.iter().map(|e| e.n_positive).sum();

    let mut order: Vec<(usize, usize)> = evals
        .iter()
        .enumerate()
        .flat_map(|(ii, e)| (0..e.scores.len()).map(move |di| (ii, di)))
        .collect();
    // stable, like numpy's mergesort argsort on -score
    order.sort_by(|a, b| evals[b.0].scores[b.1].total_cmp(&evals[a.0].scores[a.1]));

    let rec_thr = recall_thresholds();
    (0..thresholds.len())
        .map(|t| {
            let (tp, fp): (Vec<bool>, Vec<bool>) = order
                .iter()
                .map(|&(ii, di)| {
                    let (m, ig) = (evals[ii].matched[t][di], evals[ii].ignored[t][di]);
                    (m && !ig, !m && !ig)
                })
                .unzip();
            interpolated_ap(&tp, &fp, n_positive, &rec_thr)
        })
        .collect()
}

fn group_gt<'a>(gts: impl Iterator<Item = &'a GtAnnotation>) -> BTreeMap<u64, Vec<&'a GtAnnotation>> {
    let mut m: BTreeMap<u64, Vec<&GtAnnotation>> = BTreeMap::new();
    for g in gts {
        m.entry(g.image_id).or_default().push(g);
    }
    m
}

fn group_dets<'a>(dets: impl Iterator<Item = &'a DetectionRecord>) -> BTreeMap<u64, Vec<&'a DetectionRecord>> {
    let mut m: BTreeMap<u64, Vec<&DetectionRecord>> = BTreeMap::new();
    for d in dets {
        m.entry(d.image_id).or_default().push(d);
    }
    m
}

/// AP of a single-category subset at one IoU threshold, restricted to `bucket`.
/// `None` when no non-ignored gt falls in the bucket.
pub fn ap(
    dets: &[DetectionRecord],
    gts: &[GtAnnotation],
    iou_threshold: f64,
    bucket: SizeBucket,
) -> Option<f64> {
    let gmap = group_gt(gts.iter());
    let dmap = group_dets(dets.iter());
    let mut image_ids: Vec<u64> = gmap.keys().chain(dmap.keys()).copied().collect();
    image_ids.sort_unstable();
    image_ids.dedup();
    category_ap(&image_ids, &gmap, &dmap, bucket, &[iou_threshold])[0]
}

/// mAP over all sizes and per size bucket. Absent entries had no in-bucket gt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeTable {
    pub map_s: Option<f64>,
    pub map_m: Option<f64>,
    pub map_l: Option<f64>,
    pub map: Option<f64>,
}

impl SizeTable {
    pub fn get(&self, bucket: SizeBucket) -> Option<f64> {
        match bucket {
            SizeBucket::Small => self.map_s,
            SizeBucket::Medium => self.map_m,
            SizeBucket::Large => self.map_l,
            SizeBucket::All => self.map,
        }
    }

    fn cells(&self, absent: &str) -> [String; 4] {
        [self.map_s, self.map_m, self.map_l, self.map]
            .map(|v| v.map_or_else(|| absent.to_string(), |x| format!("{x:.6}")))
    }

    /// Header plus one row; absent values are empty fields.
    pub fn to_csv(&self) -> String {
        format!("mAP_s,mAP_m,mAP_l,mAP\n{}\n", self.cells("").join(","))
    }

    /// Aligned text table with percentages to one decimal, absent shown as `-`.
    pub fn to_text(&self) -> String {
        let pct = [self.map_s, self.map_m, self.map_l, self.map]
            .map(|v| v.map_or_else(|| "-".to_string(), |x| format!("{:.1}", 100.0 * x)));
        let mut out = format!("{:>8} {:>8} {:>8} {:>8}\n", "mAP_s", "mAP_m", "mAP_l", "mAP");
        out.push_str(&format!("{:>8} {:>8} {:>8} {:>8}\n", pct[0], pct[1], pct[2], pct[3]));
        out
    }
}

/// COCO summary over categories and the ten IoU thresholds, per bucket.
pub fn map_by_size(dets: &[DetectionRecord], gt: &CocoGt, exec: Exec) -> SizeTable {
    let mut image_ids = gt.image_ids.clone();
    image_ids.sort_unstable();
    let mut cats = gt.category_ids.clone();
    cats.sort_unstable();
    let thresholds = iou_thresholds();

    let buckets = [SizeBucket::Small, SizeBucket::Medium, SizeBucket::Large, SizeBucket::All];
    let tasks: Vec<(u64, SizeBucket)> = cats
        .iter()
        .flat_map(|&c| buckets.iter().map(move |&b| (c, b)))
        .collect();
    let per_task = exec.map(&tasks, |&(cat, bucket)| {
        let gmap = group_gt(gt.annotations.iter().filter(|g| g.category_id == cat));
        let dmap = group_dets(dets.iter().filter(|d| d.category_id == cat));
        category_ap(&image_ids, &gmap, &dmap, bucket, &thresholds)
    });

    let mean_for = |bucket: SizeBucket| {
        let vals: Vec<f64> = tasks
            .iter()
            .zip(&per_task)
            .filter(|((_, b), _)| *b == bucket)
            .flat_map(|(_, aps)| aps.iter().flatten().copied())
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    SizeTable {
        map_s: mean_for(SizeBucket::Small),
        map_m: mean_for(SizeBucket::Medium),
        map_l: mean_for(SizeBucket::Large),
        map: mean_for(SizeBucket::All),
    }
}
