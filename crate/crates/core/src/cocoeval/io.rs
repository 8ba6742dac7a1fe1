//! COCO JSON subset: annotation files and results arrays.

use std::collections::HashSet;
use std::path::Path;

use serde::Deserialize;

use super::{CocoGt, DetectionRecord, GtAnnotation};
use crate::error::{Error, Result};

#[derive(Deserialize)]
struct RawGt {
    images: Vec<RawId>,
    annotations: Vec<RawAnnotation>,
    categories: Vec<RawId>,
}

#[derive(Deserialize)]
struct RawId {
    id: u64,
}

#[derive(Deserialize)]
struct RawAnnotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    area: Option<f64>,
    #[serde(default)]
    iscrowd: u8,
}

fn parse_error(origin: &str, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: origin.to_string(),
        msg: msg.into(),
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn load_gt(path: impl AsRef<Path>) -> Result<CocoGt> {
    let path = path.as_ref();
    parse_gt(&read(path)?, &path.display().to_string())
}

/// Parses and validates a ground-truth document. `origin` names the source in
/// error messages.
pub fn parse_gt(text: &str, origin: &str) -> Result<CocoGt> {
    let raw: RawGt = serde_json::from_str(text).map_err(|e| parse_error(origin, e.to_string()))?;
    let image_ids: Vec<u64> = raw.images.iter().map(|i| i.id).collect();
    let category_ids: Vec<u64> = raw.categories.iter().map(|c| c.id).collect();
    let images: HashSet<u64> = image_ids.iter().copied().collect();
    let cats: HashSet<u64> = category_ids.iter().copied().collect();
    if images.len() != image_ids.len() {
        return Err(parse_error(origin, "duplicate image id"));
    }
    if cats.len() != category_ids.len() {
        return Err(parse_error(origin, "duplicate category id"));
    }

    let mut annotations = Vec::with_capacity(raw.annotations.len());
    for a in raw.annotations {
        if !images.contains(&a.image_id) {
            return Err(parse_error(
                origin,
                format!("annotation {} references unknown image id {}", a.id, a.image_id),
            ));
        }
        if !cats.contains(&a.category_id) {
            return Err(parse_error(
                origin,
                format!("annotation {} references unknown category id {}", a.id, a.category_id),
            ));
        }
        if a.bbox.iter().any(|v| !v.is_finite()) || a.bbox[2] < 0.0 || a.bbox[3] < 0.0 {
            return Err(parse_error(origin, format!("annotation {} has invalid bbox {:?}", a.id, a.bbox)));
        }
        let area = a.area.unwrap_or(a.bbox[2] * a.bbox[3]);
        if !(area.is_finite() && area >= 0.0) {
            return Err(parse_error(origin, format!("annotation {} has invalid area {area}", a.id)));
        }
        annotations.push(GtAnnotation {
            id: a.id,
            image_id: a.image_id,
            category_id: a.category_id,
            bbox: a.bbox,
            area,
            iscrowd: a.iscrowd != 0,
        });
    }
    Ok(CocoGt {
        image_ids,
        category_ids,
        annotations,
    })
}

pub fn load_dets(path: impl AsRef<Path>, gt: &CocoGt) -> Result<Vec<DetectionRecord>> {
    let path = path.as_ref();
    parse_dets(&read(path)?, gt, &path.display().to_string())
}

/// Parses a results array and checks every entry against `gt`.
pub fn parse_dets(text: &str, gt: &CocoGt, origin: &str) -> Result<Vec<DetectionRecord>> {
    let dets: Vec<DetectionRecord> =
        serde_json::from_str(text).map_err(|e| parse_error(origin, e.to_string()))?;
    let images: HashSet<u64> = gt.image_ids.iter().copied().collect();
    let cats: HashSet<u64> = gt.category_ids.iter().copied().collect();
    for (i, d) in dets.iter().enumerate() {
        if !images.contains(&d.image_id) {
            return Err(parse_error(
                origin,
                format!("detection {i} references unknown image id {}", d.image_id),
            ));
        }
        if !cats.contains(&d.category_id) {
            return Err(parse_error(
                origin,
                format!("detection {i} references unknown category id {}", d.category_id),
            ));
        }
        if !(d.score.is_finite() && (0.0..=1.0).contains(&d.score)) {
            return Err(parse_error(origin, format!("detection {i} has score {} outside [0, 1]", d.score)));
        }
        if d.bbox.iter().any(|v| !v.is_finite()) || d.bbox[2] < 0.0 || d.bbox[3] < 0.0 {
            return Err(parse_error(origin, format!("detection {i} has invalid bbox {:?}", d.bbox)));
        }
    }
    Ok(dets)
}
