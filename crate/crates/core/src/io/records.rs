//! JSON-lines records for annotations and detections.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::decode::Detection;
use crate::error::{Error, Result};
use crate::geometry::{Point2, Polygon};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub class: usize,
    /// Mask path relative to the annotation file.
    pub mask: String,
    pub order: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub class: usize,
    pub score: f64,
    pub center: [f64; 2],
    pub poly: Vec<[f64; 2]>,
    pub depth: f64,
}

impl From<&Detection> for DetectionRecord {
    fn from(d: &Detection) -> Self {
        Self {
            class: d.class_id,
            score: d.score,
            center: [d.center.x, d.center.y],
            poly: d.polygon.vertices().iter().map(|p| [p.x, p.y]).collect(),
            depth: d.rel_depth,
        }
    }
}

impl TryFrom<DetectionRecord> for Detection {
    type Error = Error;

    fn try_from(r: DetectionRecord) -> Result<Self> {
        let center = Point2::new(r.center[0], r.center[1]);
        if !center.is_finite() || !r.score.is_finite() || !r.depth.is_finite() {
            return Err(Error::format("detection", "non-finite field"));
        }
        Ok(Detection {
            class_id: r.class,
            score: r.score,
            center,
            polygon: Polygon::new(r.poly.iter().map(|&[x, y]| Point2::new(x, y)).collect())?,
            rel_depth: r.depth,
        })
    }
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).expect("records serialize");
        out.push(b'\n');
    }
    out
}

/// Blank lines are skipped.
pub fn from_jsonl<T: DeserializeOwned>(bytes: &[u8], kind: &'static str) -> Result<Vec<T>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::format(kind, e.to_string()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::format(kind, format!("line {}: {e}", i + 1))))
        .collect()
}

pub fn write_detections(path: &Path, dets: &[Detection]) -> Result<()> {
    let recs: Vec<DetectionRecord> = dets.iter().map(DetectionRecord::from).collect();
    super::write_file(path, &to_jsonl(&recs))
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    from_jsonl::<DetectionRecord>(&super::read_file(path)?, "detection")?
        .into_iter()
        .map(Detection::try_from)
        .collect()
}
