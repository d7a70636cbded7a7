//! Resolves overlapping detections into one label map by relative depth.
//!
//! Confident detections (score >= threshold) are painted back to front, so
//! the closest one owns contested pixels. Less confident detections may
//! only claim pixels that no confident detection painted.

use crate::decode::Detection;
use crate::error::{Error, Result};
use crate::geometry::{for_each_span, LabelMap};

pub const DEFAULT_OCCLUDER_THRESHOLD: f64 = 0.5;

/// Back-to-front paint order: ascending depth, then ascending score, then
/// input index.
pub fn paint_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[a]
            .rel_depth
            .total_cmp(&dets[b].rel_depth)
            .then(dets[a].score.total_cmp(&dets[b].score))
            .then(a.cmp(&b))
    });
    order
}

/// Label map where detection `i` (input order) carries id `i + 1`.
pub fn composite(
    dets: &[Detection],
    width: usize,
    height: usize,
    occluder_threshold: f64,
) -> Result<LabelMap> {
    if dets.len() > u16::MAX as usize {
        return Err(Error::TooManyObjects {
            count: dets.len(),
            max: u16::MAX as usize,
        });
    }
    let mut map = LabelMap::new(width, height);
    let order = paint_order(dets);
    let confident = |i: usize| dets[i].score >= occluder_threshold;
    let ids = map.ids_mut();

    for &i in order.iter().filter(|&&i| confident(i)) {
        let id = i as u16 + 1;
        for_each_span(&dets[i].polygon, width, height, |row, s, e| {
            ids[row * width + s..row * width + e].fill(id);
        });
    }

    // ids 1..=M map back to `dets`; 0 is background
    let weak: Vec<bool> = std::iter::once(true)
        .chain((0..dets.len()).map(|i| !confident(i)))
        .collect();
    for &i in order.iter().filter(|&&i| !confident(i)) {
        let id = i as u16 + 1;
        for_each_span(&dets[i].polygon, width, height, |row, s, e| {
            for px in &mut ids[row * width + s..row * width + e] {
                if weak[*px as usize] {
                    *px = id;
                }
            }
        });
    }
    Ok(map)
}
