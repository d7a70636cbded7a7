//! Inference post-processing: heatmap peaks to scored polygon detections.

use crate::geometry::{Point2, Polygon};
use crate::losses::DenseOutputs;
use crate::tensor::Tensor;

pub const DEFAULT_MAX_DETECTIONS: usize = 128;
/// Keeps essentially every peak, for AP evaluation.
pub const EVAL_SCORE_THRESHOLD: f64 = 0.01;
pub const VIS_SCORE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub class_id: usize,
    pub score: f64,
    /// Image pixels.
    pub center: Point2,
    /// Image pixels.
    pub polygon: Polygon,
    pub rel_depth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub class_id: usize,
    pub x: usize,
    pub y: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    pub stride: usize,
    pub max_detections: usize,
    pub score_threshold: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            stride: crate::gtgen::DEFAULT_STRIDE,
            max_detections: DEFAULT_MAX_DETECTIONS,
            score_threshold: EVAL_SCORE_THRESHOLD,
        }
    }
}

/// Cells that dominate their 3x3 neighborhood, best `k` over all classes.
///
/// A cell is a peak when no neighbor is larger and no equal neighbor has a
/// smaller row-major index, so a flat plateau yields a single peak at its
/// first cell. Output is sorted by descending score, then class and index.
pub fn extract_peaks(heatmaps: &Tensor, k: usize) -> Vec<Peak> {
    let dims = heatmaps.dims();
    let (c, h, w) = (dims[0], dims[1], dims[2]);
    let mut peaks = Vec::new();
    for class_id in 0..c {
        let plane = heatmaps.plane(class_id);
        for y in 0..h {
            for x in 0..w {
                let idx = y * w + x;
                let v = plane[idx];
                if is_peak(plane, w, h, x, y, v, idx) {
                    peaks.push(Peak {
                        class_id,
                        x,
                        y,
                        score: v,
                    });
                }
            }
        }
    }
    peaks.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.class_id.cmp(&b.class_id))
            .then((a.y, a.x).cmp(&(b.y, b.x)))
    });
    peaks.truncate(k);
    peaks
}

#[inline]
fn is_peak(plane: &[f64], w: usize, h: usize, x: usize, y: usize, v: f64, idx: usize) -> bool {
    for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
        for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
            let n = ny * w + nx;
            if n == idx {
                continue;
            }
            let u = plane[n];
            if u > v || (u == v && n < idx) {
                return false;
            }
        }
    }
    true
}

/// Builds detections from peaks: the center is `(cell + offset) * stride`
/// and vertex `n` is `center + (i_n, j_n) * stride`, both read at the peak
/// cell. Peaks scoring at or below `score_threshold` are dropped.
pub fn assemble(
    peaks: &[Peak],
    outputs: &DenseOutputs,
    stride: usize,
    score_threshold: f64,
) -> Vec<Detection> {
    let (w, h) = outputs.grid();
    let plane = w * h;
    let n = outputs.num_vertices();
    let r = stride as f64;
    let mut dets: Vec<Detection> = peaks
        .iter()
        .filter(|p| p.score > score_threshold)
        .map(|p| {
            let cell = p.y * w + p.x;
            let off = outputs.offset_field.data();
            let center = Point2::new(
                (p.x as f64 + off[cell]) * r,
                (p.y as f64 + off[plane + cell]) * r,
            );
            let poly = outputs.poly_field.data();
            let vertices = (0..n)
                .map(|v| {
                    Point2::new(
                        center.x + poly[2 * v * plane + cell] * r,
                        center.y + poly[(2 * v + 1) * plane + cell] * r,
                    )
                })
                .collect();
            Detection {
                class_id: p.class_id,
                score: p.score,
                center,
                // non-finite regressions are replaced by the center
                polygon: Polygon::new(vertices)
                    .unwrap_or_else(|_| Polygon::new(vec![center; n.max(1)]).expect("finite center")),
                rel_depth: outputs.depth_field.data()[cell],
            }
        })
        .collect();
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
    dets
}

pub fn decode(outputs: &DenseOutputs, cfg: &DecodeConfig) -> Vec<Detection> {
    let peaks = extract_peaks(&outputs.heatmaps, cfg.max_detections);
    assemble(&peaks, outputs, cfg.stride, cfg.score_threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gtgen::{render_elliptical_gaussian, EllipseSpec, LongAxis};

    fn blob(plane: &mut [f64], w: usize, h: usize, x: f64, y: f64, r: f64) {
        let spec = EllipseSpec {
            center: Point2::new(x, y),
            r_small: r,
            r_large: r * 1.5,
            long_axis: LongAxis::Horizontal,
        };
        render_elliptical_gaussian(plane, w, h, &spec).unwrap();
    }

    #[test]
    fn single_gaussian_single_peak() {
        let mut hm = Tensor::zeros(&[2, 20, 30]);
        blob(hm.plane_mut(1), 30, 20, 12.0, 7.0, 2.5);
        let peaks = extract_peaks(&hm, 10);
        assert_eq!((peaks[0].class_id, peaks[0].x, peaks[0].y, peaks[0].score), (1, 12, 7, 1.0));
        // zero background plateaus give one zero-score peak per class
        let rest: Vec<_> = peaks[1..].iter().map(|p| (p.class_id, p.x, p.y, p.score)).collect();
        assert_eq!(rest, vec![(0, 0, 0, 0.0), (1, 0, 0, 0.0)]);
    }

    #[test]
    fn two_gaussians_sorted_by_score() {
        let mut hm = Tensor::filled(&[1, 24, 40], 0.0);
        blob(hm.plane_mut(0), 40, 24, 8.0, 8.0, 2.0);
        let mut other = vec![0.0; 40 * 24];
        blob(&mut other, 40, 24, 30.0, 15.0, 2.0);
        for (a, b) in hm.plane_mut(0).iter_mut().zip(&other) {
            *a = a.max(0.7 * b);
        }
        let peaks = extract_peaks(&hm, 2);
        assert_eq!(peaks.len(), 2);
        assert_eq!((peaks[0].x, peaks[0].y), (8, 8));
        assert_eq!((peaks[1].x, peaks[1].y), (30, 15));
        assert!(peaks[0].score > peaks[1].score);
    }

    #[test]
    fn plateau_tie_break() {
        let hm = Tensor::filled(&[1, 6, 7], 0.3);
        let peaks = extract_peaks(&hm, 5);
        assert_eq!(peaks.len(), 1);
        assert_eq!((peaks[0].x, peaks[0].y), (0, 0));
        let mut two = Tensor::zeros(&[1, 5, 5]);
        two.data_mut()[2 * 5 + 2] = 0.8;
        two.data_mut()[2 * 5 + 3] = 0.8;
        let peaks = extract_peaks(&two, 5);
        assert_eq!((peaks[0].x, peaks[0].y, peaks[0].score), (2, 2, 0.8));
        assert!(peaks.iter().all(|p| (p.x, p.y) != (3, 2)));
    }

    #[test]
    fn assemble_arithmetic() {
        let mut out = DenseOutputs::zeros(1, 4, 16, 12);
        let (w, h) = (16, 12);
        let cell = 7 * w + 10;
        out.offset_field.data_mut()[cell] = 0.3;
        out.offset_field.data_mut()[w * h + cell] = 0.6;
        out.depth_field.data_mut()[cell] = 0.42;
        let peaks = [Peak {
            class_id: 0,
            x: 10,
            y: 7,
            score: 0.9,
        }];
        let dets = assemble(&peaks, &out, 4, 0.5);
        assert_eq!(dets.len(), 1);
        let c = dets[0].center;
        assert!((c.x - 41.2).abs() < 1e-12 && (c.y - 30.4).abs() < 1e-12);
        assert_eq!(dets[0].rel_depth, 0.42);
        // zero polygon field: every vertex sits on the center
        assert!(dets[0].polygon.vertices().iter().all(|&v| v == c));
        assert_eq!(dets[0].polygon.len(), 4);

        out.poly_field.data_mut()[2 * w * h + cell] = -1.5; // x of vertex 1
        let dets = assemble(&peaks, &out, 4, 0.5);
        assert!((dets[0].polygon.vertices()[1].x - (41.2 - 6.0)).abs() < 1e-12);
        assert!(assemble(&peaks, &out, 4, 0.95).is_empty());
    }

    #[test]
    fn assemble_translation_equivariant() {
        let (w, h, n) = (20usize, 16usize, 4usize);
        let mut out = DenseOutputs::zeros(2, n, w, h);
        let mut shifted = out.clone();
        let (sx, sy) = (3usize, 2usize);
        let fill = |t: &mut Tensor, ch: usize, x: usize, y: usize, v: f64| {
            t.data_mut()[ch * w * h + y * w + x] = v;
        };
        for (i, &(x, y)) in [(4usize, 5usize), (9, 3)].iter().enumerate() {
            for ch in 0..2 * n {
                let v = (ch as f64 - 3.0) * 0.7 + i as f64;
                fill(&mut out.poly_field, ch, x, y, v);
                fill(&mut shifted.poly_field, ch, x + sx, y + sy, v);
            }
            for ch in 0..2 {
                fill(&mut out.offset_field, ch, x, y, 0.25 + 0.1 * ch as f64);
                fill(&mut shifted.offset_field, ch, x + sx, y + sy, 0.25 + 0.1 * ch as f64);
            }
        }
        let peaks = [
            Peak { class_id: 0, x: 4, y: 5, score: 0.9 },
            Peak { class_id: 1, x: 9, y: 3, score: 0.8 },
        ];
        let moved: Vec<Peak> = peaks.iter().map(|p| Peak { x: p.x + sx, y: p.y + sy, ..*p }).collect();
        let a = assemble(&peaks, &out, 4, 0.0);
        let b = assemble(&moved, &shifted, 4, 0.0);
        let t = Point2::new(4.0 * sx as f64, 4.0 * sy as f64);
        for (da, db) in a.iter().zip(&b) {
            assert!((da.center + t).distance(db.center) < 1e-9);
            for (va, vb) in da.polygon.vertices().iter().zip(db.polygon.vertices()) {
                assert!((*va + t).distance(*vb) < 1e-9);
            }
        }
    }

    #[test]
    fn decode_respects_k_and_order() {
        let mut out = DenseOutputs::zeros(1, 4, 32, 32);
        for (i, &(x, y)) in [(3.0, 3.0), (15.0, 4.0), (27.0, 20.0), (8.0, 25.0)].iter().enumerate() {
            let mut p = vec![0.0; 32 * 32];
            blob(&mut p, 32, 32, x, y, 1.5);
            for (a, b) in out.heatmaps.plane_mut(0).iter_mut().zip(&p) {
                *a = a.max(b * (1.0 - 0.1 * i as f64));
            }
        }
        let cfg = DecodeConfig { max_detections: 3, ..Default::default() };
        let dets = decode(&out, &cfg);
        assert_eq!(dets.len(), 3);
        assert!(dets.windows(2).all(|d| d[0].score >= d[1].score));
    }
}
