//! COCO-style mask AP: greedy matching per image and class, 101-point
//! interpolated precision, averaged over IoU thresholds 0.50:0.05:0.95.

use rayon::prelude::*;
use serde::Serialize;

use crate::decode::Detection;
use crate::geometry::{for_each_span, InstanceMask, Polygon};

pub const NUM_THRESHOLDS: usize = 10;
const RECALL_POINTS: usize = 101;

/// `0.50, 0.55, ..., 0.95`.
pub fn iou_thresholds() -> [f64; NUM_THRESHOLDS] {
    std::array::from_fn(|k| (50 + 5 * k) as f64 / 100.0)
}

/// A mask as sorted horizontal runs `(row, start, end_exclusive)`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RunMask {
    runs: Vec<(u32, u32, u32)>,
    area: u64,
}

impl RunMask {
    pub fn from_mask(mask: &InstanceMask) -> Self {
        let (w, h) = mask.dims();
        let bits = mask.bits();
        let mut out = RunMask::default();
        for y in 0..h {
            let row = &bits[y * w..(y + 1) * w];
            let mut x = 0;
            while x < w {
                if row[x] {
                    let s = x;
                    while x < w && row[x] {
                        x += 1;
                    }
                    out.push(y, s, x);
                } else {
                    x += 1;
                }
            }
        }
        out
    }

    /// Same pixels as `rasterize_polygon(poly, width, height)`.
    pub fn from_polygon(poly: &Polygon, width: usize, height: usize) -> Self {
        let mut out = RunMask::default();
        for_each_span(poly, width, height, |row, s, e| out.push(row, s, e));
        out
    }

    fn push(&mut self, row: usize, s: usize, e: usize) {
        self.runs.push((row as u32, s as u32, e as u32));
        self.area += (e - s) as u64;
    }

    pub fn area(&self) -> u64 {
        self.area
    }

    pub fn intersection(&self, other: &RunMask) -> u64 {
        let (a, b) = (&self.runs, &other.runs);
        let (mut i, mut j, mut total) = (0, 0, 0u64);
        while i < a.len() && j < b.len() {
            let (ra, sa, ea) = a[i];
            let (rb, sb, eb) = b[j];
            if ra != rb {
                if ra < rb {
                    i += 1;
                } else {
                    j += 1;
                }
                continue;
            }
            let (lo, hi) = (sa.max(sb), ea.min(eb));
            if lo < hi {
                total += (hi - lo) as u64;
            }
            if ea <= eb {
                i += 1;
            } else {
                j += 1;
            }
        }
        total
    }

    /// Zero when both masks are empty.
    pub fn iou(&self, other: &RunMask) -> f64 {
        let inter = self.intersection(other);
        let union = self.area + other.area - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalDetection {
    pub image: usize,
    pub class_id: usize,
    pub score: f64,
    pub mask: RunMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalGroundTruth {
    pub image: usize,
    pub class_id: usize,
    pub mask: RunMask,
}

/// Scores detections as the masks their polygons rasterize to.
pub fn rasterize_detections(image: usize, dets: &[Detection], width: usize, height: usize) -> Vec<EvalDetection> {
    dets.iter()
        .map(|d| EvalDetection {
            image,
            class_id: d.class_id,
            score: d.score,
            mask: RunMask::from_polygon(&d.polygon, width, height),
        })
        .collect()
}

/// Greedy matching. Row `d` of `ious` belongs to the `d`-th best scoring
/// detection; each detection takes the unmatched ground truth with the
/// highest IoU >= `iou_thr` (lowest index on ties). Returns the matched
/// ground-truth index per detection.
pub fn match_at_iou(ious: &[Vec<f64>], num_gt: usize, iou_thr: f64) -> Vec<Option<usize>> {
    let mut taken = vec![false; num_gt];
    ious.iter()
        .map(|row| {
            let mut best: Option<(usize, f64)> = None;
            for (g, &v) in row.iter().enumerate() {
                if taken[g] || v < iou_thr {
                    continue;
                }
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            best.map(|(g, _)| {
                taken[g] = true;
                g
            })
        })
        .collect()
}

/// 101-point interpolated AP from detections pooled over images.
/// `scored` holds `(score, is_tp)`; `None` when there is no ground truth.
pub fn average_precision(scored: &[(f64, bool)], num_gt: usize) -> Option<f64> {
    if num_gt == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].0.total_cmp(&scored[a].0));
    let mut recall = Vec::with_capacity(order.len());
    let mut precision = Vec::with_capacity(order.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &i in &order {
        if scored[i].1 {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (1..precision.len()).rev() {
        precision[i - 1] = precision[i - 1].max(precision[i]);
    }
    let sum: f64 = (0..RECALL_POINTS)
        .map(|k| {
            let r = k as f64 / (RECALL_POINTS - 1) as f64;
            let idx = recall.partition_point(|&x| x < r);
            precision.get(idx).copied().unwrap_or(0.0)
        })
        .sum();
    Some(sum / RECALL_POINTS as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassAp {
    pub class_id: usize,
    pub num_gt: usize,
    pub ap: f64,
    pub ap50: f64,
    pub per_threshold: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApReport {
    /// NaN when no class has ground truth.
    pub ap: f64,
    pub ap50: f64,
    pub per_class: Vec<ClassAp>,
}

impl ApReport {
    pub fn has_data(&self) -> bool {
        !self.per_class.is_empty()
    }
}

/// AP over `num_classes` classes; classes without ground truth are skipped.
pub fn ap_suite(dets: &[EvalDetection], gts: &[EvalGroundTruth], num_classes: usize) -> ApReport {
    let per_class: Vec<ClassAp> = (0..num_classes)
        .into_par_iter()
        .filter_map(|c| class_ap(dets, gts, c))
        .collect();
    let n = per_class.len() as f64;
    let (ap, ap50) = if per_class.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (
            per_class.iter().map(|c| c.ap).sum::<f64>() / n,
            per_class.iter().map(|c| c.ap50).sum::<f64>() / n,
        )
    };
    ApReport { ap, ap50, per_class }
}

fn class_ap(dets: &[EvalDetection], gts: &[EvalGroundTruth], class_id: usize) -> Option<ClassAp> {
    let gts: Vec<&EvalGroundTruth> = gts.iter().filter(|g| g.class_id == class_id).collect();
    if gts.is_empty() {
        return None;
    }
    let mut dets: Vec<&EvalDetection> = dets.iter().filter(|d| d.class_id == class_id).collect();
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));

    let mut images: Vec<usize> = dets.iter().map(|d| d.image).chain(gts.iter().map(|g| g.image)).collect();
    images.sort_unstable();
    images.dedup();

    // per image: detection indices (score order) and their IoU rows
    let groups: Vec<(Vec<usize>, Vec<Vec<f64>>, usize)> = images
        .iter()
        .map(|&img| {
            let di: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].image == img).collect();
            let gi: Vec<&EvalGroundTruth> = gts.iter().copied().filter(|g| g.image == img).collect();
            let ious = di
                .iter()
                .map(|&i| gi.iter().map(|g| dets[i].mask.iou(&g.mask)).collect())
                .collect();
            (di, ious, gi.len())
        })
        .collect();

    let per_threshold: Vec<f64> = iou_thresholds()
        .iter()
        .map(|&t| {
            let mut scored = vec![(0.0, false); dets.len()];
            for (di, ious, ng) in &groups {
                for (k, m) in match_at_iou(ious, *ng, t).into_iter().enumerate() {
                    scored[di[k]] = (dets[di[k]].score, m.is_some());
                }
            }
            average_precision(&scored, gts.len()).expect("class has ground truth")
        })
        .collect();
    Some(ClassAp {
        class_id,
        num_gt: gts.len(),
        ap: per_threshold.iter().sum::<f64>() / NUM_THRESHOLDS as f64,
        ap50: per_threshold[0],
        per_threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{mask_iou, rasterize_polygon, Point2};
    use proptest::prelude::*;

    fn rect(x0: usize, y0: usize, w: usize, h: usize) -> RunMask {
        RunMask::from_mask(&InstanceMask::from_fn(64, 64, |x, y| {
            (x0..x0 + w).contains(&x) && (y0..y0 + h).contains(&y)
        }))
    }

    fn gt(image: usize, class_id: usize, mask: RunMask) -> EvalGroundTruth {
        EvalGroundTruth { image, class_id, mask }
    }

    fn dt(image: usize, class_id: usize, score: f64, mask: RunMask) -> EvalDetection {
        EvalDetection { image, class_id, score, mask }
    }

    #[test]
    fn run_mask_iou_matches_dense() {
        let a = Polygon::new(vec![Point2::new(3.3, 2.0), Point2::new(40.0, 9.5), Point2::new(20.0, 50.0)]).unwrap();
        let b = Polygon::new(vec![Point2::new(10.0, 10.0), Point2::new(50.0, 12.0), Point2::new(45.0, 40.0), Point2::new(8.0, 30.0)]).unwrap();
        let (ma, mb) = (rasterize_polygon(&a, 64, 64), rasterize_polygon(&b, 64, 64));
        assert_eq!(RunMask::from_polygon(&a, 64, 64), RunMask::from_mask(&ma));
        let dense = mask_iou(&ma, &mb).unwrap();
        let runs = RunMask::from_polygon(&a, 64, 64).iou(&RunMask::from_polygon(&b, 64, 64));
        assert_eq!(dense, runs);
    }

    #[test]
    fn greedy_matching_rules() {
        // two detections on one gt: the better scored one wins
        assert_eq!(match_at_iou(&[vec![0.9], vec![0.95]], 1, 0.5), vec![Some(0), None]);
        assert_eq!(match_at_iou(&[vec![0.45]], 1, 0.5), vec![None]);
        // a detection takes its best unmatched gt
        assert_eq!(match_at_iou(&[vec![0.6, 0.8], vec![0.7, 0.0]], 2, 0.5), vec![Some(1), Some(0)]);
        assert_eq!(match_at_iou(&[vec![1.0]], 1, 0.95), vec![Some(0)]);
    }

    /// Hand-enumerated PR curve: ranks (FP, TP) give recall [0, 1] and
    /// precision [0, 1/2]. The envelope is 1/2 everywhere, so every one of
    /// the 101 recall points reads 1/2.
    #[test]
    fn tp_after_fp_is_one_half() {
        assert_eq!(average_precision(&[(0.9, false), (0.8, true)], 1), Some(0.5));
        assert_eq!(average_precision(&[(0.8, true)], 1), Some(1.0));
        assert_eq!(average_precision(&[], 3), Some(0.0));
        assert_eq!(average_precision(&[(0.8, false)], 0), None);
    }

    /// Recall points 0..=50 (r <= 0.5) read precision 1 at rank 1, points
    /// 51..=100 read 2/3 after the envelope over ranks (TP, FP, TP).
    #[test]
    fn two_gt_pr_curve_by_hand() {
        let ap = average_precision(&[(0.9, true), (0.8, false), (0.7, true)], 2).unwrap();
        let oracle = (51.0 * 1.0 + 50.0 * (2.0 / 3.0)) / 101.0;
        assert!((ap - oracle).abs() < 1e-15, "{ap} vs {oracle}");
    }

    #[test]
    fn single_tp_suite_is_exactly_one() {
        let r = ap_suite(&[dt(0, 0, 0.9, rect(4, 4, 10, 10))], &[gt(0, 0, rect(4, 4, 10, 10))], 1);
        assert_eq!((r.ap, r.ap50), (1.0, 1.0));
    }

    #[test]
    fn iou_057_counts_two_thresholds() {
        // 19x12 detection inside a 20x20 gt: IoU = 228 / 400
        let g = rect(10, 10, 20, 20);
        let d = rect(10, 10, 19, 12);
        let iou = d.iou(&g);
        assert_eq!(iou, 0.57);
        // count the thresholds the IoU clears, independently of the evaluator
        let cleared = (0..10).filter(|k| iou >= 0.5 + 0.05 * *k as f64 - 1e-12).count();
        assert_eq!(cleared, 2);
        let r = ap_suite(&[dt(0, 0, 0.8, d)], &[gt(0, 0, g)], 1);
        assert!((r.ap - cleared as f64 / 10.0).abs() < 1e-9);
        assert_eq!(r.ap50, 1.0);
    }

    #[test]
    fn empty_and_identical_suites() {
        let r = ap_suite(&[], &[], 3);
        assert!(r.ap.is_nan() && r.ap50.is_nan() && !r.has_data());
        let masks = [rect(1, 1, 8, 8), rect(20, 20, 10, 5), rect(40, 2, 6, 30)];
        let gts: Vec<_> = masks.iter().enumerate().map(|(c, m)| gt(0, c, m.clone())).collect();
        let dts: Vec<_> = masks.iter().enumerate().map(|(c, m)| dt(0, c, 0.5, m.clone())).collect();
        let r = ap_suite(&dts, &gts, 3);
        assert_eq!((r.ap, r.ap50, r.per_class.len()), (1.0, 1.0, 3));
        // no detections at all
        let r = ap_suite(&[], &gts, 5);
        assert_eq!((r.ap, r.per_class.len()), (0.0, 3));
    }

    #[test]
    fn matching_stays_within_image() {
        let g = [gt(0, 0, rect(4, 4, 10, 10)), gt(1, 0, rect(4, 4, 10, 10))];
        let d = [dt(1, 0, 0.9, rect(4, 4, 10, 10))];
        let r = ap_suite(&d, &g, 1);
        assert!((r.ap - 51.0 / 101.0).abs() < 1e-15);
    }

    /// Disjoint ground truth on a grid and jittered detections near them.
    fn arb_case() -> impl Strategy<Value = (Vec<EvalGroundTruth>, Vec<EvalDetection>)> {
        let cell = (0usize..2, 0usize..2, 0usize..3, 0usize..3, 4usize..9, 4usize..9);
        prop::collection::vec((cell, prop::collection::vec((0usize..4, 0usize..4, 0.0..1.0f64), 0..3)), 1..8).prop_map(
            |items| {
                let mut gts = Vec::new();
                let mut dts = Vec::new();
                for (slot, ((img, cls, ox, oy, w, h), dets)) in items.into_iter().enumerate() {
                    let (bx, by) = ((slot % 4) * 16, (slot / 4) * 16);
                    gts.push(gt(img, cls, rect(bx + ox, by + oy, w, h)));
                    for (dx, dy, s) in dets {
                        dts.push(dt(img, cls, s, rect(bx + dx, by + dy, w, h)));
                    }
                }
                (gts, dts)
            },
        )
    }

    proptest! {
        #[test]
        fn monotone_score_transform_invariant((gts, dts) in arb_case()) {
            let a = ap_suite(&dts, &gts, 2);
            let warped: Vec<_> = dts.iter().map(|d| EvalDetection { score: (3.0 * d.score).exp() - 7.0, ..d.clone() }).collect();
            let b = ap_suite(&warped, &gts, 2);
            prop_assert_eq!(a.ap.to_bits(), b.ap.to_bits());
        }

        #[test]
        fn duplicate_never_helps((gts, dts) in arb_case(), pick in 0usize..32) {
            prop_assume!(!dts.is_empty());
            let base = ap_suite(&dts, &gts, 2);
            let src = &dts[pick % dts.len()];
            let mut more = dts.clone();
            more.push(EvalDetection { score: src.score * 0.5, ..src.clone() });
            let r = ap_suite(&more, &gts, 2);
            prop_assert!(r.ap <= base.ap + 1e-12);
            prop_assert!(r.ap50 <= base.ap50 + 1e-12);
        }

        #[test]
        fn ap50_dominates((gts, dts) in arb_case()) {
            let r = ap_suite(&dts, &gts, 2);
            prop_assert!(r.ap50 >= r.ap - 1e-12);
            for c in &r.per_class {
                prop_assert!(c.per_threshold.windows(2).all(|w| w[0] >= w[1] - 1e-12));
            }
        }
    }
}
