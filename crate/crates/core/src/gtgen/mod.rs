//! Ground-truth generation: annotated instance masks become fixed-length
//! polygons and the dense targets of the four output heads (center
//! heatmaps, polygon offsets, relative depth, sub-cell center offsets).

mod heatmap;
mod vertices;

use std::collections::HashMap;

pub use heatmap::{
    gaussian_radius, render_elliptical_gaussian, EllipseSpec, LongAxis, DEFAULT_MIN_OVERLAP,
};
pub use vertices::{boundary_samples, select_vertices};

use crate::error::{Error, Result};
use crate::geometry::{polygon_centroid, tight_bbox, BBox, InstanceMask, Point2, Polygon};
use crate::tensor::Tensor;

pub const DEFAULT_NUM_VERTICES: usize = 16;
pub const DEFAULT_STRIDE: usize = 4;
pub const DEFAULT_MAX_OBJECTS: usize = 128;

/// One annotated instance. `order_index` is its position in the source
/// annotation file: annotators record instances from furthest to closest.
#[derive(Debug, Clone)]
pub struct Annotation {
    pub class_id: usize,
    pub mask: InstanceMask,
    pub order_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtConfig {
    pub img_width: usize,
    pub img_height: usize,
    pub num_classes: usize,
    pub num_vertices: usize,
    pub stride: usize,
    pub max_objects: usize,
    pub min_overlap: f64,
}

impl GtConfig {
    pub fn new(img_width: usize, img_height: usize, num_classes: usize) -> Self {
        Self {
            img_width,
            img_height,
            num_classes,
            num_vertices: DEFAULT_NUM_VERTICES,
            stride: DEFAULT_STRIDE,
            max_objects: DEFAULT_MAX_OBJECTS,
            min_overlap: DEFAULT_MIN_OVERLAP,
        }
    }

    /// Output grid `(width, height)` in cells.
    pub fn grid(&self) -> (usize, usize) {
        (
            self.img_width.div_ceil(self.stride),
            self.img_height.div_ceil(self.stride),
        )
    }

    fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::InvalidArgument("stride must be >= 1".into()));
        }
        if self.num_vertices == 0 || !self.num_vertices.is_multiple_of(4) {
            return Err(Error::BadN(self.num_vertices));
        }
        if self.num_classes == 0 || self.img_width == 0 || self.img_height == 0 {
            return Err(Error::InvalidArgument(
                "image size and class count must be positive".into(),
            ));
        }
        if !(self.min_overlap > 0.0 && self.min_overlap < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "min_overlap {} outside (0, 1)",
                self.min_overlap
            )));
        }
        Ok(())
    }
}

/// Dense targets for one image, padded to `max_objects` slots.
///
/// Layouts: `heatmaps` is `[C, H, W]`, `poly_offsets` is `[2N, K]` with
/// rows `x1, y1, x2, y2, ...` in feature-map units relative to the center,
/// `depth` is `[K]`, `subpixel_offsets` is `[2, K]` (x row then y row).
#[derive(Debug, Clone, PartialEq)]
pub struct GtTensors {
    pub stride: usize,
    pub num_vertices: usize,
    pub heatmaps: Tensor,
    pub poly_offsets: Tensor,
    pub depth: Tensor,
    pub subpixel_offsets: Tensor,
    /// Row-major cell index `y * W + x` of each object's center.
    pub center_cells: Vec<usize>,
    pub valid: Vec<bool>,
}

impl GtTensors {
    pub fn num_classes(&self) -> usize {
        self.heatmaps.dims()[0]
    }

    /// `(width, height)` of the output grid.
    pub fn grid(&self) -> (usize, usize) {
        (self.heatmaps.dims()[2], self.heatmaps.dims()[1])
    }

    pub fn max_objects(&self) -> usize {
        self.valid.len()
    }

    pub fn num_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn poly_offset(&self, slot: usize, channel: usize) -> f64 {
        self.poly_offsets.data()[channel * self.max_objects() + slot]
    }
}

/// Per-instance by-products of ground-truth building.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedInstance {
    pub class_id: usize,
    pub order_index: usize,
    pub polygon: Polygon,
    /// Mean of the polygon vertices, image pixels.
    pub center: Point2,
    pub bbox: BBox,
    pub depth: f64,
    pub slot: usize,
    pub ellipse: EllipseSpec,
}

/// Normalized rank `(i + 1) / K` for instances listed furthest first:
/// smaller means further away.
pub fn depth_rank_values(count: usize) -> Vec<f64> {
    (0..count).map(|i| (i + 1) as f64 / count as f64).collect()
}

pub fn build_gt(annotations: &[Annotation], cfg: &GtConfig) -> Result<GtTensors> {
    encode_instances(annotations, cfg).map(|(gt, _)| gt)
}

/// Builds the targets and also returns each instance's polygon, center and
/// heatmap ellipse, ordered furthest first.
///
/// Instances are sorted by `order_index` (stable). When two instances fall
/// on the same center cell the closer one keeps the regression targets and
/// the further one's slot is marked invalid; both still get a heatmap peak.
pub fn encode_instances(
    annotations: &[Annotation],
    cfg: &GtConfig,
) -> Result<(GtTensors, Vec<EncodedInstance>)> {
    cfg.validate()?;
    if annotations.len() > cfg.max_objects {
        return Err(Error::TooManyObjects {
            count: annotations.len(),
            max: cfg.max_objects,
        });
    }
    let (gw, gh) = cfg.grid();
    let (n, k, r) = (cfg.num_vertices, cfg.max_objects, cfg.stride as f64);

    let mut sorted: Vec<&Annotation> = annotations.iter().collect();
    sorted.sort_by_key(|a| a.order_index);
    let depths = depth_rank_values(sorted.len());

    let mut heatmaps = Tensor::zeros(&[cfg.num_classes, gh, gw]);
    let mut poly_offsets = Tensor::zeros(&[2 * n, k]);
    let mut depth = Tensor::zeros(&[k]);
    let mut subpixel = Tensor::zeros(&[2, k]);
    let mut center_cells = vec![0usize; k];
    let mut valid = vec![false; k];
    let mut owner: HashMap<usize, usize> = HashMap::new();
    let mut instances = Vec::with_capacity(sorted.len());

    for (slot, (ann, &d)) in sorted.iter().zip(&depths).enumerate() {
        if ann.class_id >= cfg.num_classes {
            return Err(Error::InvalidArgument(format!(
                "class {} outside [0, {})",
                ann.class_id, cfg.num_classes
            )));
        }
        if ann.mask.dims() != (cfg.img_width, cfg.img_height) {
            return Err(Error::DimensionMismatch {
                left: ann.mask.dims(),
                right: (cfg.img_width, cfg.img_height),
            });
        }
        let polygon = select_vertices(&ann.mask, n)?;
        let bbox = tight_bbox(&ann.mask)?;
        let center = polygon_centroid(&polygon);
        let (fx, fy) = (center.x / r, center.y / r);
        let (cx, cy) = (fx.floor(), fy.floor());
        let cell = cy as usize * gw + cx as usize;

        let ellipse = EllipseSpec::for_box(
            Point2::new(cx, cy),
            (bbox.width() + 1.0) / r,
            (bbox.height() + 1.0) / r,
            cfg.min_overlap,
        );
        render_elliptical_gaussian(heatmaps.plane_mut(ann.class_id), gw, gh, &ellipse)?;

        for (v, p) in polygon.vertices().iter().enumerate() {
            poly_offsets.data_mut()[2 * v * k + slot] = (p.x - center.x) / r;
            poly_offsets.data_mut()[(2 * v + 1) * k + slot] = (p.y - center.y) / r;
        }
        depth.data_mut()[slot] = d;
        subpixel.data_mut()[slot] = fx - cx;
        subpixel.data_mut()[k + slot] = fy - cy;
        center_cells[slot] = cell;
        valid[slot] = true;
        if let Some(prev) = owner.insert(cell, slot) {
            valid[prev] = false;
        }

        instances.push(EncodedInstance {
            class_id: ann.class_id,
            order_index: ann.order_index,
            polygon,
            center,
            bbox,
            depth: d,
            slot,
            ellipse,
        });
    }

    let gt = GtTensors {
        stride: cfg.stride,
        num_vertices: n,
        heatmaps,
        poly_offsets,
        depth,
        subpixel_offsets: subpixel,
        center_cells,
        valid,
    };
    Ok((gt, instances))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(w: usize, h: usize, x0: usize, y0: usize, side: usize) -> InstanceMask {
        InstanceMask::from_fn(w, h, |x, y| {
            (x0..x0 + side).contains(&x) && (y0..y0 + side).contains(&y)
        })
    }

    fn ann(class_id: usize, mask: InstanceMask, order_index: usize) -> Annotation {
        Annotation {
            class_id,
            mask,
            order_index,
        }
    }

    #[test]
    fn depth_ranks() {
        assert_eq!(depth_rank_values(1), vec![1.0]);
        assert_eq!(depth_rank_values(4), vec![0.25, 0.5, 0.75, 1.0]);
        let v = depth_rank_values(7);
        assert!(v.windows(2).all(|w| w[0] < w[1]));
        assert!(v.iter().all(|&d| d > 0.0 && d <= 1.0));
    }

    #[test]
    fn single_square_has_one_peak_at_center_cell() {
        let cfg = GtConfig::new(64, 64, 2);
        let (gt, inst) = encode_instances(&[ann(1, square(64, 64, 20, 20, 17), 0)], &cfg).unwrap();
        let c = inst[0].center;
        assert_eq!(c, Point2::new(28.0, 28.0));
        let (gw, _) = gt.grid();
        let cell = (c.y / 4.0).floor() as usize * gw + (c.x / 4.0).floor() as usize;
        assert_eq!(gt.center_cells[0], cell);
        let ones: Vec<usize> = (0..gt.heatmaps.plane_len())
            .filter(|&i| gt.heatmaps.plane(1)[i] == 1.0)
            .collect();
        assert_eq!(ones, vec![cell]);
        assert!(gt.heatmaps.plane(0).iter().all(|&v| v == 0.0));
        assert_eq!(gt.num_valid(), 1);
        assert_eq!(gt.depth.data()[0], 1.0);
    }

    #[test]
    fn overlapping_same_class_is_per_cell_max() {
        let cfg = GtConfig::new(64, 64, 1);
        let a = ann(0, square(64, 64, 10, 10, 20), 0);
        let b = ann(0, square(64, 64, 22, 14, 20), 1);
        let both = build_gt(&[a.clone(), b.clone()], &cfg).unwrap();
        let ga = build_gt(&[a], &cfg).unwrap();
        let gb = build_gt(&[b], &cfg).unwrap();
        for i in 0..both.heatmaps.len() {
            assert_eq!(
                both.heatmaps.data()[i],
                ga.heatmaps.data()[i].max(gb.heatmaps.data()[i])
            );
        }
    }

    #[test]
    fn offsets_and_heatmap_ranges() {
        let cfg = GtConfig::new(50, 38, 3);
        let anns = vec![
            ann(0, square(50, 38, 1, 2, 9), 2),
            ann(2, square(50, 38, 30, 20, 13), 0),
            ann(1, square(50, 38, 17, 5, 6), 1),
        ];
        let gt = build_gt(&anns, &cfg).unwrap();
        assert!(gt.subpixel_offsets.data().iter().all(|&v| (0.0..1.0).contains(&v)));
        assert!(gt.heatmaps.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(gt.valid.iter().filter(|&&v| v).count(), 3);
        assert!(gt.valid[3..].iter().all(|&v| !v));
        // sorted furthest first: slot 0 is order 0 (class 2)
        let cell = gt.center_cells[0];
        assert_eq!(gt.heatmaps.plane(2)[cell], 1.0);
    }

    #[test]
    fn polygon_offsets_reconstruct_vertices() {
        let cfg = GtConfig::new(64, 48, 1);
        let mask = InstanceMask::from_fn(64, 48, |x, y| {
            let (dx, dy) = (x as f64 - 30.0, y as f64 - 20.0);
            dx * dx / 300.0 + dy * dy / 120.0 <= 1.0
        });
        let (gt, inst) = encode_instances(&[ann(0, mask, 0)], &cfg).unwrap();
        let c = inst[0].center;
        for (v, p) in inst[0].polygon.vertices().iter().enumerate() {
            let x = c.x + gt.poly_offset(0, 2 * v) * 4.0;
            let y = c.y + gt.poly_offset(0, 2 * v + 1) * 4.0;
            assert!((x - p.x).abs() < 1e-9 && (y - p.y).abs() < 1e-9);
        }
    }

    #[test]
    fn shared_center_cell_keeps_closer_object() {
        let cfg = GtConfig::new(64, 64, 2);
        let far = ann(0, square(64, 64, 20, 20, 17), 0);
        let near = ann(1, square(64, 64, 21, 21, 15), 1);
        let gt = build_gt(&[near, far], &cfg).unwrap();
        assert_eq!(gt.center_cells[0], gt.center_cells[1]);
        assert_eq!(gt.valid[..2], [false, true]);
        let cell = gt.center_cells[0];
        assert_eq!(gt.heatmaps.plane(0)[cell], 1.0);
        assert_eq!(gt.heatmaps.plane(1)[cell], 1.0);
    }

    #[test]
    fn permuting_input_changes_nothing_but_order_indices_change_depth() {
        let cfg = GtConfig::new(64, 64, 1);
        let a = ann(0, square(64, 64, 5, 5, 12), 0);
        let b = ann(0, square(64, 64, 30, 30, 20), 1);
        let g1 = build_gt(&[a.clone(), b.clone()], &cfg).unwrap();
        let g2 = build_gt(&[b.clone(), a.clone()], &cfg).unwrap();
        assert_eq!(g1, g2);
        let swapped = build_gt(
            &[ann(0, a.mask.clone(), 1), ann(0, b.mask.clone(), 0)],
            &cfg,
        )
        .unwrap();
        assert_eq!(swapped.heatmaps, g1.heatmaps);
        assert_ne!(swapped.center_cells[..2], g1.center_cells[..2]);
        assert_eq!(swapped.depth.data()[..2], g1.depth.data()[..2]);
    }

    #[test]
    fn errors() {
        let cfg = GtConfig {
            max_objects: 1,
            ..GtConfig::new(16, 16, 1)
        };
        let a = ann(0, square(16, 16, 1, 1, 4), 0);
        assert!(matches!(
            build_gt(&[a.clone(), a.clone()], &cfg),
            Err(Error::TooManyObjects { count: 2, max: 1 })
        ));
        assert!(matches!(
            build_gt(&[ann(3, a.mask.clone(), 0)], &cfg),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            build_gt(&[ann(0, InstanceMask::new(16, 16), 0)], &cfg),
            Err(Error::EmptyMask)
        ));
        let bad_n = GtConfig {
            num_vertices: 10,
            ..cfg.clone()
        };
        assert!(matches!(build_gt(&[a], &bad_n), Err(Error::BadN(10))));
    }
}
