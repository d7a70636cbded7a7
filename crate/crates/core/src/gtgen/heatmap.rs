//! Center heatmap rendering with elliptical Gaussians.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;

/// Minimum IoU a box shifted by the radius must keep with the original.
pub const DEFAULT_MIN_OVERLAP: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LongAxis {
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipseSpec {
    /// Feature-map coordinates; rounded to the nearest cell when rendering.
    pub center: Point2,
    pub r_small: f64,
    pub r_large: f64,
    pub long_axis: LongAxis,
}

impl EllipseSpec {
    /// Ellipse for a box of `box_w` x `box_h` (feature units) whose short
    /// radius is the circular radius and whose radii ratio follows the box.
    pub fn for_box(center: Point2, box_w: f64, box_h: f64, min_overlap: f64) -> Self {
        let r_small = gaussian_radius(box_w, box_h, min_overlap);
        let (long, short) = (box_w.max(box_h), box_w.min(box_h));
        Self {
            center,
            r_small,
            r_large: r_small * long / short,
            long_axis: if box_w >= box_h {
                LongAxis::Horizontal
            } else {
                LongAxis::Vertical
            },
        }
    }

    /// `(radius_x, radius_y)`.
    pub fn radii(&self) -> (f64, f64) {
        match self.long_axis {
            LongAxis::Horizontal => (self.r_large, self.r_small),
            LongAxis::Vertical => (self.r_small, self.r_large),
        }
    }

    /// Per-axis standard deviation `(2r + 1) / 6`.
    pub fn sigmas(&self) -> (f64, f64) {
        let (rx, ry) = self.radii();
        ((2.0 * rx + 1.0) / 6.0, (2.0 * ry + 1.0) / 6.0)
    }
}

/// Largest shift radius such that a box of the given size, with its
/// corners displaced by up to that radius, keeps IoU >= `min_overlap` with
/// the original. Three displacement patterns are considered and the
/// smallest admissible radius wins:
///
/// 1. both corners moved in the same direction (box translated);
/// 2. both corners moved inward (box shrunk);
/// 3. both corners moved outward (box grown).
///
/// Each case is a quadratic in the radius; the admissible root is taken.
pub fn gaussian_radius(box_w: f64, box_h: f64, min_overlap: f64) -> f64 {
    let (w, h, o) = (box_w, box_h, min_overlap);
    let sum = w + h;
    let area = w * h;

    // translated: (w - r)(h - r) / (2wh - (w - r)(h - r)) = o
    let c1 = area * (1.0 - o) / (1.0 + o);
    let r1 = (sum - (sum * sum - 4.0 * c1).max(0.0).sqrt()) / 2.0;

    // shrunk: (w - 2r)(h - 2r) / wh = o
    let (a2, b2, c2) = (4.0, -2.0 * sum, (1.0 - o) * area);
    let r2 = (-b2 - (b2 * b2 - 4.0 * a2 * c2).max(0.0).sqrt()) / (2.0 * a2);

    // grown: wh / ((w + 2r)(h + 2r)) = o
    let (a3, b3, c3) = (4.0 * o, 2.0 * o * sum, (o - 1.0) * area);
    let r3 = (-b3 + (b3 * b3 - 4.0 * a3 * c3).max(0.0).sqrt()) / (2.0 * a3);

    r1.min(r2).min(r3).max(0.0)
}

/// Splats an elliptical Gaussian into a `width` x `height` plane with a
/// per-cell max. The center cell receives exactly 1.0.
pub fn render_elliptical_gaussian(
    plane: &mut [f64],
    width: usize,
    height: usize,
    spec: &EllipseSpec,
) -> Result<()> {
    debug_assert_eq!(plane.len(), width * height);
    let (cx, cy) = (spec.center.x.round(), spec.center.y.round());
    if !(cx >= 0.0 && cy >= 0.0 && cx < width as f64 && cy < height as f64) {
        return Err(Error::OutOfBounds {
            x: spec.center.x,
            y: spec.center.y,
            width,
            height,
        });
    }
    let (cx, cy) = (cx as i64, cy as i64);
    let (sx, sy) = spec.sigmas();
    let (ex, ey) = ((3.0 * sx).ceil() as i64, (3.0 * sy).ceil() as i64);
    let (kx, ky) = (1.0 / (2.0 * sx * sx), 1.0 / (2.0 * sy * sy));
    for y in (cy - ey).max(0)..=(cy + ey).min(height as i64 - 1) {
        let dy = (y - cy) as f64;
        let row = &mut plane[y as usize * width..(y as usize + 1) * width];
        for x in (cx - ex).max(0)..=(cx + ex).min(width as i64 - 1) {
            let dx = (x - cx) as f64;
            let v = (-(dx * dx * kx + dy * dy * ky)).exp();
            let cell = &mut row[x as usize];
            if v > *cell {
                *cell = v;
            }
        }
    }
    Ok(())
}
