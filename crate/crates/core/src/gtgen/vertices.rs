//! Fixed-count polygon extraction from an instance mask.
//!
//! Sample points are spread evenly over the four sides of the tight box,
//! starting at the top-left corner and moving clockwise. From each sample a
//! discrete line is walked toward the box center; the first set pixel on it
//! becomes the vertex. This gives every n-th vertex roughly the same bearing
//! from the center across instances.

use crate::error::{Error, Result};
use crate::geometry::{tight_bbox, InstanceMask, Point2, Polygon};

/// Integer points of the segment `from -> to`, both ends included.
pub(crate) fn bresenham(from: (i64, i64), to: (i64, i64)) -> impl Iterator<Item = (i64, i64)> {
    let (mut x, mut y) = from;
    let dx = (to.0 - x).abs();
    let dy = -(to.1 - y).abs();
    let sx = if x < to.0 { 1 } else { -1 };
    let sy = if y < to.1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut done = false;
    std::iter::from_fn(move || {
        if done {
            return None;
        }
        let out = (x, y);
        if (x, y) == to {
            done = true;
        } else {
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
        Some(out)
    })
}

/// Sample points on the tight box boundary, clockwise from the top-left
/// corner, `n / 4` per side.
pub fn boundary_samples(mask: &InstanceMask, n: usize) -> Result<Vec<(i64, i64)>> {
    if n == 0 || !n.is_multiple_of(4) {
        return Err(Error::BadN(n));
    }
    let bb = tight_bbox(mask)?;
    let per_side = n / 4;
    let (w, h) = (bb.width(), bb.height());
    let sides = [
        ((bb.x0, bb.y0), (w, 0.0)),
        ((bb.x1, bb.y0), (0.0, h)),
        ((bb.x1, bb.y1), (-w, 0.0)),
        ((bb.x0, bb.y1), (0.0, -h)),
    ];
    let mut out = Vec::with_capacity(n);
    for ((sx, sy), (dx, dy)) in sides {
        for i in 0..per_side {
            let t = i as f64 / per_side as f64;
            out.push(((sx + dx * t).round() as i64, (sy + dy * t).round() as i64));
        }
    }
    Ok(out)
}

/// Selects `n` contour vertices of `mask` by ray casting from the tight box
/// toward its center. A ray that reaches the center without hitting the
/// mask (possible for non-star-shaped masks) falls back to its box sample.
pub fn select_vertices(mask: &InstanceMask, n: usize) -> Result<Polygon> {
    let samples = boundary_samples(mask, n)?;
    let c = tight_bbox(mask)?.center();
    let center = (c.x.round() as i64, c.y.round() as i64);
    let vertices = samples
        .into_iter()
        .map(|start| {
            let (x, y) = bresenham(start, center)
                .find(|&(x, y)| mask.get_signed(x, y))
                .unwrap_or(start);
            Point2::new(x as f64, y as f64)
        })
        .collect();
    Polygon::new(vertices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{mask_iou, rasterize_polygon};

    #[test]
    fn bresenham_endpoints_and_connectivity() {
        for &(a, b) in &[((0, 0), (7, 3)), ((5, 9), (-2, 1)), ((3, 3), (3, 3)), ((0, 4), (0, -4))] {
            let pts: Vec<_> = bresenham(a, b).collect();
            assert_eq!(pts[0], a);
            assert_eq!(*pts.last().unwrap(), b);
            for w in pts.windows(2) {
                assert!((w[0].0 - w[1].0).abs() <= 1 && (w[0].1 - w[1].1).abs() <= 1);
            }
            let expected = (b.0 - a.0).abs().max((b.1 - a.1).abs()) as usize + 1;
            assert_eq!(pts.len(), expected);
        }
    }

    #[test]
    fn rejects_bad_vertex_counts() {
        let m = InstanceMask::from_fn(4, 4, |_, _| true);
        assert!(matches!(select_vertices(&m, 6), Err(Error::BadN(6))));
        assert!(matches!(select_vertices(&m, 0), Err(Error::BadN(0))));
        assert!(matches!(
            select_vertices(&InstanceMask::new(4, 4), 8),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn filled_rectangle_gives_corners() {
        let m = InstanceMask::from_fn(20, 20, |x, y| (3..=12).contains(&x) && (5..=9).contains(&y));
        let p = select_vertices(&m, 4).unwrap();
        let v: Vec<_> = p.vertices().iter().map(|p| (p.x, p.y)).collect();
        assert_eq!(v, vec![(3.0, 5.0), (12.0, 5.0), (12.0, 9.0), (3.0, 9.0)]);
    }

    /// Independent oracle: march along the ray in small real steps and test
    /// the disk equation directly.
    #[test]
    fn disk_vertices_lie_on_circle() {
        let (cx, cy, r) = (30.0f64, 28.0f64, 15.0f64);
        let inside = |x: f64, y: f64| (x - cx).powi(2) + (y - cy).powi(2) <= r * r;
        let m = InstanceMask::from_fn(64, 64, |x, y| inside(x as f64, y as f64));
        let poly = select_vertices(&m, 16).unwrap();
        let samples = boundary_samples(&m, 16).unwrap();
        assert_eq!(poly.len(), 16);
        for (v, s) in poly.vertices().iter().zip(samples) {
            let d = v.distance(Point2::new(cx, cy));
            assert!((d - r).abs() <= 1.5, "vertex {v:?} at distance {d}");
            // the ray oracle's first interior point along the same segment
            let (sx, sy) = (s.0 as f64, s.1 as f64);
            let (ex, ey) = (30.0, 28.0);
            let mut t = 0.0;
            while !inside(sx + (ex - sx) * t, sy + (ey - sy) * t) {
                t += 1e-4;
            }
            let hit = Point2::new(sx + (ex - sx) * t, sy + (ey - sy) * t);
            assert!(v.distance(hit) <= 1.5, "{v:?} vs oracle {hit:?}");
        }
    }

    #[test]
    fn first_vertex_on_top_left_ray() {
        let m = InstanceMask::from_fn(40, 40, |x, y| {
            let (dx, dy) = (x as f64 - 20.0, y as f64 - 18.0);
            dx * dx / 200.0 + dy * dy / 80.0 <= 1.0
        });
        let poly = select_vertices(&m, 16).unwrap();
        let bb = tight_bbox(&m).unwrap();
        let c = bb.center();
        let start = (bb.x0 as i64, bb.y0 as i64);
        let ray: Vec<_> = bresenham(start, (c.x.round() as i64, c.y.round() as i64)).collect();
        let v0 = poly.vertices()[0];
        assert!(ray.contains(&(v0.x as i64, v0.y as i64)));
    }

    #[test]
    fn vertices_on_set_pixels_or_fallback() {
        // a "C" shape: rays from the open side reach the center unhindered
        let m = InstanceMask::from_fn(40, 40, |x, y| {
            let (dx, dy) = (x as f64 - 20.0, y as f64 - 20.0);
            let d2 = dx * dx + dy * dy;
            (100.0..=324.0).contains(&d2) && !(dx > 0.0 && dy.abs() < 6.0)
        });
        let poly = select_vertices(&m, 32).unwrap();
        let bb = tight_bbox(&m).unwrap();
        let mut fallbacks = 0;
        for v in poly.vertices() {
            if !m.get(v.x as usize, v.y as usize) {
                fallbacks += 1;
                let on_edge = v.x == bb.x0 || v.x == bb.x1 || v.y == bb.y0 || v.y == bb.y1;
                assert!(on_edge, "fallback vertex {v:?} not on box boundary");
            }
        }
        assert!(fallbacks > 0);
        assert_eq!(poly.len(), 32);
    }

    fn rotated_ellipse(a: f64, b: f64) -> InstanceMask {
        InstanceMask::from_fn(80, 80, |x, y| {
            let (dx, dy) = (x as f64 - 40.0, y as f64 - 38.0);
            let (u, v) = (0.8 * dx + 0.6 * dy, -0.6 * dx + 0.8 * dy);
            u * u / (a * a) + v * v / (b * b) <= 1.0
        })
    }

    #[test]
    fn convex_mask_round_trip_iou() {
        let m = rotated_ellipse(30.0, 22.0);
        let p = select_vertices(&m, 16).unwrap();
        let iou = mask_iou(&rasterize_polygon(&p, 80, 80), &m).unwrap();
        assert!(iou >= 0.95, "iou {iou}");
    }

    #[test]
    fn more_vertices_fit_elongated_shapes_better() {
        let m = rotated_ellipse(30.0, 300f64.sqrt());
        let iou = |n| mask_iou(&rasterize_polygon(&select_vertices(&m, n).unwrap(), 80, 80), &m).unwrap();
        let (i16, i32) = (iou(16), iou(32));
        assert!(i16 >= 0.9 && i32 > i16, "{i16} {i32}");
    }
}
