//! 2-D primitives shared by every stage: points, boxes, fixed-length
//! polygons, binary masks and label maps.
//!
//! Conventions:
//! - coordinates are real-valued pixels, pixel `(i, j)` is sampled at its
//!   center, which sits at the integer coordinate `(i, j)`;
//! - polygons are filled with the even-odd rule and points lying exactly on
//!   an edge count as inside. Edge membership uses an exact orientation
//!   predicate, so the scanline rasterizer and the per-point test agree on
//!   every pixel.

use std::ops::{Add, Mul, Sub};

use robust::{orient2d, Coord};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    fn coord(self) -> Coord<f64> {
        Coord {
            x: self.x,
            y: self.y,
        }
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, rhs: f64) -> Point2 {
        Point2::new(self.x * rhs, self.y * rhs)
    }
}

/// Axis-aligned box with inclusive corners (`x0 <= x1`, `y0 <= y1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        debug_assert!(x0 <= x1 && y0 <= y1);
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn center(&self) -> Point2 {
        Point2::new((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }

    pub fn expand(&self, margin: f64) -> BBox {
        BBox::new(
            self.x0 - margin,
            self.y0 - margin,
            self.x1 + margin,
            self.y1 + margin,
        )
    }

    /// True when `inner` lies entirely inside `self`.
    pub fn encloses(&self, inner: &BBox) -> bool {
        inner.x0 >= self.x0 && inner.y0 >= self.y0 && inner.x1 <= self.x1 && inner.y1 <= self.y1
    }
}

/// Ordered closed ring of `N` vertices in image coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    vertices: Vec<Point2>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point2>) -> Result<Self> {
        if vertices.is_empty() {
            return Err(Error::InvalidArgument("polygon needs at least one vertex".into()));
        }
        if let Some(p) = vertices.iter().find(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite vertex {p:?}")));
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn translate(&self, t: Point2) -> Polygon {
        Polygon {
            vertices: self.vertices.iter().map(|&p| p + t).collect(),
        }
    }

    pub fn bbox(&self) -> BBox {
        let mut b = BBox::new(
            self.vertices[0].x,
            self.vertices[0].y,
            self.vertices[0].x,
            self.vertices[0].y,
        );
        for p in &self.vertices[1..] {
            b.x0 = b.x0.min(p.x);
            b.y0 = b.y0.min(p.y);
            b.x1 = b.x1.max(p.x);
            b.y1 = b.y1.max(p.y);
        }
        b
    }

    /// Edges of the closed ring, including the closing edge.
    pub fn edges(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |k| (self.vertices[k], self.vertices[(k + 1) % n]))
    }

    /// Shoelace area; positive for counter-clockwise rings in a y-up frame,
    /// which is clockwise on screen.
    pub fn signed_area(&self) -> f64 {
        self.edges().map(|(a, b)| a.x * b.y - b.x * a.y).sum::<f64>() / 2.0
    }
}

/// Row-major binary occupancy grid for one instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl InstanceMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::ShapeMismatch {
                what: "mask bits",
                expected: vec![width * height],
                actual: vec![bits.len()],
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// Like [`get`](Self::get) but false outside the grid.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.get(x as usize, y as usize)
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Set pixels as `(x, y)` in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(k, _)| (k % w, k / w))
    }
}

/// Per-pixel instance ids, 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    ids: Vec<u16>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            ids: vec![0; width * height],
        }
    }

    pub fn from_ids(width: usize, height: usize, ids: Vec<u16>) -> Result<Self> {
        if ids.len() != width * height {
            return Err(Error::ShapeMismatch {
                what: "label ids",
                expected: vec![width * height],
                actual: vec![ids.len()],
            });
        }
        Ok(Self { width, height, ids })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn ids(&self) -> &[u16] {
        &self.ids
    }

    pub fn ids_mut(&mut self) -> &mut [u16] {
        &mut self.ids
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.ids[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, id: u16) {
        self.ids[y * self.width + x] = id;
    }

    /// Pixels carrying `id`, as a mask.
    pub fn mask_of(&self, id: u16) -> InstanceMask {
        InstanceMask {
            width: self.width,
            height: self.height,
            bits: self.ids.iter().map(|&v| v == id).collect(),
        }
    }
}

/// Minimal box around the set pixel centers.
pub fn tight_bbox(mask: &InstanceMask) -> Result<BBox> {
    let mut it = mask.iter_set();
    let (x, y) = it.next().ok_or(Error::EmptyMask)?;
    let (mut x0, y0, mut x1, mut y1) = (x, y, x, y);
    for (x, y) in it {
        x0 = x0.min(x);
        x1 = x1.max(x);
        // row-major, so the last row seen is the largest
        y1 = y;
    }
    Ok(BBox::new(x0 as f64, y0 as f64, x1 as f64, y1 as f64))
}

/// Arithmetic mean of the vertices.
pub fn polygon_centroid(poly: &Polygon) -> Point2 {
    let n = poly.len() as f64;
    let (sx, sy) = poly
        .vertices()
        .iter()
        .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
    Point2::new(sx / n, sy / n)
}

/// Intersection over union of two equally sized masks; 0 when both are empty.
pub fn mask_iou(a: &InstanceMask, b: &InstanceMask) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            left: a.dims(),
            right: b.dims(),
        });
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}

/// Exact test for `p` lying on the closed segment `ab`.
#[inline]
fn on_segment(a: Point2, b: Point2, p: Point2) -> bool {
    p.x >= a.x.min(b.x)
        && p.x <= a.x.max(b.x)
        && p.y >= a.y.min(b.y)
        && p.y <= a.y.max(b.y)
        && orient2d(a.coord(), b.coord(), p.coord()) == 0.0
}

/// Whether the edge straddles the horizontal line at `y` (half-open in y).
#[inline]
fn straddles(a: Point2, b: Point2, y: f64) -> bool {
    (a.y > y) != (b.y > y)
}

/// X coordinate where a straddling edge meets the line at `y`. Both the
/// point test and the rasterizer use this exact expression.
#[inline]
fn crossing_x(a: Point2, b: Point2, y: f64) -> f64 {
    a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y)
}

/// Even-odd containment; points on an edge are inside.
pub fn point_in_polygon(p: Point2, poly: &Polygon) -> bool {
    let mut inside = false;
    for (a, b) in poly.edges() {
        if on_segment(a, b, p) {
            return true;
        }
        if straddles(a, b, p.y) && p.x < crossing_x(a, b, p.y) {
            inside = !inside;
        }
    }
    inside
}

/// Clamp a real coordinate to an integer column range that is safe to cast.
#[inline]
fn clamp_col(x: f64, width: usize) -> i64 {
    x.clamp(-1.0, width as f64 + 1.0) as i64
}

/// Visits the filled pixels of `poly` clipped to a `width` x `height` grid
/// as merged horizontal runs `f(row, x_start, x_end_exclusive)`, rows in
/// increasing order.
pub fn for_each_span(
    poly: &Polygon,
    width: usize,
    height: usize,
    mut f: impl FnMut(usize, usize, usize),
) {
    if width == 0 || height == 0 {
        return;
    }
    let bb = poly.bbox();
    let row_lo = bb.y0.ceil().max(0.0);
    let row_hi = bb.y1.floor().min(height as f64 - 1.0);
    if row_lo > row_hi {
        return;
    }
    let mut xs: Vec<f64> = Vec::with_capacity(poly.len());
    let mut runs: Vec<(i64, i64)> = Vec::with_capacity(poly.len() * 2);
    for row in row_lo as usize..=row_hi as usize {
        let y = row as f64;
        xs.clear();
        runs.clear();
        for (a, b) in poly.edges() {
            if straddles(a, b, y) {
                xs.push(crossing_x(a, b, y));
            }
            if a.y == b.y {
                if a.y == y {
                    let lo = a.x.min(b.x).ceil();
                    let hi = a.x.max(b.x).floor();
                    if lo <= hi {
                        runs.push((clamp_col(lo, width), clamp_col(hi, width) + 1));
                    }
                }
            } else if a.y.min(b.y) <= y && y <= a.y.max(b.y) {
                // The exact line hits this row at one x; the estimate is
                // within a few ulps of it.
                let est = a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y);
                let lo = clamp_col(est.floor() - 1.0, width);
                let hi = clamp_col(est.ceil() + 1.0, width);
                for i in lo..=hi {
                    if on_segment(a, b, Point2::new(i as f64, y)) {
                        runs.push((i, i + 1));
                    }
                }
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            let lo = clamp_col(pair[0].ceil(), width);
            let hi = clamp_col(pair[1].ceil(), width);
            if lo < hi {
                runs.push((lo, hi));
            }
        }
        if runs.is_empty() {
            continue;
        }
        runs.sort_unstable();
        let mut cur = runs[0];
        for &(s, e) in &runs[1..] {
            if s <= cur.1 {
                cur.1 = cur.1.max(e);
            } else {
                emit(row, cur, width, &mut f);
                cur = (s, e);
            }
        }
        emit(row, cur, width, &mut f);
    }
}

#[inline]
fn emit(row: usize, (s, e): (i64, i64), width: usize, f: &mut impl FnMut(usize, usize, usize)) {
    let s = s.max(0) as usize;
    let e = (e.max(0) as usize).min(width);
    if s < e {
        f(row, s, e);
    }
}

/// Scanline fill of `poly` into a fresh mask.
pub fn rasterize_polygon(poly: &Polygon, width: usize, height: usize) -> InstanceMask {
    let mut mask = InstanceMask::new(width, height);
    for_each_span(poly, width, height, |row, s, e| {
        mask.bits[row * width + s..row * width + e].fill(true);
    });
    mask
}
