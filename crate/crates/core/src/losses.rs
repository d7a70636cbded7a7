//! Training losses over the four dense heads, with analytic gradients.
//!
//! The heatmap term is the penalty-reduced focal loss (alpha = 2, beta = 4,
//! normalized by the number of peaks). The polygon, depth and offset terms
//! are L1 losses read only at ground-truth center cells. [`direct_fit`]
//! optimizes the output tensors themselves under the weighted total, which
//! stands in for training a network.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gtgen::GtTensors;
use crate::tensor::Tensor;

/// Heatmap probabilities are clamped to `[HEATMAP_CLAMP, 1 - HEATMAP_CLAMP]`.
pub const HEATMAP_CLAMP: f64 = 1e-4;
pub const FOCAL_ALPHA: i32 = 2;
pub const FOCAL_BETA: i32 = 4;

/// Dense predictions of the four heads on an `H x W` grid.
///
/// `heatmaps` is `[C, H, W]` (post-activation probabilities), `poly_field`
/// is `[2N, H, W]` with channels `x1, y1, x2, y2, ...` in cell units,
/// `depth_field` is `[H, W]` and `offset_field` is `[2, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOutputs {
    pub heatmaps: Tensor,
    pub poly_field: Tensor,
    pub depth_field: Tensor,
    pub offset_field: Tensor,
}

impl DenseOutputs {
    pub fn zeros(num_classes: usize, num_vertices: usize, width: usize, height: usize) -> Self {
        Self {
            heatmaps: Tensor::zeros(&[num_classes, height, width]),
            poly_field: Tensor::zeros(&[2 * num_vertices, height, width]),
            depth_field: Tensor::zeros(&[height, width]),
            offset_field: Tensor::zeros(&[2, height, width]),
        }
    }

    /// The outputs a perfect network would produce: ground-truth heatmaps
    /// (clamped) and every valid slot's targets written at its center cell.
    pub fn from_gt(gt: &GtTensors) -> Self {
        let (w, h) = gt.grid();
        let k = gt.max_objects();
        let mut out = Self::zeros(gt.num_classes(), gt.num_vertices, w, h);
        out.heatmaps = gt.heatmaps.clone();
        out.clamp_heatmaps();
        let plane = w * h;
        for slot in (0..k).filter(|&s| gt.valid[s]) {
            let cell = gt.center_cells[slot];
            for ch in 0..2 * gt.num_vertices {
                out.poly_field.data_mut()[ch * plane + cell] = gt.poly_offsets.data()[ch * k + slot];
            }
            out.depth_field.data_mut()[cell] = gt.depth.data()[slot];
            for ch in 0..2 {
                out.offset_field.data_mut()[ch * plane + cell] =
                    gt.subpixel_offsets.data()[ch * k + slot];
            }
        }
        out
    }

    pub fn num_classes(&self) -> usize {
        self.heatmaps.dims()[0]
    }

    pub fn num_vertices(&self) -> usize {
        self.poly_field.dims()[0] / 2
    }

    /// `(width, height)`.
    pub fn grid(&self) -> (usize, usize) {
        (self.heatmaps.dims()[2], self.heatmaps.dims()[1])
    }

    pub fn clamp_heatmaps(&mut self) {
        for v in self.heatmaps.data_mut() {
            *v = v.clamp(HEATMAP_CLAMP, 1.0 - HEATMAP_CLAMP);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heatmaps.rank() != 3 {
            return Err(Error::ShapeMismatch {
                what: "heatmaps",
                expected: vec![0, 0, 0],
                actual: self.heatmaps.dims().to_vec(),
            });
        }
        let (w, h) = self.grid();
        let n = self.num_vertices();
        self.poly_field.expect_dims("poly_field", &[2 * n, h, w])?;
        self.depth_field.expect_dims("depth_field", &[h, w])?;
        self.offset_field.expect_dims("offset_field", &[2, h, w])
    }

    /// All fields concatenated in declaration order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.flat_len());
        for t in self.fields() {
            v.extend_from_slice(t.data());
        }
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.flat_len());
        let mut off = 0;
        for t in self.fields_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    pub fn flat_len(&self) -> usize {
        self.fields().iter().map(|t| t.len()).sum()
    }

    fn fields(&self) -> [&Tensor; 4] {
        [
            &self.heatmaps,
            &self.poly_field,
            &self.depth_field,
            &self.offset_field,
        ]
    }

    fn fields_mut(&mut self) -> [&mut Tensor; 4] {
        [
            &mut self.heatmaps,
            &mut self.poly_field,
            &mut self.depth_field,
            &mut self.offset_field,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub hm: f64,
    pub poly: f64,
    pub depth: f64,
    pub offset: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            hm: 1.0,
            poly: 1.0,
            depth: 0.1,
            offset: 0.1,
        }
    }
}

impl LossWeights {
    /// Configuration for data without depth annotations.
    pub fn without_depth() -> Self {
        Self {
            depth: 0.0,
            ..Self::default()
        }
    }

    pub fn zero() -> Self {
        Self {
            hm: 0.0,
            poly: 0.0,
            depth: 0.0,
            offset: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        for w in [self.hm, self.poly, self.depth, self.offset] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidArgument(format!("loss weight {w} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// Penalty-reduced focal loss over heatmaps and its gradient w.r.t. `pred`.
///
/// Cells where the target is exactly 1 are positives:
/// `-(1 - p)^a ln p`; all others contribute `-(1 - y)^b p^a ln(1 - p)`.
/// The sum is divided by the number of positives (at least 1). Predictions
/// are clamped first; entries strictly outside the clamp range get zero
/// gradient.
pub fn focal_loss(pred: &Tensor, gt: &Tensor) -> Result<(f64, Tensor)> {
    if !pred.same_shape(gt) {
        return Err(Error::ShapeMismatch {
            what: "focal loss",
            expected: gt.dims().to_vec(),
            actual: pred.dims().to_vec(),
        });
    }
    let (lo, hi) = (HEATMAP_CLAMP, 1.0 - HEATMAP_CLAMP);
    let num_pos = gt.data().iter().filter(|&&y| y == 1.0).count().max(1) as f64;
    let mut grad = Tensor::zeros(pred.dims());
    let mut total = 0.0;
    for ((&raw, &y), g) in pred.data().iter().zip(gt.data()).zip(grad.data_mut()) {
        let p = raw.clamp(lo, hi);
        let pass = (lo..=hi).contains(&raw);
        let q = 1.0 - p;
        let a = FOCAL_ALPHA as f64;
        let (value, deriv) = if y == 1.0 {
            let lp = p.ln();
            let qa = q.powi(FOCAL_ALPHA);
            (-qa * lp, a * q.powi(FOCAL_ALPHA - 1) * lp - qa / p)
        } else {
            let wneg = (1.0 - y).powi(FOCAL_BETA);
            let lq = q.ln();
            let pa = p.powi(FOCAL_ALPHA);
            (
                -wneg * pa * lq,
                -wneg * (a * p.powi(FOCAL_ALPHA - 1) * lq - pa / q),
            )
        };
        total += value;
        if pass {
            *g = deriv / num_pos;
        }
    }
    Ok((total / num_pos, grad))
}

/// Mean absolute error over the entries of valid objects.
///
/// `pred` and `gt` are `[E, K]` (entry-major, one column per object slot);
/// `valid` has `K` flags. The gradient is `sign(diff) / n_valid_entries` on
/// valid columns and zero elsewhere; with no valid object the loss is 0.
pub fn masked_l1(pred: &Tensor, gt: &Tensor, valid: &[bool]) -> Result<(f64, Tensor)> {
    if !pred.same_shape(gt) || pred.rank() != 2 || pred.dims()[1] != valid.len() {
        return Err(Error::ShapeMismatch {
            what: "masked L1",
            expected: gt.dims().to_vec(),
            actual: pred.dims().to_vec(),
        });
    }
    let k = valid.len();
    let entries = pred.dims()[0];
    let count = valid.iter().filter(|&&v| v).count() * entries;
    let mut grad = Tensor::zeros(pred.dims());
    if count == 0 {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / count as f64;
    let mut sum = 0.0;
    for e in 0..entries {
        for slot in (0..k).filter(|&s| valid[s]) {
            let i = e * k + slot;
            let d = pred.data()[i] - gt.data()[i];
            sum += d.abs();
            grad.data_mut()[i] = if d > 0.0 {
                inv
            } else if d < 0.0 {
                -inv
            } else {
                0.0
            };
        }
    }
    Ok((sum * inv, grad))
}

#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub total: f64,
    pub hm: f64,
    pub poly: f64,
    pub depth: f64,
    pub offset: f64,
    pub grads: DenseOutputs,
}

/// Reads `channels` of a `[C, H, W]` field at every slot's center cell,
/// producing `[C, K]`.
fn gather(field: &Tensor, channels: usize, cells: &[usize]) -> Tensor {
    let k = cells.len();
    let plane = field.len() / channels;
    let mut out = vec![0.0; channels * k];
    for ch in 0..channels {
        for (slot, &cell) in cells.iter().enumerate() {
            out[ch * k + slot] = field.data()[ch * plane + cell];
        }
    }
    Tensor::from_vec(&[channels, k], out).expect("gather shape")
}

fn scatter_add(field: &mut Tensor, channels: usize, cells: &[usize], grad: &Tensor, w: f64) {
    let k = cells.len();
    let plane = field.len() / channels;
    for ch in 0..channels {
        for (slot, &cell) in cells.iter().enumerate() {
            field.data_mut()[ch * plane + cell] += w * grad.data()[ch * k + slot];
        }
    }
}

/// Weighted sum `w_hm L_hm + w_poly L_poly + w_depth L_depth + w_offset L_offset`
/// and its gradient w.r.t. every output field.
pub fn total_loss(out: &DenseOutputs, gt: &GtTensors, w: &LossWeights) -> Result<LossBreakdown> {
    w.validate()?;
    out.validate()?;
    if out.grid() != gt.grid() || out.num_vertices() != gt.num_vertices {
        return Err(Error::ShapeMismatch {
            what: "outputs vs ground truth",
            expected: gt.heatmaps.dims().to_vec(),
            actual: out.heatmaps.dims().to_vec(),
        });
    }
    let (gw, gh) = out.grid();
    if let Some(&bad) = gt.center_cells.iter().find(|&&c| c >= gw * gh) {
        return Err(Error::InvalidArgument(format!("center cell {bad} outside grid")));
    }
    let n2 = 2 * out.num_vertices();
    let cells = &gt.center_cells;

    let (hm, g_hm) = focal_loss(&out.heatmaps, &gt.heatmaps)?;
    let (poly, g_poly) = masked_l1(&gather(&out.poly_field, n2, cells), &gt.poly_offsets.reshaped(&[n2, cells.len()]), &gt.valid)?;
    let (depth, g_depth) = masked_l1(&gather(&out.depth_field, 1, cells), &gt.depth.reshaped(&[1, cells.len()]), &gt.valid)?;
    let (offset, g_off) = masked_l1(&gather(&out.offset_field, 2, cells), &gt.subpixel_offsets, &gt.valid)?;

    let mut grads = DenseOutputs::zeros(out.num_classes(), out.num_vertices(), gw, gh);
    for (g, &v) in grads.heatmaps.data_mut().iter_mut().zip(g_hm.data()) {
        *g = w.hm * v;
    }
    scatter_add(&mut grads.poly_field, n2, cells, &g_poly, w.poly);
    scatter_add(&mut grads.depth_field, 1, cells, &g_depth, w.depth);
    scatter_add(&mut grads.offset_field, 2, cells, &g_off, w.offset);

    Ok(LossBreakdown {
        total: w.hm * hm + w.poly * poly + w.depth * depth + w.offset * offset,
        hm,
        poly,
        depth,
        offset,
        grads,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdConfig {
    pub epsilon: f64,
    /// Coordinates probed; all of them when the point is smaller.
    pub coords: usize,
    pub seed: u64,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            coords: 256,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// Coordinate with the largest error.
    pub worst: Option<usize>,
}

/// Compares the analytic gradient of `f` at `point` with central
/// differences on a random coordinate subset and returns the largest
/// relative error `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn finite_diff_check<F>(f: F, point: &[f64], epsilon: f64) -> f64
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    finite_diff_check_with(
        f,
        point,
        &FdConfig {
            epsilon,
            ..FdConfig::default()
        },
    )
    .max_rel_error
}

pub fn finite_diff_check_with<F>(f: F, point: &[f64], cfg: &FdConfig) -> FdReport
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    assert!(cfg.epsilon > 0.0, "epsilon must be positive");
    let (_, analytic) = f(point);
    assert_eq!(analytic.len(), point.len(), "gradient length");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut coords: Vec<usize> = if point.len() <= cfg.coords {
        (0..point.len()).collect()
    } else {
        sample(&mut rng, point.len(), cfg.coords).into_vec()
    };
    coords.sort_unstable();
    let mut x = point.to_vec();
    let mut report = FdReport {
        max_rel_error: 0.0,
        coords_checked: coords.len(),
        worst: None,
    };
    for &i in &coords {
        let orig = x[i];
        x[i] = orig + cfg.epsilon;
        let (fp, _) = f(&x);
        x[i] = orig - cfg.epsilon;
        let (fm, _) = f(&x);
        x[i] = orig;
        let numeric = (fp - fm) / (2.0 * cfg.epsilon);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst = Some(i);
        }
    }
    report
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub outputs: DenseOutputs,
    /// Loss before every step plus the final loss (`steps + 1` values).
    pub trace: Vec<f64>,
}

/// Plain gradient descent on the output tensors under [`total_loss`].
/// Heatmaps are re-clamped after every step.
pub fn direct_fit(
    gt: &GtTensors,
    init: &DenseOutputs,
    steps: usize,
    lr: f64,
    weights: &LossWeights,
) -> Result<FitResult> {
    if steps == 0 || lr.is_nan() || lr <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "direct_fit needs steps >= 1 and lr > 0 (got {steps}, {lr})"
        )));
    }
    let mut out = init.clone();
    out.clamp_heatmaps();
    let mut trace = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        let l = total_loss(&out, gt, weights)?;
        if !l.total.is_finite() {
            return Err(Error::Divergence { step });
        }
        trace.push(l.total);
        if step == steps {
            break;
        }
        for (t, g) in out.fields_mut().into_iter().zip(l.grads.fields()) {
            for (v, &d) in t.data_mut().iter_mut().zip(g.data()) {
                *v -= lr * d;
            }
        }
        out.clamp_heatmaps();
    }
    Ok(FitResult {
        outputs: out,
        trace,
    })
}
