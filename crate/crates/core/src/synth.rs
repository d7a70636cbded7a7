//! Deterministic synthetic scenes of overlapping polygons with known depth
//! order, used as ground truth for the whole pipeline.

use std::f64::consts::TAU;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decode::Detection;
use crate::error::{Error, Result};
use crate::geometry::{for_each_span, InstanceMask, LabelMap, Point2, Polygon};
use crate::gtgen::{depth_rank_values, Annotation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Convex shapes with light occlusion.
    Convex,
    /// Half of the shapes are concave stars.
    Hard,
    /// Every shape after the first overlaps an earlier one.
    Overlap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub num_instances: usize,
    pub num_classes: usize,
    pub preset: Preset,
    pub min_vertices: usize,
    pub max_vertices: usize,
    /// Range of the longer semi-axis, pixels.
    pub semi_major: (f64, f64),
    /// Range of minor/major axis ratio.
    pub aspect: (f64, f64),
    /// Largest share of an earlier instance that later ones may cover.
    pub max_occluded_fraction: f64,
    pub min_visible_area: usize,
    pub min_center_distance: f64,
    pub attempts_per_instance: usize,
}

impl SynthConfig {
    pub fn new(preset: Preset, width: usize, height: usize, num_instances: usize, num_classes: usize) -> Self {
        let base = Self {
            width,
            height,
            num_instances,
            num_classes,
            preset,
            min_vertices: 8,
            max_vertices: 24,
            semi_major: (36.0, 64.0),
            aspect: (0.8, 1.0),
            max_occluded_fraction: 0.05,
            min_visible_area: 1024,
            min_center_distance: 16.0,
            attempts_per_instance: 60,
        };
        match preset {
            Preset::Convex => base,
            Preset::Hard => Self {
                max_occluded_fraction: 0.2,
                ..base
            },
            Preset::Overlap => Self {
                max_occluded_fraction: 0.6,
                min_visible_area: 200,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_owned()));
        if self.num_instances == 0 {
            return bad("num_instances must be at least 1");
        }
        if self.num_classes == 0 || self.num_classes > u16::MAX as usize {
            return bad("num_classes out of range");
        }
        if self.min_vertices < 3 || self.min_vertices > self.max_vertices {
            return bad("vertex range must satisfy 3 <= min <= max");
        }
        let (a0, a1) = self.semi_major;
        let (r0, r1) = self.aspect;
        if !(a0 > 0.0 && a0 <= a1 && r0 > 0.0 && r0 <= r1 && r1 <= 1.0) {
            return bad("semi-axis or aspect range invalid");
        }
        if 2.0 * a0 + 2.0 > self.width.min(self.height) as f64 {
            return bad("image too small for the smallest shape");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneInstance {
    pub class_id: usize,
    pub polygon: Polygon,
    /// 0 is furthest.
    pub order_index: usize,
    pub full_mask: InstanceMask,
    pub visible_mask: InstanceMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub width: usize,
    pub height: usize,
    pub num_classes: usize,
    /// Furthest first.
    pub instances: Vec<SceneInstance>,
    /// Id `i + 1` marks the visible pixels of instance `i`.
    pub labels: LabelMap,
}

impl Scene {
    /// Visible masks in annotation order.
    pub fn annotations(&self) -> Vec<Annotation> {
        self.instances
            .iter()
            .map(|inst| Annotation {
                class_id: inst.class_id,
                mask: inst.visible_mask.clone(),
                order_index: inst.order_index,
            })
            .collect()
    }

    /// The true polygons as full-confidence detections with rank depth.
    pub fn true_detections(&self) -> Vec<Detection> {
        let depths = depth_rank_values(self.instances.len());
        self.instances
            .iter()
            .zip(depths)
            .map(|(inst, rel_depth)| Detection {
                class_id: inst.class_id,
                score: 1.0,
                center: inst.polygon.bbox().center(),
                polygon: inst.polygon.clone(),
                rel_depth,
            })
            .collect()
    }
}

/// Convex scene with default settings.
pub fn gen_scene(seed: u64, width: usize, height: usize, num_instances: usize, num_classes: usize) -> Result<Scene> {
    gen_scene_with(seed, &SynthConfig::new(Preset::Convex, width, height, num_instances, num_classes))
}

/// Samples instances one at a time, each closer than the previous ones.
/// Candidates that break the occlusion or spacing limits are redrawn; when
/// the attempt budget runs out the scene keeps the instances placed so far.
pub fn gen_scene_with(seed: u64, cfg: &SynthConfig) -> Result<Scene> {
    cfg.validate()?;
    let (w, h) = (cfg.width, cfg.height);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = LabelMap::new(w, h);
    let mut placed: Vec<(usize, Polygon, Point2)> = Vec::new();
    let mut full_area: Vec<usize> = Vec::new();
    let mut visible_area: Vec<usize> = Vec::new();
    let mut budget = cfg.num_instances * cfg.attempts_per_instance;

    while placed.len() < cfg.num_instances && budget > 0 {
        budget -= 1;
        let class_id = rng.gen_range(0..cfg.num_classes);
        let anchor = match cfg.preset {
            Preset::Overlap if !placed.is_empty() => Some(placed[rng.gen_range(0..placed.len())].2),
            _ => None,
        };
        let star = cfg.preset == Preset::Hard && rng.gen_bool(0.5);
        let Some((poly, center)) = sample_shape(&mut rng, cfg, anchor, star) else {
            continue;
        };
        if placed
            .iter()
            .any(|(_, _, c)| c.distance(center) < cfg.min_center_distance)
        {
            continue;
        }

        // pixels each earlier instance would lose
        let mut lost = vec![0usize; placed.len()];
        let mut area = 0usize;
        let ids = labels.ids();
        for_each_span(&poly, w, h, |row, s, e| {
            area += e - s;
            for &id in &ids[row * w + s..row * w + e] {
                if id > 0 {
                    lost[id as usize - 1] += 1;
                }
            }
        });
        if area < cfg.min_visible_area {
            continue;
        }
        let overlaps = lost.iter().any(|&l| l > 0);
        if anchor.is_some() && !overlaps {
            continue;
        }
        let ok = lost.iter().enumerate().all(|(j, &l)| {
            let left = visible_area[j] - l;
            left >= cfg.min_visible_area
                && (full_area[j] - left) as f64 <= cfg.max_occluded_fraction * full_area[j] as f64
        });
        if !ok {
            continue;
        }

        let id = placed.len() as u16 + 1;
        let ids = labels.ids_mut();
        for_each_span(&poly, w, h, |row, s, e| ids[row * w + s..row * w + e].fill(id));
        for (v, l) in visible_area.iter_mut().zip(&lost) {
            *v -= l;
        }
        full_area.push(area);
        visible_area.push(area);
        placed.push((class_id, poly, center));
    }

    if placed.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no instance fits a {w}x{h} image with these limits"
        )));
    }
    let instances = placed
        .into_iter()
        .enumerate()
        .map(|(i, (class_id, polygon, _))| {
            let mut full_mask = InstanceMask::new(w, h);
            for_each_span(&polygon, w, h, |row, s, e| {
                for x in s..e {
                    full_mask.set(x, row, true);
                }
            });
            SceneInstance {
                class_id,
                visible_mask: labels.mask_of(i as u16 + 1),
                full_mask,
                polygon,
                order_index: i,
            }
        })
        .collect();
    Ok(Scene {
        width: w,
        height: h,
        num_classes: cfg.num_classes,
        instances,
        labels,
    })
}

/// Vertices at jittered, increasing parametric angles on a rotated ellipse,
/// which keeps the polygon convex. Stars alternate the radius between the
/// ellipse and an inner fraction of it.
fn sample_shape(rng: &mut ChaCha8Rng, cfg: &SynthConfig, anchor: Option<Point2>, star: bool) -> Option<(Polygon, Point2)> {
    // the largest shapes shrink to fit small canvases
    let cap = cfg.width.min(cfg.height) as f64 / 2.0 - 1.0;
    let a = rng.gen_range(cfg.semi_major.0..=cfg.semi_major.1.min(cap));
    let b = a * rng.gen_range(cfg.aspect.0..=cfg.aspect.1);
    let rot = rng.gen_range(0.0..TAU);
    let mut k = rng.gen_range(cfg.min_vertices..=cfg.max_vertices);
    if star {
        k += k % 2;
    }
    let center = match anchor {
        Some(p) => {
            let dir = rng.gen_range(0.0..TAU);
            let dist = rng.gen_range(0.6..1.2) * a;
            Point2::new(p.x + dist * dir.cos(), p.y + dist * dir.sin())
        }
        None => Point2::new(
            rng.gen_range(a + 1.0..=cfg.width as f64 - a - 1.0),
            rng.gen_range(a + 1.0..=cfg.height as f64 - a - 1.0),
        ),
    };
    if center.x < a + 1.0 || center.y < a + 1.0 || center.x > cfg.width as f64 - a - 1.0 || center.y > cfg.height as f64 - a - 1.0 {
        return None;
    }
    let inner = rng.gen_range(0.45..0.7);
    let phase = rng.gen_range(0.0..TAU);
    let (sr, cr) = rot.sin_cos();
    let vertices = (0..k)
        .map(|i| {
            let t = phase + TAU * (i as f64 + rng.gen_range(-0.35..0.35)) / k as f64;
            let scale = if star && i % 2 == 1 { inner } else { 1.0 };
            let (u, v) = (a * scale * t.cos(), b * scale * t.sin());
            Point2::new(center.x + u * cr - v * sr, center.y + u * sr + v * cr)
        })
        .collect();
    Polygon::new(vertices).ok().map(|p| (p, center))
}
