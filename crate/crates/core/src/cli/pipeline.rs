//! One function per CLI stage, each working on a scene directory.

use std::path::{Path, PathBuf};

use crate::compositor::composite;
use crate::decode::{decode, DecodeConfig};
use crate::error::Result;
use crate::evalap::{ap_suite, rasterize_detections, ApReport, EvalGroundTruth, RunMask};
use crate::gtgen::{build_gt, GtConfig};
use crate::io::scene::{self, SceneMeta};
use crate::io::{pgm, records, vis, write_file};
use crate::losses::DenseOutputs;
use crate::synth::{gen_scene_with, SynthConfig};

/// Directory name for the scene generated from `seed`.
pub fn scene_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("scene-{seed:06}"))
}

pub fn synth(dir: &Path, seed: u64, cfg: &SynthConfig) -> Result<()> {
    let s = gen_scene_with(seed, cfg)?;
    let meta = SceneMeta {
        width: s.width,
        height: s.height,
        num_classes: s.num_classes,
        seed: Some(seed),
        synth: Some(cfg.clone()),
    };
    scene::write_scene(dir, &s, &meta)
}

/// Writes the training targets and the outputs a perfect model would give.
pub fn gen_gt(dir: &Path, num_vertices: usize, stride: usize, max_objects: usize, min_overlap: f64) -> Result<usize> {
    let meta = scene::read_meta(dir)?;
    let anns = scene::read_annotations(dir, &meta)?;
    let cfg = GtConfig {
        num_vertices,
        stride,
        max_objects,
        min_overlap,
        ..GtConfig::new(meta.width, meta.height, meta.num_classes)
    };
    let gt = build_gt(&anns, &cfg)?;
    scene::write_gt(&dir.join(scene::GT_DIR), &gt)?;
    scene::write_outputs(&dir.join(scene::OUTPUTS_DIR), &DenseOutputs::from_gt(&gt), stride)?;
    Ok(gt.num_valid())
}

pub fn decode_scene(dir: &Path, max_detections: usize, score_threshold: f64, stride: Option<usize>) -> Result<usize> {
    let (out, saved_stride) = scene::read_outputs(&dir.join(scene::OUTPUTS_DIR))?;
    let cfg = DecodeConfig {
        stride: stride.unwrap_or(saved_stride),
        max_detections,
        score_threshold,
    };
    let dets = decode(&out, &cfg);
    records::write_detections(&dir.join(scene::DETECTIONS), &dets)?;
    Ok(dets.len())
}

pub fn composite_scene(dir: &Path, occluder_threshold: f64, min_score: f64, png: bool) -> Result<usize> {
    let meta = scene::read_meta(dir)?;
    let dets: Vec<_> = records::read_detections(&dir.join(scene::DETECTIONS))?
        .into_iter()
        .filter(|d| d.score >= min_score)
        .collect();
    let labels = composite(&dets, meta.width, meta.height, occluder_threshold)?;
    write_file(&dir.join(scene::PRED_LABELS), &pgm::encode_labels(&labels))?;
    if png {
        write_file(&dir.join("pred_labels.png"), &vis::labels_png(&labels)?)?;
        write_file(&dir.join("pred_depth.png"), &vis::depth_png(&labels, &dets)?)?;
    }
    Ok(dets.len())
}

/// Pools all scenes (one image each) into a single AP report.
pub fn eval_scenes(dirs: &[PathBuf]) -> Result<ApReport> {
    let mut dets = Vec::new();
    let mut gts = Vec::new();
    let mut num_classes = 0;
    for (image, dir) in dirs.iter().enumerate() {
        let meta = scene::read_meta(dir)?;
        num_classes = num_classes.max(meta.num_classes);
        for a in scene::read_annotations(dir, &meta)? {
            gts.push(EvalGroundTruth {
                image,
                class_id: a.class_id,
                mask: RunMask::from_mask(&a.mask),
            });
        }
        let d = records::read_detections(&dir.join(scene::DETECTIONS))?;
        dets.extend(rasterize_detections(image, &d, meta.width, meta.height));
    }
    Ok(ap_suite(&dets, &gts, num_classes))
}
