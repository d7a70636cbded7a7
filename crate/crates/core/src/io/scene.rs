//! Scene directory layout shared by the CLI stages:
//!
//! ```text
//! meta.json           image size, class count, generator settings
//! annotations.jsonl   {"class", "mask", "order"} per instance
//! masks/NNNN.pgm      visible instance masks
//! labels.pgm          visible labeling, id = order + 1
//! truth.jsonl         true polygons as detections (score 1, rank depth)
//! gt/                 training targets (PTSR1 tensors + index.json)
//! outputs/            dense head outputs (PTSR1 tensors + info.json)
//! detections.jsonl    decoded detections
//! pred_labels.pgm     composited detections
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{pgm, ptsr, read_file, read_json, records, write_file, write_json};
use crate::error::{Error, Result};
use crate::geometry::LabelMap;
use crate::gtgen::{Annotation, GtTensors};
use crate::losses::DenseOutputs;
use crate::synth::{Scene, SynthConfig};
use crate::tensor::Tensor;

pub const META: &str = "meta.json";
pub const ANNOTATIONS: &str = "annotations.jsonl";
pub const LABELS: &str = "labels.pgm";
pub const TRUTH: &str = "truth.jsonl";
pub const GT_DIR: &str = "gt";
pub const OUTPUTS_DIR: &str = "outputs";
pub const DETECTIONS: &str = "detections.jsonl";
pub const PRED_LABELS: &str = "pred_labels.pgm";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub width: usize,
    pub height: usize,
    pub num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
}

pub fn write_scene(dir: &Path, scene: &Scene, meta: &SceneMeta) -> Result<()> {
    write_json(&dir.join(META), meta)?;
    let mut recs = Vec::with_capacity(scene.instances.len());
    for (i, inst) in scene.instances.iter().enumerate() {
        let rel = format!("masks/{i:04}.pgm");
        write_file(&dir.join(&rel), &pgm::encode_mask(&inst.visible_mask))?;
        recs.push(records::AnnotationRecord {
            class: inst.class_id,
            mask: rel,
            order: inst.order_index,
        });
    }
    write_file(&dir.join(ANNOTATIONS), &records::to_jsonl(&recs))?;
    write_file(&dir.join(LABELS), &pgm::encode_labels(&scene.labels))?;
    records::write_detections(&dir.join(TRUTH), &scene.true_detections())
}

pub fn read_meta(dir: &Path) -> Result<SceneMeta> {
    read_json(&dir.join(META), "scene meta")
}

/// Annotations in file order, masks checked against the scene size.
pub fn read_annotations(dir: &Path, meta: &SceneMeta) -> Result<Vec<Annotation>> {
    let recs: Vec<records::AnnotationRecord> = records::from_jsonl(&read_file(&dir.join(ANNOTATIONS))?, "annotation")?;
    recs.into_iter()
        .map(|r| {
            let mask = pgm::decode_mask(&read_file(&dir.join(&r.mask))?)?;
            if mask.dims() != (meta.width, meta.height) {
                return Err(Error::DimensionMismatch {
                    left: mask.dims(),
                    right: (meta.width, meta.height),
                });
            }
            Ok(Annotation {
                class_id: r.class,
                mask,
                order_index: r.order,
            })
        })
        .collect()
}

pub fn read_labels(path: &Path) -> Result<LabelMap> {
    pgm::decode_labels(&read_file(path)?)
}

fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    write_file(path, &ptsr::encode(t)?)
}

fn read_tensor(path: &Path) -> Result<Tensor> {
    ptsr::decode(&read_file(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GtIndex {
    stride: usize,
    num_vertices: usize,
    center_cells: Vec<usize>,
    valid: Vec<bool>,
}

pub fn write_gt(dir: &Path, gt: &GtTensors) -> Result<()> {
    write_tensor(&dir.join("heatmaps.ptsr"), &gt.heatmaps)?;
    write_tensor(&dir.join("poly_offsets.ptsr"), &gt.poly_offsets)?;
    write_tensor(&dir.join("depth.ptsr"), &gt.depth)?;
    write_tensor(&dir.join("subpixel_offsets.ptsr"), &gt.subpixel_offsets)?;
    write_json(
        &dir.join("index.json"),
        &GtIndex {
            stride: gt.stride,
            num_vertices: gt.num_vertices,
            center_cells: gt.center_cells.clone(),
            valid: gt.valid.clone(),
        },
    )
}

pub fn read_gt(dir: &Path) -> Result<GtTensors> {
    let index: GtIndex = read_json(&dir.join("index.json"), "gt index")?;
    let gt = GtTensors {
        stride: index.stride,
        num_vertices: index.num_vertices,
        heatmaps: read_tensor(&dir.join("heatmaps.ptsr"))?,
        poly_offsets: read_tensor(&dir.join("poly_offsets.ptsr"))?,
        depth: read_tensor(&dir.join("depth.ptsr"))?,
        subpixel_offsets: read_tensor(&dir.join("subpixel_offsets.ptsr"))?,
        center_cells: index.center_cells,
        valid: index.valid,
    };
    let k = gt.valid.len();
    if gt.heatmaps.rank() != 3 || gt.center_cells.len() != k {
        return Err(Error::format("gt", "inconsistent heatmap rank or slot count"));
    }
    gt.poly_offsets.expect_dims("poly_offsets", &[2 * gt.num_vertices, k])?;
    gt.depth.expect_dims("depth", &[k])?;
    gt.subpixel_offsets.expect_dims("subpixel_offsets", &[2, k])?;
    Ok(gt)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct OutputsInfo {
    stride: usize,
}

pub fn write_outputs(dir: &Path, out: &DenseOutputs, stride: usize) -> Result<()> {
    write_tensor(&dir.join("heatmaps.ptsr"), &out.heatmaps)?;
    write_tensor(&dir.join("poly.ptsr"), &out.poly_field)?;
    write_tensor(&dir.join("depth.ptsr"), &out.depth_field)?;
    write_tensor(&dir.join("offset.ptsr"), &out.offset_field)?;
    write_json(&dir.join("info.json"), &OutputsInfo { stride })
}

/// Outputs and the stride they were produced at.
pub fn read_outputs(dir: &Path) -> Result<(DenseOutputs, usize)> {
    let info: OutputsInfo = read_json(&dir.join("info.json"), "outputs info")?;
    let out = DenseOutputs {
        heatmaps: read_tensor(&dir.join("heatmaps.ptsr"))?,
        poly_field: read_tensor(&dir.join("poly.ptsr"))?,
        depth_field: read_tensor(&dir.join("depth.ptsr"))?,
        offset_field: read_tensor(&dir.join("offset.ptsr"))?,
    };
    out.validate()?;
    Ok((out, info.stride))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gtgen::{build_gt, GtConfig};
    use crate::synth::gen_scene;

    #[test]
    fn scene_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let scene = gen_scene(4, 256, 160, 5, 3).unwrap();
        let meta = SceneMeta {
            width: 256,
            height: 160,
            num_classes: 3,
            seed: Some(4),
            synth: None,
        };
        write_scene(dir.path(), &scene, &meta).unwrap();
        assert_eq!(read_meta(dir.path()).unwrap(), meta);
        let anns = read_annotations(dir.path(), &meta).unwrap();
        assert_eq!(anns.len(), scene.instances.len());
        for (a, inst) in anns.iter().zip(&scene.instances) {
            assert_eq!((a.class_id, a.order_index), (inst.class_id, inst.order_index));
            assert_eq!(a.mask, inst.visible_mask);
        }
        assert_eq!(read_labels(&dir.path().join(LABELS)).unwrap(), scene.labels);
        assert_eq!(records::read_detections(&dir.path().join(TRUTH)).unwrap(), scene.true_detections());
    }

    #[test]
    fn gt_and_outputs_round_trip_at_f32() {
        let dir = tempfile::tempdir().unwrap();
        let scene = gen_scene(8, 192, 128, 3, 2).unwrap();
        let gt = build_gt(&scene.annotations(), &GtConfig::new(192, 128, 2)).unwrap();
        write_gt(&dir.path().join(GT_DIR), &gt).unwrap();
        let back = read_gt(&dir.path().join(GT_DIR)).unwrap();
        assert_eq!((back.center_cells.clone(), back.valid.clone()), (gt.center_cells.clone(), gt.valid.clone()));
        for (a, b) in back.poly_offsets.data().iter().zip(gt.poly_offsets.data()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        let out = DenseOutputs::from_gt(&gt);
        write_outputs(&dir.path().join(OUTPUTS_DIR), &out, 4).unwrap();
        let (o2, stride) = read_outputs(&dir.path().join(OUTPUTS_DIR)).unwrap();
        assert_eq!(stride, 4);
        assert_eq!(o2.heatmaps.dims(), out.heatmaps.dims());
        // a second write of the narrowed values is byte-identical
        let dir2 = tempfile::tempdir().unwrap();
        write_outputs(dir2.path(), &o2, 4).unwrap();
        for f in ["heatmaps.ptsr", "poly.ptsr", "depth.ptsr", "offset.ptsr"] {
            let a = std::fs::read(dir.path().join(OUTPUTS_DIR).join(f)).unwrap();
            assert_eq!(a, std::fs::read(dir2.path().join(f)).unwrap());
        }
    }

    #[test]
    fn missing_files_are_io_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(read_meta(dir.path()).unwrap_err().is_io());
        assert!(read_outputs(dir.path()).unwrap_err().is_io());
    }
}
