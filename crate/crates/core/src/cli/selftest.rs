//! Quick internal consistency checks behind `centerpoly selftest`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::compositor::composite;
use crate::decode::{decode, DecodeConfig};
use crate::evalap::{ap_suite, average_precision, EvalDetection, EvalGroundTruth, RunMask};
use crate::geometry::{point_in_polygon, rasterize_polygon, InstanceMask, Point2, Polygon};
use crate::gtgen::{encode_instances, GtConfig};
use crate::io::{pgm, ptsr};
use crate::losses::{
    finite_diff_check, focal_loss, masked_l1, total_loss, DenseOutputs, LossWeights,
};
use crate::synth::{gen_scene_with, Preset, SynthConfig};
use crate::tensor::Tensor;

pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = fn() -> (bool, String);

const CHECKS: &[(&str, Check)] = &[
    ("rasterizer matches point-in-polygon", rasterizer),
    ("focal loss gradient", focal_gradient),
    ("masked L1 gradient", l1_gradient),
    ("total loss gradient", total_gradient),
    ("AP hand cases", ap_hand_cases),
    ("encode/decode round trip", round_trip),
    ("compositor reproduces scene labels", compositor),
    ("file formats round trip", formats),
];

pub fn run_all() -> Vec<CheckResult> {
    CHECKS
        .iter()
        .map(|&(name, f)| {
            let (passed, detail) = f();
            CheckResult { name, passed, detail }
        })
        .collect()
}

fn rasterizer() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut bad = 0;
    for _ in 0..50 {
        let n = rng.gen_range(3..12);
        let poly = Polygon::new(
            (0..n)
                .map(|_| Point2::new(rng.gen_range(-4.0..68.0), rng.gen_range(-4.0..68.0)))
                .collect(),
        )
        .expect("finite vertices");
        let oracle = InstanceMask::from_fn(64, 64, |x, y| point_in_polygon(Point2::new(x as f64, y as f64), &poly));
        if rasterize_polygon(&poly, 64, 64) != oracle {
            bad += 1;
        }
    }
    (bad == 0, format!("{bad}/50 polygons differ"))
}

fn random_field(rng: &mut ChaCha8Rng, dims: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = dims.iter().product();
    Tensor::from_vec(dims, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("dims match")
}

fn grad_result(err: f64) -> (bool, String) {
    (err <= 1e-4, format!("max rel error {err:.2e}"))
}

fn focal_gradient() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut gt = random_field(&mut rng, &[2, 6, 7], 0.0, 0.9);
    gt.data_mut()[5] = 1.0;
    gt.data_mut()[50] = 1.0;
    let pred = random_field(&mut rng, &[2, 6, 7], 0.05, 0.95);
    let err = finite_diff_check(
        |x| {
            let p = Tensor::from_vec(pred.dims(), x.to_vec()).expect("dims match");
            let (v, g) = focal_loss(&p, &gt).expect("shapes match");
            (v, g.into_data())
        },
        pred.data(),
        1e-5,
    );
    grad_result(err)
}

fn l1_gradient() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pred = random_field(&mut rng, &[4, 9], -3.0, 3.0);
    let gt = random_field(&mut rng, &[4, 9], -3.0, 3.0);
    let valid: Vec<bool> = (0..9).map(|i| i % 3 != 1).collect();
    let err = finite_diff_check(
        |x| {
            let p = Tensor::from_vec(pred.dims(), x.to_vec()).expect("dims match");
            let (v, g) = masked_l1(&p, &gt, &valid).expect("shapes match");
            (v, g.into_data())
        },
        pred.data(),
        1e-6,
    );
    grad_result(err)
}

fn small_scene_gt() -> crate::gtgen::GtTensors {
    let cfg = SynthConfig {
        semi_major: (10.0, 16.0),
        min_visible_area: 100,
        ..SynthConfig::new(Preset::Convex, 64, 48, 3, 2)
    };
    let scene = gen_scene_with(5, &cfg).expect("scene fits");
    let gcfg = GtConfig {
        num_vertices: 8,
        max_objects: 4,
        ..GtConfig::new(64, 48, 2)
    };
    encode_instances(&scene.annotations(), &gcfg).expect("valid scene").0
}

fn total_gradient() -> (bool, String) {
    let gt = small_scene_gt();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (w, h) = gt.grid();
    let mut out = DenseOutputs::zeros(gt.num_classes(), gt.num_vertices, w, h);
    out.heatmaps = random_field(&mut rng, out.heatmaps.dims(), 0.05, 0.95);
    out.poly_field = random_field(&mut rng, out.poly_field.dims(), -3.0, 3.0);
    out.depth_field = random_field(&mut rng, out.depth_field.dims(), -1.0, 1.0);
    out.offset_field = random_field(&mut rng, out.offset_field.dims(), -1.0, 1.0);
    let weights = LossWeights::default();
    let err = finite_diff_check(
        |x| {
            let mut o = out.clone();
            o.set_flat(x);
            let l = total_loss(&o, &gt, &weights).expect("shapes match");
            (l.total, l.grads.to_flat())
        },
        &out.to_flat(),
        1e-6,
    );
    grad_result(err)
}

fn ap_hand_cases() -> (bool, String) {
    let one_half = average_precision(&[(0.9, false), (0.8, true)], 1);
    let rect = |w: usize, h: usize| RunMask::from_mask(&InstanceMask::from_fn(40, 40, |x, y| x < w && y < h));
    let r = ap_suite(
        &[EvalDetection {
            image: 0,
            class_id: 0,
            score: 0.8,
            mask: rect(19, 12),
        }],
        &[EvalGroundTruth {
            image: 0,
            class_id: 0,
            mask: rect(20, 20),
        }],
        1,
    );
    let ok = one_half == Some(0.5) && (r.ap - 0.2).abs() < 1e-9 && r.ap50 == 1.0;
    (ok, format!("FP+TP AP {one_half:?}; IoU 0.57 AP {:.4} AP50 {:.1}", r.ap, r.ap50))
}

fn round_trip() -> (bool, String) {
    let cfg = SynthConfig::new(Preset::Convex, 256, 192, 6, 3);
    let scene = gen_scene_with(6, &cfg).expect("scene fits");
    let (gt, encoded) = encode_instances(&scene.annotations(), &GtConfig::new(256, 192, 3)).expect("valid scene");
    let dets = decode(&DenseOutputs::from_gt(&gt), &DecodeConfig::default());
    let mut worst: f64 = 0.0;
    let mut missing = 0;
    for inst in encoded.iter().filter(|e| gt.valid[e.slot]) {
        match dets.iter().find(|d| d.class_id == inst.class_id && d.center.distance(inst.center) <= 2.0) {
            Some(d) => {
                for (a, b) in d.polygon.vertices().iter().zip(inst.polygon.vertices()) {
                    worst = worst.max(a.distance(*b));
                }
            }
            None => missing += 1,
        }
    }
    (
        missing == 0 && worst <= 1e-6,
        format!("{} instances, {missing} missing, max vertex error {worst:.1e} px", encoded.len()),
    )
}

fn compositor() -> (bool, String) {
    let cfg = SynthConfig::new(Preset::Overlap, 256, 256, 8, 2);
    let scene = gen_scene_with(7, &cfg).expect("scene fits");
    match composite(&scene.true_detections(), 256, 256, 0.5) {
        Ok(map) => (map == scene.labels, format!("{} overlapping instances", scene.instances.len())),
        Err(e) => (false, e.to_string()),
    }
}

fn formats() -> (bool, String) {
    let mask = InstanceMask::from_fn(13, 7, |x, y| (x * y) % 3 == 0);
    let bytes = pgm::encode_mask(&mask);
    let mask_ok = pgm::decode_mask(&bytes).map(|m| pgm::encode_mask(&m) == bytes).unwrap_or(false);
    let t = Tensor::from_vec(&[2, 3], vec![0.5, -1.25, 3.0, 0.0, 1e-3, 7.0]).expect("dims match");
    let tb = ptsr::encode(&t).unwrap_or_default();
    let ptsr_ok = ptsr::decode(&tb)
        .ok()
        .and_then(|back| ptsr::encode(&back).ok())
        .is_some_and(|b| b == tb);
    (mask_ok && ptsr_ok, format!("PGM {mask_ok}, PTSR1 {ptsr_ok}"))
}
