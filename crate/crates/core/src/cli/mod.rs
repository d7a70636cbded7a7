//! Command-line front end. Stages communicate through scene directories:
//! each stage prints the directories it handled, one per line, and reads
//! them from stdin when none are given, so stages can be piped.

pub mod pipeline;
pub mod selftest;

use std::io::{BufRead, IsTerminal};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::compositor::{composite, DEFAULT_OCCLUDER_THRESHOLD};
use crate::decode::{decode, DecodeConfig, DEFAULT_MAX_DETECTIONS, EVAL_SCORE_THRESHOLD};
use crate::error::{Error, Result};
use crate::evalap::{ap_suite, rasterize_detections, ApReport, EvalGroundTruth, RunMask};
use crate::gtgen::{build_gt, GtConfig, DEFAULT_MAX_OBJECTS, DEFAULT_MIN_OVERLAP, DEFAULT_NUM_VERTICES, DEFAULT_STRIDE};
use crate::io::write_json;
use crate::losses::DenseOutputs;
use crate::synth::{gen_scene_with, Preset, SynthConfig};

#[derive(Debug, Parser, Serialize)]
#[command(name = "centerpoly", version, about = "Bounding-polygon instance segmentation toolkit")]
pub struct Cli {
    /// Worker threads; 0 picks one per core. Output order does not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Generate synthetic scenes.
    Synth(SynthArgs),
    /// Build training targets and ideal head outputs for scenes.
    GenGt(GenGtArgs),
    /// Decode head outputs into detections.
    Decode(DecodeArgs),
    /// Composite detections into a label map by relative depth.
    Composite(CompositeArgs),
    /// Score detections against scene annotations (COCO-style AP).
    Eval(EvalArgs),
    /// Run built-in consistency checks.
    Selftest,
    /// Time each pipeline stage on one generated scene.
    Bench(BenchArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of scenes, with consecutive seeds.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Image size as WIDTHxHEIGHT.
    #[arg(long, default_value = "512x256", value_parser = parse_size)]
    pub size: (usize, usize),
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, value_enum, default_value_t = Preset::Convex)]
    pub preset: Preset,
    /// Parent directory for the scene directories.
    #[arg(long, default_value = "scenes")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct Scenes {
    /// Scene directories; read from stdin, one per line, when omitted.
    pub scenes: Vec<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct GenGtArgs {
    #[command(flatten)]
    pub input: Scenes,
    /// Polygon vertices per instance (multiple of 4).
    #[arg(long, default_value_t = DEFAULT_NUM_VERTICES)]
    pub n: usize,
    #[arg(long, default_value_t = DEFAULT_STRIDE)]
    pub stride: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_OBJECTS)]
    pub max_objects: usize,
    #[arg(long, default_value_t = DEFAULT_MIN_OVERLAP)]
    pub min_overlap: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct DecodeArgs {
    #[command(flatten)]
    pub input: Scenes,
    /// Maximum detections per image.
    #[arg(long, default_value_t = DEFAULT_MAX_DETECTIONS)]
    pub k: usize,
    #[arg(long, default_value_t = EVAL_SCORE_THRESHOLD)]
    pub threshold: f64,
    /// Overrides the stride stored with the outputs.
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct CompositeArgs {
    #[command(flatten)]
    pub input: Scenes,
    /// Detections below this score may not hide others.
    #[arg(long, default_value_t = DEFAULT_OCCLUDER_THRESHOLD)]
    pub occluder_threshold: f64,
    /// Detections below this score are not painted at all.
    #[arg(long, default_value_t = 0.0)]
    pub min_score: f64,
    /// Also write pred_labels.png and pred_depth.png.
    #[arg(long)]
    pub png: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[command(flatten)]
    pub input: Scenes,
    /// Report path; defaults to eval.json next to the scene directories.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    #[arg(long, default_value = "1024x512", value_parser = parse_size)]
    pub size: (usize, usize),
    #[arg(long, default_value_t = 50)]
    pub instances: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WIDTHxHEIGHT, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().ok().filter(|&n| n > 0);
    match (parse(w), parse(h)) {
        (Some(w), Some(h)) => Ok((w, h)),
        _ => Err(format!("expected positive WIDTHxHEIGHT, got {s:?}")),
    }
}

/// Hex SHA-256 of the parsed command line.
pub fn config_digest(cli: &Cli) -> String {
    let json = serde_json::to_vec(cli).expect("arguments serialize");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

/// 0 on success, 1 on invalid input or failed checks, 2 on I/O errors.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    eprintln!("centerpoly config sha256:{}", config_digest(&cli));
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| run(&cli.command)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}

/// Runs one command; `Ok(false)` means the command ran but its checks failed.
pub fn run(cmd: &Command) -> Result<bool> {
    match cmd {
        Command::Synth(a) => {
            let cfg = SynthConfig::new(a.preset, a.size.0, a.size.1, a.instances, a.classes);
            let dirs: Vec<PathBuf> = (0..a.count as u64)
                .map(|i| pipeline::scene_dir(&a.out, a.seed + i))
                .collect();
            for_each_scene(&dirs, |i, dir| pipeline::synth(dir, a.seed + i as u64, &cfg))?;
            print_dirs(&dirs);
        }
        Command::GenGt(a) => {
            let dirs = scene_inputs(&a.input)?;
            for_each_scene(&dirs, |_, d| pipeline::gen_gt(d, a.n, a.stride, a.max_objects, a.min_overlap).map(drop))?;
            print_dirs(&dirs);
        }
        Command::Decode(a) => {
            let dirs = scene_inputs(&a.input)?;
            for_each_scene(&dirs, |_, d| pipeline::decode_scene(d, a.k, a.threshold, a.stride).map(drop))?;
            print_dirs(&dirs);
        }
        Command::Composite(a) => {
            let dirs = scene_inputs(&a.input)?;
            for_each_scene(&dirs, |_, d| {
                pipeline::composite_scene(d, a.occluder_threshold, a.min_score, a.png).map(drop)
            })?;
            print_dirs(&dirs);
        }
        Command::Eval(a) => {
            let dirs = scene_inputs(&a.input)?;
            let report = pipeline::eval_scenes(&dirs)?;
            let json = a.json.clone().unwrap_or_else(|| default_report_path(&dirs));
            write_json(&json, &report)?;
            print!("{}", format_report(&report));
            eprintln!("report written to {}", json.display());
        }
        Command::Selftest => {
            let results = selftest::run_all();
            let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
            for r in &results {
                let mark = if r.passed { "PASS" } else { "FAIL" };
                println!("{mark}  {:width$}  {}", r.name, r.detail);
            }
            return Ok(results.iter().all(|r| r.passed));
        }
        Command::Bench(a) => bench(a)?,
    }
    Ok(true)
}

fn default_report_path(dirs: &[PathBuf]) -> PathBuf {
    match dirs {
        [one] => one.join("eval.json"),
        _ => dirs
            .first()
            .and_then(|d| d.parent())
            .map_or_else(|| PathBuf::from("eval.json"), |p| p.join("eval.json")),
    }
}

fn scene_inputs(s: &Scenes) -> Result<Vec<PathBuf>> {
    if !s.scenes.is_empty() {
        return Ok(s.scenes.clone());
    }
    let stdin = std::io::stdin();
    if stdin.is_terminal() {
        return Err(Error::InvalidArgument("no scene directories given".into()));
    }
    let mut dirs = Vec::new();
    for line in stdin.lock().lines() {
        let line = line.map_err(|e| Error::io("<stdin>", e))?;
        if !line.trim().is_empty() {
            dirs.push(PathBuf::from(line.trim()));
        }
    }
    if dirs.is_empty() {
        return Err(Error::InvalidArgument("no scene directories on stdin".into()));
    }
    Ok(dirs)
}

/// Runs `f` over the scenes in parallel and reports the first failure in
/// input order.
fn for_each_scene(dirs: &[PathBuf], f: impl Fn(usize, &PathBuf) -> Result<()> + Sync) -> Result<()> {
    let results: Vec<Result<()>> = dirs.par_iter().enumerate().map(|(i, d)| f(i, d)).collect();
    results.into_iter().collect()
}

fn print_dirs(dirs: &[PathBuf]) {
    for d in dirs {
        println!("{}", d.display());
    }
}

pub fn format_report(r: &ApReport) -> String {
    let mut s = String::from("class      AP   AP50  #gt\n");
    for c in &r.per_class {
        s += &format!("{:>5}  {:.4} {:.4} {:>4}\n", c.class_id, c.ap, c.ap50, c.num_gt);
    }
    if r.has_data() {
        s += &format!("  all  {:.4} {:.4}\n", r.ap, r.ap50);
    } else {
        s += "  all  no ground truth\n";
    }
    s
}

fn bench(a: &BenchArgs) -> Result<()> {
    let (w, h) = a.size;
    let cfg = SynthConfig {
        semi_major: (12.0, 40.0),
        max_occluded_fraction: 0.5,
        min_visible_area: 64,
        ..SynthConfig::new(Preset::Convex, w, h, a.instances, a.classes)
    };
    let mut rows = Vec::new();
    let mut time = |name: &'static str, start: Instant| rows.push((name, start.elapsed().as_secs_f64() * 1e3));

    let t = Instant::now();
    let scene = gen_scene_with(a.seed, &cfg)?;
    time("synth", t);
    let t = Instant::now();
    let gt = build_gt(&scene.annotations(), &GtConfig::new(w, h, a.classes))?;
    time("gen-gt", t);
    let outputs = DenseOutputs::from_gt(&gt);
    let t = Instant::now();
    let dets = decode(&outputs, &DecodeConfig::default());
    time("decode", t);
    let t = Instant::now();
    let _labels = composite(&dets, w, h, DEFAULT_OCCLUDER_THRESHOLD)?;
    time("composite", t);
    let t = Instant::now();
    let gts: Vec<EvalGroundTruth> = scene
        .instances
        .iter()
        .map(|i| EvalGroundTruth {
            image: 0,
            class_id: i.class_id,
            mask: RunMask::from_mask(&i.visible_mask),
        })
        .collect();
    let report = ap_suite(&rasterize_detections(0, &dets, w, h), &gts, a.classes);
    time("eval", t);

    println!("scene {w}x{h}, {} instances, {} detections", scene.instances.len(), dets.len());
    for (name, ms) in &rows {
        println!("{name:>10}  {ms:9.2} ms");
    }
    println!("{:>10}  AP {:.4} AP50 {:.4}", "quality", report.ap, report.ap50);
    Ok(())
}
