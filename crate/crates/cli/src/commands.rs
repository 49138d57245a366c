//! The four subcommands. Each returns an [`Outcome`] or an error whose
//! message names the failing file or pipeline stage.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use calib_core::camera::{estimate_board_distance, estimate_board_pose, BoardPose, BoardSpec};
use calib_core::extraction::{extract_board, ExtractionDiagnostics, ExtractionParams};
use calib_core::geometry::{Frame, PointCloud, RigidTransform};
use calib_core::metrics::{calibration_errors, render_reprojection};
use calib_core::optimizer::{solve_extrinsics, CalibrationFrame};
use calib_core::rng::split_seed;
use calib_core::synth::{generate_frame, generate_suite, LabeledFrame, SceneSpec, TransformRecord};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::formats::{
    format_xyz, read_json, read_points, write_atomic, write_json, write_points, CameraInput, Config, FrameFile, FrameReport,
    GroundTruthFile, ParamsFile, ResultFile,
};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Process exit status of a successful run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    /// Converged, but the frames leave part of the extrinsic unconstrained.
    Degenerate,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Ok => 0,
            Outcome::Degenerate => 2,
        }
    }
}

pub fn load_config(params: Option<&Path>, seed: Option<u64>, jobs: Option<usize>) -> Result<Config> {
    let file = match params {
        Some(p) => Some(read_json::<ParamsFile>(p)?),
        None => None,
    };
    let config = Config::resolve(file, seed, jobs);
    config.extraction.validate().context("params")?;
    config.solver.to_options().map_err(|e| anyhow!("params: {e}"))?;
    Ok(config)
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(jobs).build().context("starting worker threads")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    Room,
    BoardOnly,
}

pub struct SimulateArgs {
    pub scene: Option<PathBuf>,
    pub preset: Preset,
    /// Sampled placements; `None` uses the scene's explicit poses if it has any.
    pub frames: Option<usize>,
    pub spread_deg: f64,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

fn frame_stem(i: usize) -> String {
    format!("frame_{i:03}")
}

fn frame_file(spec: &SceneSpec, f: &LabeledFrame, cloud_name: &str) -> FrameFile {
    FrameFile {
        cloud: cloud_name.into(),
        intrinsics: spec.camera.intrinsics,
        corners: Some(f.observed_corners.0.iter().map(|p| [p.x, p.y]).collect()),
        board_pose: None,
        board_spec: spec.board,
    }
}

pub const DEFAULT_FRAMES: usize = 3;

/// Renders frames from a scene and writes them with the ground truth. A scene
/// file's explicit `board_poses` are used unless a frame count is given;
/// presets always sample placements.
pub fn simulate(args: &SimulateArgs) -> Result<Outcome> {
    let mut spec = match &args.scene {
        Some(path) => read_json::<SceneSpec>(path)?,
        None => {
            let mut spec = match args.preset {
                Preset::Room => SceneSpec::room(0),
                Preset::BoardOnly => SceneSpec::board_only(0),
            };
            spec.board_poses.clear();
            spec
        }
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    spec.validate().context("scene")?;
    let frames = if args.frames.is_some() || spec.board_poses.is_empty() {
        let n = args.frames.unwrap_or(DEFAULT_FRAMES);
        generate_suite(&spec, n, args.spread_deg).context("generating frames")?
    } else {
        (0..spec.board_poses.len()).map(|i| generate_frame(&spec, i)).collect::<Result<_, _>>().context("generating frames")?
    };
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut names = Vec::new();
    for f in &frames {
        let stem = frame_stem(f.index);
        let cloud_name = format!("{stem}.xyz");
        write_atomic(&args.out.join(&cloud_name), format_xyz(&f.cloud).as_bytes())?;
        write_json(&args.out.join(format!("{stem}.json")), &frame_file(&spec, f, &cloud_name))?;
        names.push(format!("{stem}.json"));
    }
    let truth = spec.ground_truth_transform()?;
    let record = TransformRecord::from_transform(&truth);
    let gt = GroundTruthFile { rotation: record.rotation, translation: record.translation, seed: spec.seed, frames: names };
    write_json(&args.out.join("gt.json"), &gt)?;
    write_json(&args.out.join("scene.json"), &spec)?;
    println!("wrote {} frames, gt.json and scene.json to {}", frames.len(), args.out.display());
    Ok(Outcome::Ok)
}

/// A frame after the camera stage and board extraction.
struct ProcessedFrame {
    frame: CalibrationFrame<f64>,
    report: FrameReport,
    cloud: PointCloud<f64>,
    intrinsics: calib_core::camera::CameraIntrinsics<f64>,
}

/// Distance prior from a given pose: range from the camera to the board center.
fn pose_distance(pose: &BoardPose<f64>, board: &BoardSpec<f64>) -> f64 {
    pose.transform.inverse().apply(&board.center()).norm()
}

fn extraction_params(config: &Config, board: &BoardSpec<f64>) -> ExtractionParams<f64> {
    let mut params = config.extraction;
    if params.board_size.is_none() {
        let (w, h) = board.physical_size();
        params.board_size = Some([w, h]);
    }
    params
}

fn process_frame(path: &Path, index: usize, config: &Config) -> Result<ProcessedFrame> {
    let file = FrameFile::read(path)?;
    let cloud = read_points(&file.cloud_path(path))?;
    let (pose, l) = match file.camera_input(path)? {
        CameraInput::Corners(c) => {
            let pose = estimate_board_pose(&file.intrinsics, &file.board_spec, &c).context("camera pose")?;
            let l = estimate_board_distance(&file.intrinsics, &file.board_spec, &c).context("distance prior")?;
            (pose, l)
        }
        CameraInput::Pose(pose) => {
            let l = pose_distance(&pose, &file.board_spec);
            (pose, l)
        }
    };
    log::debug!("{}: {} points, distance prior {l:.3} m", path.display(), cloud.len());
    let params = extraction_params(config, &file.board_spec);
    let ex = extract_board(&cloud, l, &params, split_seed(config.seed, index as u64))?;
    let report = FrameReport {
        frame: path.display().to_string(),
        board_points: ex.board.len(),
        pose_residual_px: pose.residual_px,
        extraction: ex.diagnostics,
    };
    let frame = CalibrationFrame::new(ex.board, pose)?;
    Ok(ProcessedFrame { frame, report, cloud, intrinsics: file.intrinsics })
}

pub struct ExtractArgs {
    pub frame: PathBuf,
    pub params: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct ExtractReport {
    frame: String,
    board_points: usize,
    extraction: ExtractionDiagnostics,
    config: Config,
}

/// Diagnostics go next to the board cloud: `board.xyz` → `board.diagnostics.json`.
pub fn diagnostics_path(out: &Path) -> PathBuf {
    out.with_extension("diagnostics.json")
}

pub fn extract(args: &ExtractArgs) -> Result<Outcome> {
    let config = load_config(args.params.as_deref(), args.seed, args.jobs)?;
    let pool = thread_pool(config.jobs)?;
    let p = pool.install(|| process_frame(&args.frame, 0, &config))?;
    write_points(&args.out, &p.frame.board_points)?;
    let d = &p.report.extraction;
    let chosen = &d.candidates[d.selected];
    println!(
        "{} board points from {} clusters; plane {} of {} (α {:.2}°, d {:.3} m, ρ {})",
        p.report.board_points,
        d.cluster_count,
        d.selected,
        d.candidates.len(),
        chosen.alpha_deg,
        chosen.distance,
        chosen.density
    );
    let report = ExtractReport { frame: p.report.frame, board_points: p.report.board_points, extraction: p.report.extraction, config };
    write_json(&diagnostics_path(&args.out), &report)?;
    Ok(Outcome::Ok)
}

pub struct CalibrateArgs {
    pub frames: Vec<PathBuf>,
    pub params: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: PathBuf,
    pub render: Option<PathBuf>,
}

pub fn calibrate(args: &CalibrateArgs) -> Result<Outcome> {
    if args.frames.is_empty() {
        bail!("calibrate needs at least one frame file");
    }
    let config = load_config(args.params.as_deref(), args.seed, args.jobs)?;
    let options = config.solver.to_options().map_err(|e| anyhow!("params: {e}"))?;
    let pool = thread_pool(config.jobs)?;
    let results: Vec<Result<ProcessedFrame>> =
        pool.install(|| args.frames.par_iter().enumerate().map(|(i, path)| process_frame(path, i, &config)).collect());
    let mut processed = Vec::with_capacity(results.len());
    for (path, r) in args.frames.iter().zip(results) {
        processed.push(r.with_context(|| format!("frame {}", path.display()))?);
    }
    let frames: Vec<CalibrationFrame<f64>> = processed.iter().map(|p| p.frame.clone()).collect();
    let est = pool.install(|| solve_extrinsics(&frames, &options)).context("solver")?;

    let record = TransformRecord::from_transform(&est.transform);
    let result = ResultFile {
        tool_version: TOOL_VERSION.into(),
        rotation: record.rotation,
        translation: record.translation,
        rms_residual: est.rms_residual,
        converged: est.converged,
        iterations: est.iterations,
        observability: est.observability.clone(),
        frames: processed.iter().map(|p| p.report.clone()).collect(),
        config,
    };
    result.write(&args.out)?;
    if let Some(dir) = &args.render {
        render_frames(dir, &processed, &est.transform)?;
    }

    let r = est.transform.rotation();
    let t = est.transform.translation();
    println!("rotation (LiDAR→camera):");
    for i in 0..3 {
        println!("  {:>12.9} {:>12.9} {:>12.9}", r[(i, 0)], r[(i, 1)], r[(i, 2)]);
    }
    println!("translation: {:.6} {:.6} {:.6} m", t.x, t.y, t.z);
    println!("rms residual {:.6} m after {} iterations", est.rms_residual, est.iterations);
    if !est.converged {
        bail!("solver did not converge within {} iterations; result written to {}", est.iterations, args.out.display());
    }
    match &est.observability.warning {
        Some(w) => {
            eprintln!("warning: {w}");
            Ok(Outcome::Degenerate)
        }
        None => Ok(Outcome::Ok),
    }
}

/// Each frame's full scan projected through the estimate, colored by depth.
fn render_frames(dir: &Path, processed: &[ProcessedFrame], extrinsic: &RigidTransform<f64>) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (i, p) in processed.iter().enumerate() {
        let k = &p.intrinsics;
        let image = render_reprojection(&p.cloud, extrinsic, k, k.image_width, k.image_height);
        let path = dir.join(format!("{}.png", frame_stem(i)));
        image.save(&path).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

pub struct EvaluateArgs {
    pub result: PathBuf,
    pub ground_truth: PathBuf,
    pub out: PathBuf,
    pub append: bool,
}

/// The rotation and translation of any result or ground-truth file.
#[derive(Deserialize)]
struct TransformFields {
    rotation: [f64; 9],
    translation: [f64; 3],
}

pub const CSV_HEADER: [&str; 8] =
    ["roll_deg", "pitch_deg", "yaw_deg", "x_m", "y_m", "z_m", "rotation_deg", "translation_m"];

pub fn evaluate(args: &EvaluateArgs) -> Result<Outcome> {
    let estimate = ResultFile::read(&args.result)?.transform().map_err(|e| anyhow!("{}: {e}", args.result.display()))?;
    let gt: TransformFields = read_json(&args.ground_truth)?;
    let truth = TransformRecord { rotation: gt.rotation, translation: gt.translation }
        .to_transform(Frame::Lidar, Frame::Camera)
        .map_err(|e| anyhow!("{}: {e}", args.ground_truth.display()))?;
    let e = calibration_errors(&estimate, &truth);
    let row = [
        e.per_axis_rotation[0],
        e.per_axis_rotation[1],
        e.per_axis_rotation[2],
        e.per_axis_translation[0],
        e.per_axis_translation[1],
        e.per_axis_translation[2],
        e.rotation_error_deg,
        e.translation_error_m,
    ];
    let existing = if args.append && args.out.is_file() {
        fs::read(&args.out).with_context(|| format!("reading {}", args.out.display()))?
    } else {
        Vec::new()
    };
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(existing);
    if writer.get_ref().is_empty() {
        writer.write_record(CSV_HEADER)?;
    }
    writer.write_record(row.iter().map(|v| format!("{v:.9}")))?;
    let bytes = writer.into_inner().map_err(|e| anyhow!("writing CSV: {}", e.error()))?;
    write_atomic(&args.out, &bytes)?;
    println!(
        "rotation {:.4}° (roll {:.4} pitch {:.4} yaw {:.4}), translation {:.4} m (x {:.4} y {:.4} z {:.4})",
        row[6], row[0], row[1], row[2], row[7], row[3], row[4], row[5]
    );
    Ok(Outcome::Ok)
}
