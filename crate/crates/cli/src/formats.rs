//! On-disk formats: frame descriptors, point files, result files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use calib_core::camera::{BoardPose, BoardSpec, CameraIntrinsics, CornerObservations};
use calib_core::extraction::{ExtractionDiagnostics, ExtractionParams};
use calib_core::geometry::{Frame, PointCloud, RigidTransform};
use calib_core::optimizer::{ObservabilityReport, SolverOptions};
use calib_core::synth::TransformRecord;
use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Json { path: PathBuf, message: String },
    #[error("{path}:{line}: {message}")]
    Points { path: PathBuf, line: usize, message: String },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io { path: path.to_path_buf(), source }
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| FormatError::Io { path: path.to_path_buf(), source: e.error })?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, FormatError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| FormatError::Json { path: path.to_path_buf(), message: e.to_string() })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| FormatError::Json { path: path.to_path_buf(), message: e.to_string() })?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// A calibration frame on disk: the LiDAR scan plus what the camera saw.
/// Exactly one of `corners` and `board_pose` is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameFile {
    /// Point file, relative to the frame file's directory unless absolute.
    pub cloud: PathBuf,
    pub intrinsics: CameraIntrinsics<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corners: Option<Vec<[f64; 2]>>,
    /// Camera→board transform.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub board_pose: Option<TransformRecord>,
    pub board_spec: BoardSpec<f64>,
}

/// Camera-side input of a frame after parsing.
pub enum CameraInput {
    Corners(CornerObservations<f64>),
    Pose(BoardPose<f64>),
}

impl FrameFile {
    pub fn read(path: &Path) -> Result<Self, FormatError> {
        let frame: FrameFile = read_json(path)?;
        let bad = |message: String| FormatError::Invalid { path: path.to_path_buf(), message };
        if frame.corners.is_some() == frame.board_pose.is_some() {
            return Err(bad("exactly one of `corners` and `board_pose` must be given".into()));
        }
        frame.intrinsics.validate().map_err(|e| bad(e.to_string()))?;
        frame.board_spec.validate().map_err(|e| bad(e.to_string()))?;
        let cloud = frame.cloud_path(path);
        if !cloud.is_file() {
            return Err(bad(format!("cloud file {} does not exist", cloud.display())));
        }
        Ok(frame)
    }

    pub fn cloud_path(&self, frame_path: &Path) -> PathBuf {
        match frame_path.parent() {
            Some(dir) if self.cloud.is_relative() => dir.join(&self.cloud),
            _ => self.cloud.clone(),
        }
    }

    pub fn camera_input(&self, path: &Path) -> Result<CameraInput, FormatError> {
        let bad = |message: String| FormatError::Invalid { path: path.to_path_buf(), message };
        match (&self.corners, &self.board_pose) {
            (Some(c), None) => {
                let obs = CornerObservations(c.iter().map(|p| Vector2::new(p[0], p[1])).collect());
                obs.validate(&self.intrinsics, &self.board_spec).map_err(|e| bad(e.to_string()))?;
                Ok(CameraInput::Corners(obs))
            }
            (None, Some(p)) => {
                let t = p.to_transform(Frame::Camera, Frame::World).map_err(|e| bad(format!("board_pose: {e}")))?;
                Ok(CameraInput::Pose(BoardPose::from_transform(t).map_err(|e| bad(e.to_string()))?))
            }
            _ => Err(bad("exactly one of `corners` and `board_pose` must be given".into())),
        }
    }
}

/// Reads an `x y z` text file (`#` comments) or an ASCII PLY file.
pub fn read_points(path: &Path) -> Result<PointCloud<f64>, FormatError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let points = if text.starts_with("ply") { parse_ply(path, &text)? } else { parse_xyz(path, &text)? };
    Ok(PointCloud::new(points, Frame::Lidar))
}

fn parse_xyz(path: &Path, text: &str) -> Result<Vec<Vector3<f64>>, FormatError> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        points.push(parse_xyz_fields(path, i + 1, line, 3)?);
    }
    Ok(points)
}

fn parse_xyz_fields(path: &Path, line_no: usize, line: &str, expected: usize) -> Result<Vector3<f64>, FormatError> {
    let err = |message: String| FormatError::Points { path: path.to_path_buf(), line: line_no, message };
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != expected {
        return Err(err(format!("expected {expected} numbers, found {}", fields.len())));
    }
    let mut v = [0.0; 3];
    for k in 0..3 {
        v[k] = fields[k].parse::<f64>().map_err(|_| err(format!("`{}` is not a number", fields[k])))?;
        if !v[k].is_finite() {
            return Err(err(format!("`{}` is not finite", fields[k])));
        }
    }
    Ok(Vector3::new(v[0], v[1], v[2]))
}

/// ASCII PLY with a vertex element whose first three properties are x, y, z.
fn parse_ply(path: &Path, text: &str) -> Result<Vec<Vector3<f64>>, FormatError> {
    let mut lines = text.lines().enumerate();
    let err = |line: usize, message: &str| FormatError::Points { path: path.to_path_buf(), line, message: message.into() };
    let mut vertex_count = None;
    let mut in_vertex = false;
    let mut properties = Vec::new();
    let mut leading_rows = 0usize;
    loop {
        let (i, line) = lines.next().ok_or_else(|| err(0, "PLY header has no end_header"))?;
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["ply"] if i == 0 => {}
            ["format", "ascii", _] => {}
            ["format", ..] => return Err(err(i + 1, "only ASCII PLY is supported")),
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => {
                let count: usize = count.parse().map_err(|_| err(i + 1, "bad element count"))?;
                in_vertex = *name == "vertex";
                if in_vertex {
                    vertex_count = Some(count);
                } else if vertex_count.is_none() {
                    leading_rows += count;
                }
            }
            ["property", "list", ..] if in_vertex => return Err(err(i + 1, "list properties on vertices are not supported")),
            ["property", _, name] if in_vertex => properties.push(name.to_string()),
            ["property", ..] => {}
            ["end_header"] => break,
            _ => return Err(err(i + 1, "unrecognized PLY header line")),
        }
    }
    let n = vertex_count.ok_or_else(|| err(0, "PLY has no vertex element"))?;
    if properties.len() < 3 || properties[..3] != ["x", "y", "z"] {
        return Err(err(0, "vertex properties must start with x y z"));
    }
    // Elements declared before the vertices come first in the body.
    for _ in 0..leading_rows {
        lines.next().ok_or_else(|| err(0, "PLY body ends early"))?;
    }
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let (i, line) = lines.next().ok_or_else(|| err(0, "PLY body has fewer vertices than declared"))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        let head = fields.iter().take(3).copied().collect::<Vec<_>>().join(" ");
        if fields.len() != properties.len() {
            return Err(err(i + 1, &format!("expected {} values, found {}", properties.len(), fields.len())));
        }
        points.push(parse_xyz_fields(path, i + 1, &head, 3)?);
    }
    Ok(points)
}

/// `x y z` per line with shortest round-trip float formatting.
pub fn format_xyz(cloud: &PointCloud<f64>) -> String {
    let mut out = String::with_capacity(cloud.len() * 48);
    for p in &cloud.points {
        out.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
    }
    out
}

pub fn write_points(path: &Path, cloud: &PointCloud<f64>) -> Result<(), FormatError> {
    write_atomic(path, format_xyz(cloud).as_bytes())
}

/// Solver settings as they appear in parameter and result files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub parameter_tolerance: f64,
    pub residual_tolerance: f64,
    pub damping_init: f64,
    pub huber_delta: f64,
    pub min_points: usize,
    pub initial_guess: Option<TransformRecord>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SolverOptions::<f64>::default();
        Self {
            max_iterations: d.max_iterations,
            parameter_tolerance: d.parameter_tolerance,
            residual_tolerance: d.residual_tolerance,
            damping_init: d.damping_init,
            huber_delta: d.huber_delta,
            min_points: d.min_points,
            initial_guess: None,
        }
    }
}

impl SolverConfig {
    pub fn to_options(&self) -> Result<SolverOptions<f64>, String> {
        let initial_guess = match &self.initial_guess {
            Some(g) => Some(g.to_transform(Frame::Lidar, Frame::Camera).map_err(|e| format!("initial_guess: {e}"))?),
            None => None,
        };
        let options = SolverOptions {
            max_iterations: self.max_iterations,
            parameter_tolerance: self.parameter_tolerance,
            residual_tolerance: self.residual_tolerance,
            damping_init: self.damping_init,
            huber_delta: self.huber_delta,
            min_points: self.min_points,
            initial_guess,
        };
        options.validate().map_err(|e| e.to_string())?;
        Ok(options)
    }
}

/// Contents of a `--params` file. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsFile {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub extraction: ExtractionParams<f64>,
    pub solver: SolverConfig,
}

/// Effective configuration after flags, params file and defaults are merged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub jobs: usize,
    /// `board_size` null means each frame uses its own board's size.
    pub extraction: ExtractionParams<f64>,
    pub solver: SolverConfig,
}

pub const DEFAULT_SEED: u64 = 0;

impl Config {
    /// Flags win over the params file, which wins over built-in defaults.
    pub fn resolve(params: Option<ParamsFile>, seed: Option<u64>, jobs: Option<usize>) -> Self {
        let p = params.unwrap_or_default();
        Config {
            seed: seed.or(p.seed).unwrap_or(DEFAULT_SEED),
            jobs: jobs.or(p.jobs).unwrap_or(1).max(1),
            extraction: p.extraction,
            solver: p.solver,
        }
    }
}

/// Per-frame record in a result file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameReport {
    pub frame: String,
    pub board_points: usize,
    /// Mean corner reprojection residual of the camera pose; zero when the
    /// pose was given.
    pub pose_residual_px: f64,
    pub extraction: ExtractionDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultFile {
    pub tool_version: String,
    /// LiDAR→camera rotation, row-major.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub rms_residual: f64,
    pub converged: bool,
    pub iterations: usize,
    pub observability: ObservabilityReport,
    pub frames: Vec<FrameReport>,
    pub config: Config,
}

pub const SIGNIFICANT_DIGITS: usize = 12;

/// Rounds to [`SIGNIFICANT_DIGITS`]; idempotent, so re-serializing a parsed
/// file reproduces it.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x).parse().unwrap_or(x)
}

fn canonicalize(v: serde_json::Value) -> serde_json::Value {
    use serde_json::Value;
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = round_sig(n.as_f64().unwrap_or(0.0));
            serde_json::Number::from_f64(x).map(Value::Number).unwrap_or(Value::Null)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(canonicalize).collect()),
        // serde_json's map is ordered by key, which fixes the key order.
        Value::Object(m) => Value::Object(m.into_iter().map(|(k, v)| (k, canonicalize(v))).collect()),
        other => other,
    }
}

impl ResultFile {
    pub fn transform(&self) -> Result<RigidTransform<f64>, String> {
        TransformRecord { rotation: self.rotation, translation: self.translation }
            .to_transform(Frame::Lidar, Frame::Camera)
            .map_err(|e| format!("rotation fails the orthonormality check: {e}"))
    }

    /// Canonical text: sorted keys, floats at 12 significant digits.
    pub fn to_canonical_string(&self) -> Result<String, serde_json::Error> {
        let value = canonicalize(serde_json::to_value(self)?);
        let mut text = serde_json::to_string_pretty(&value)?;
        text.push('\n');
        Ok(text)
    }

    pub fn write(&self, path: &Path) -> Result<(), FormatError> {
        let text = self
            .to_canonical_string()
            .map_err(|e| FormatError::Json { path: path.to_path_buf(), message: e.to_string() })?;
        write_atomic(path, text.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self, FormatError> {
        let r: ResultFile = read_json(path)?;
        r.transform().map_err(|message| FormatError::Invalid { path: path.to_path_buf(), message })?;
        Ok(r)
    }
}

/// Ground truth written by `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthFile {
    /// LiDAR→camera rotation, row-major.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub seed: u64,
    pub frames: Vec<String>,
}

impl GroundTruthFile {
    pub fn transform(&self) -> Result<RigidTransform<f64>, String> {
        TransformRecord { rotation: self.rotation, translation: self.translation }
            .to_transform(Frame::Lidar, Frame::Camera)
            .map_err(|e| format!("ground-truth rotation is invalid: {e}"))
    }
}
