//! Ray-cast calibration scenes with ground truth.
//!
//! A scene lives in the LiDAR frame: x right, y down, z forward. The LiDAR
//! fires rays on a fixed azimuth/elevation grid and keeps the nearest hit on
//! any primitive; range noise is applied along the ray. The camera sees the
//! board corners through the ground-truth extrinsic. Everything is seeded per
//! (scene seed, frame index), so frames do not depend on generation order.

use nalgebra::{Matrix3, SymmetricEigen, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{project_point, BoardPose, BoardSpec, CameraIntrinsics, CornerObservations};
use crate::geometry::{exp_so3, log_so3, Frame, GeometryError, PointCloud, RigidTransform};
use crate::optimizer::CalibrationFrame;
use crate::rng::{split_seed, stream};

/// Rays closer than this to a surface do not count as hits.
const HIT_EPS: f64 = 1.0e-9;
/// Range noise is resampled beyond this many standard deviations.
pub const NOISE_TRUNCATION: f64 = 3.0;
/// Pose samples tried by [`generate_suite`] before giving up.
pub const MAX_POSE_ATTEMPTS: usize = 4000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("scene has {available} board poses, frame {index} requested")]
    MissingPose { index: usize, available: usize },
    #[error("board not visible in frame {index}: {reason}")]
    BoardNotVisible { index: usize, reason: String },
    #[error("could not place {frames} boards {requested_deg}° apart within {attempts} attempts")]
    InfeasibleSpread { requested_deg: f64, frames: usize, attempts: usize },
}

impl From<GeometryError> for SynthError {
    fn from(e: GeometryError) -> Self {
        SynthError::InvalidScene(e.to_string())
    }
}

/// Ground-truth class of a LiDAR point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Board,
    Floor,
    Target,
    Clutter(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Rectangle spanned by orthonormal `u`, `v` around `center`.
    Rect { center: [f64; 3], u: [f64; 3], v: [f64; 3], half_u: f64, half_v: f64 },
    Sphere { center: [f64; 3], radius: f64 },
    /// Axis-aligned box.
    Cuboid { min: [f64; 3], max: [f64; 3] },
    Disk { center: [f64; 3], normal: [f64; 3], radius: f64 },
}

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::from(a)
}

fn arr(v: Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn plane_hit(o: &Vector3<f64>, d: &Vector3<f64>, c: &Vector3<f64>, n: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
    let denom = d.dot(n);
    if denom.abs() < 1.0e-12 {
        return None;
    }
    let t = (c - o).dot(n) / denom;
    (t > HIT_EPS).then(|| (t, o + d * t - c))
}

impl Shape {
    /// Distance along the unit ray `o + t·d` to the first hit.
    pub fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        match *self {
            Shape::Rect { center, u, v, half_u, half_v } => {
                let (u, v) = (v3(u), v3(v));
                let (t, local) = plane_hit(o, d, &v3(center), &u.cross(&v))?;
                (local.dot(&u).abs() <= half_u && local.dot(&v).abs() <= half_v).then_some(t)
            }
            Shape::Disk { center, normal, radius } => {
                let (t, local) = plane_hit(o, d, &v3(center), &v3(normal))?;
                (local.norm() <= radius).then_some(t)
            }
            Shape::Sphere { center, radius } => {
                let oc = o - v3(center);
                let b = oc.dot(d);
                let disc = b * b - (oc.norm_squared() - radius * radius);
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                [-b - s, -b + s].into_iter().find(|&t| t > HIT_EPS)
            }
            Shape::Cuboid { min, max } => {
                let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
                for k in 0..3 {
                    if d[k].abs() < 1.0e-15 {
                        if o[k] < min[k] || o[k] > max[k] {
                            return None;
                        }
                        continue;
                    }
                    let (a, b) = ((min[k] - o[k]) / d[k], (max[k] - o[k]) / d[k]);
                    lo = lo.max(a.min(b));
                    hi = hi.min(a.max(b));
                }
                if lo > hi {
                    None
                } else if lo > HIT_EPS {
                    Some(lo)
                } else if hi > HIT_EPS {
                    Some(hi)
                } else {
                    None
                }
            }
        }
    }

    fn validate(&self) -> Result<(), String> {
        let finite = |a: &[f64]| a.iter().all(|x| x.is_finite());
        match *self {
            Shape::Rect { center, u, v, half_u, half_v } => {
                let (u, v) = (v3(u), v3(v));
                if !finite(&center) || !(half_u > 0.0 && half_v > 0.0) {
                    return Err("rect needs a finite center and positive half extents".into());
                }
                if (u.norm() - 1.0).abs() > 1e-9 || (v.norm() - 1.0).abs() > 1e-9 || u.dot(&v).abs() > 1e-9 {
                    return Err("rect axes must be orthonormal".into());
                }
            }
            Shape::Sphere { center, radius } => {
                if !finite(&center) || !(radius > 0.0) {
                    return Err("sphere needs a finite center and positive radius".into());
                }
            }
            Shape::Cuboid { min, max } => {
                if !finite(&min) || !finite(&max) || (0..3).any(|k| !(min[k] < max[k])) {
                    return Err("box needs min < max on every axis".into());
                }
            }
            Shape::Disk { center, normal, radius } => {
                if !finite(&center) || !(radius > 0.0) || (v3(normal).norm() - 1.0).abs() > 1e-9 {
                    return Err("disk needs a finite center, unit normal and positive radius".into());
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarModel {
    pub azimuth_res_deg: f64,
    pub elevation_res_deg: f64,
    /// Azimuth limits; positive azimuth looks toward +x.
    pub azimuth_range_deg: [f64; 2],
    /// Elevation limits; positive elevation looks toward −y (up).
    pub elevation_range_deg: [f64; 2],
    /// Standard deviation of range noise along each ray, meters.
    pub range_noise_sigma: f64,
    pub max_range: f64,
}

impl Default for LidarModel {
    fn default() -> Self {
        Self {
            azimuth_res_deg: 0.4,
            elevation_res_deg: 0.4,
            azimuth_range_deg: [-45.0, 45.0],
            elevation_range_deg: [-25.0, 25.0],
            range_noise_sigma: 0.005,
            max_range: 10.0,
        }
    }
}

fn grid(range: [f64; 2], res: f64) -> Vec<f64> {
    let n = ((range[1] - range[0]) / res + 1.0e-9).floor() as usize + 1;
    (0..n).map(|i| (range[0] + res * i as f64).to_radians()).collect()
}

impl LidarModel {
    /// Unit ray for azimuth `a` and elevation `e` (radians).
    pub fn ray(a: f64, e: f64) -> Vector3<f64> {
        Vector3::new(a.sin() * e.cos(), -e.sin(), a.cos() * e.cos())
    }

    pub fn azimuths(&self) -> Vec<f64> {
        grid(self.azimuth_range_deg, self.azimuth_res_deg)
    }

    pub fn elevations(&self) -> Vec<f64> {
        grid(self.elevation_range_deg, self.elevation_res_deg)
    }

    fn validate(&self) -> Result<(), String> {
        if !(self.azimuth_res_deg > 0.0 && self.elevation_res_deg > 0.0) {
            return Err("lidar resolutions must be positive".into());
        }
        let ok = |r: [f64; 2], lim: f64| r[0] <= r[1] && r[0] >= -lim && r[1] <= lim;
        if !ok(self.azimuth_range_deg, 90.0) || !ok(self.elevation_range_deg, 89.0) {
            return Err("lidar field of view must lie within ±90° azimuth and ±89° elevation".into());
        }
        if !(self.range_noise_sigma >= 0.0) || !(self.max_range > 0.0) {
            return Err("range noise must be ≥ 0 and max range positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub intrinsics: CameraIntrinsics<f64>,
    /// Standard deviation of corner pixel noise per coordinate.
    pub pixel_noise_sigma: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            intrinsics: CameraIntrinsics { fx: 500.0, fy: 500.0, cx: 320.0, cy: 240.0, image_width: 640, image_height: 480 },
            pixel_noise_sigma: 0.2,
        }
    }
}

/// Board placement in the LiDAR frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoardPlacement {
    /// Center of the corner grid.
    pub center: [f64; 3],
    /// Axis-angle rotation in degrees; zero faces the board toward the sensor.
    pub rotation_deg: [f64; 3],
}

impl BoardPlacement {
    pub fn fronto_parallel(center: [f64; 3]) -> Self {
        Self { center, rotation_deg: [0.0; 3] }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        exp_so3(&v3(self.rotation_deg).map(f64::to_radians))
    }

    /// Board normal (board z-axis) in the LiDAR frame.
    pub fn normal(&self) -> Vector3<f64> {
        self.rotation().column(2).into_owned()
    }
}

/// Bounds for randomly sampled board placements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlacementRange {
    pub center_min: [f64; 3],
    pub center_max: [f64; 3],
    /// Largest angle between the board normal and the LiDAR z-axis.
    pub max_tilt_deg: f64,
    /// Largest in-plane rotation.
    pub max_roll_deg: f64,
}

impl Default for PlacementRange {
    fn default() -> Self {
        Self { center_min: [-0.15, -0.1, 1.3], center_max: [0.15, 0.1, 1.7], max_tilt_deg: 30.0, max_roll_deg: 10.0 }
    }
}

/// Rigid transform as plain numbers: row-major rotation and translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl TransformRecord {
    pub fn from_transform(t: &RigidTransform<f64>) -> Self {
        let r = t.rotation();
        let mut rotation = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                rotation[3 * i + j] = r[(i, j)];
            }
        }
        Self { rotation, translation: arr(*t.translation()) }
    }

    pub fn to_transform(&self, source: Frame, target: Frame) -> Result<RigidTransform<f64>, GeometryError> {
        RigidTransform::new(Matrix3::from_row_slice(&self.rotation), v3(self.translation), source, target)
    }
}

/// Everything needed to synthesize calibration frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub board: BoardSpec<f64>,
    /// Board border beyond the outermost corners.
    pub board_margin: f64,
    /// Explicit board placements, one per frame, for [`generate_frame`].
    pub board_poses: Vec<BoardPlacement>,
    /// Sampling bounds for [`generate_suite`].
    pub placement: PlacementRange,
    pub clutter: Vec<Primitive>,
    pub lidar: LidarModel,
    pub camera: CameraModel,
    /// LiDAR→camera extrinsic.
    pub ground_truth: TransformRecord,
    /// Fewest LiDAR board hits for the board to count as visible.
    pub min_board_points: usize,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self::room(0)
    }
}

/// Default extrinsic: 5° about a skewed axis and a 9.8 cm offset.
pub fn default_ground_truth() -> RigidTransform<f64> {
    let axis = Vector3::new(1.0, -2.0, 0.5).normalize();
    RigidTransform::new(exp_so3(&(axis * 5f64.to_radians())), Vector3::new(0.06, -0.05, 0.06), Frame::Lidar, Frame::Camera)
        .expect("valid rotation")
}

fn rect(center: [f64; 3], u: [f64; 3], v: [f64; 3], half_u: f64, half_v: f64, label: Label) -> Primitive {
    Primitive { shape: Shape::Rect { center, u, v, half_u, half_v }, label }
}

impl SceneSpec {
    /// A lone board in empty space.
    pub fn board_only(seed: u64) -> Self {
        let board = BoardSpec { rows: 8, cols: 11, square_size: 0.1 };
        Self {
            board,
            board_margin: board.square_size,
            board_poses: vec![BoardPlacement::fronto_parallel([0.0, 0.0, 2.0])],
            placement: PlacementRange::default(),
            clutter: Vec::new(),
            lidar: LidarModel::default(),
            camera: CameraModel::default(),
            ground_truth: TransformRecord::from_transform(&default_ground_truth()),
            min_board_points: 50,
            seed,
        }
    }

    /// Room preset: floor, back and side walls, a small panel parallel to the
    /// board at a similar range, and three spheres.
    pub fn room(seed: u64) -> Self {
        let (x, y, z) = ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]);
        let clutter = vec![
            rect([0.0, 1.2, 5.0], x, z, 6.0, 6.0, Label::Floor),
            rect([0.0, -0.9, 6.0], x, y, 6.0, 2.1, Label::Clutter(0)),
            rect([-2.5, -0.9, 3.0], z, y, 4.0, 2.1, Label::Clutter(1)),
            rect([1.3, -0.1, 1.95], x, y, 0.25, 0.2, Label::Clutter(2)),
            Primitive { shape: Shape::Sphere { center: [-1.0, 0.5, 2.5], radius: 0.2 }, label: Label::Clutter(3) },
            Primitive { shape: Shape::Sphere { center: [0.8, 0.8, 3.0], radius: 0.25 }, label: Label::Clutter(4) },
            Primitive { shape: Shape::Sphere { center: [-0.6, -0.6, 3.5], radius: 0.2 }, label: Label::Clutter(5) },
        ];
        Self { clutter, ..Self::board_only(seed) }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| SynthError::InvalidScene(m);
        self.board.validate().map_err(|e| bad(e.to_string()))?;
        self.camera.intrinsics.validate().map_err(|e| bad(e.to_string()))?;
        self.lidar.validate().map_err(bad)?;
        if !(self.board_margin >= 0.0) || !(self.camera.pixel_noise_sigma >= 0.0) {
            return Err(bad("board margin and pixel noise must be ≥ 0".into()));
        }
        for p in &self.clutter {
            p.shape.validate().map_err(bad)?;
            if p.label == Label::Board {
                return Err(bad("clutter cannot carry the board label".into()));
            }
        }
        let r = &self.placement;
        if (0..3).any(|k| !(r.center_min[k] <= r.center_max[k])) || !(r.max_tilt_deg >= 0.0 && r.max_tilt_deg < 90.0) {
            return Err(bad("placement range needs min ≤ max and a tilt below 90°".into()));
        }
        self.ground_truth_transform()?;
        Ok(())
    }

    pub fn ground_truth_transform(&self) -> Result<RigidTransform<f64>, SynthError> {
        Ok(self.ground_truth.to_transform(Frame::Lidar, Frame::Camera)?)
    }

    /// Board (world) → LiDAR transform for a placement.
    pub fn world_to_lidar(&self, placement: &BoardPlacement) -> RigidTransform<f64> {
        let r = placement.rotation();
        let t = v3(placement.center) - r * self.board.center();
        RigidTransform::new_projected(r, t, Frame::World, Frame::Lidar).expect("exp_so3 yields a rotation")
    }

    /// The physical board as a ray-castable rectangle in the LiDAR frame.
    pub fn board_primitive(&self, placement: &BoardPlacement) -> Primitive {
        let r = placement.rotation();
        let s = self.board.square_size;
        rect(
            placement.center,
            arr(r.column(0).into_owned()),
            arr(r.column(1).into_owned()),
            0.5 * (self.board.cols - 1) as f64 * s + self.board_margin,
            0.5 * (self.board.rows - 1) as f64 * s + self.board_margin,
            Label::Board,
        )
    }
}

/// Casts every ray of the LiDAR grid against `primitives`, keeping the
/// nearest hit within range. Points come out row by row (elevation), then by
/// azimuth.
pub fn scan(lidar: &LidarModel, primitives: &[Primitive], rng: &mut ChaCha8Rng) -> (Vec<Vector3<f64>>, Vec<Label>) {
    let origin = Vector3::zeros();
    let azimuths = lidar.azimuths();
    let rows: Vec<Vec<(f64, Vector3<f64>, Label)>> = lidar
        .elevations()
        .par_iter()
        .map(|&e| {
            azimuths
                .iter()
                .filter_map(|&a| {
                    let d = LidarModel::ray(a, e);
                    primitives
                        .iter()
                        .filter_map(|p| p.shape.intersect(&origin, &d).map(|t| (t, p.label)))
                        .min_by(|x, y| x.0.total_cmp(&y.0))
                        .filter(|(t, _)| *t <= lidar.max_range)
                        .map(|(t, label)| (t, d, label))
                })
                .collect()
        })
        .collect();

    // Noise is drawn sequentially so the sample sequence is schedule-free.
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let sigma = lidar.range_noise_sigma;
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (t, d, label) in rows.into_iter().flatten() {
        let noise = if sigma > 0.0 {
            loop {
                let z: f64 = normal.sample(rng);
                if z.abs() <= NOISE_TRUNCATION {
                    break z * sigma;
                }
            }
        } else {
            0.0
        };
        points.push(d * (t + noise));
        labels.push(label);
    }
    (points, labels)
}

/// One synthetic calibration frame with per-point truth.
#[derive(Debug, Clone)]
pub struct LabeledFrame {
    pub index: usize,
    pub placement: BoardPlacement,
    /// Full LiDAR scan.
    pub cloud: PointCloud<f64>,
    pub labels: Vec<Label>,
    /// True camera→board pose.
    pub board_pose: BoardPose<f64>,
    pub true_corners: CornerObservations<f64>,
    /// Corners with pixel noise, as a detector would report them.
    pub observed_corners: CornerObservations<f64>,
}

impl LabeledFrame {
    pub fn board_indices(&self) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == Label::Board).collect()
    }

    pub fn board_points(&self) -> PointCloud<f64> {
        PointCloud::new(self.board_indices().iter().map(|&i| self.cloud.points[i]).collect(), Frame::Lidar)
    }

    /// Calibration frame from the labeled board points and the true pose.
    pub fn calibration_frame(&self) -> CalibrationFrame<f64> {
        CalibrationFrame { board_points: self.board_points(), board_pose: self.board_pose }
    }
}

fn frame_rngs(seed: u64, index: usize) -> (ChaCha8Rng, ChaCha8Rng) {
    let frame_seed = split_seed(split_seed(seed, stream::SCENE), index as u64);
    (ChaCha8Rng::seed_from_u64(split_seed(frame_seed, 0)), ChaCha8Rng::seed_from_u64(split_seed(frame_seed, 1)))
}

fn add_pixel_noise(corners: &CornerObservations<f64>, sigma: f64, rng: &mut ChaCha8Rng) -> CornerObservations<f64> {
    if sigma == 0.0 {
        return corners.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    CornerObservations(
        corners.0.iter().map(|c| c + Vector2::new(normal.sample(rng), normal.sample(rng))).collect(),
    )
}

/// Returns the reason the camera cannot see every corner, if any.
fn camera_blocker(spec: &SceneSpec, lidar_from_world: &RigidTransform<f64>, truth: &RigidTransform<f64>) -> Option<String> {
    let k = &spec.camera.intrinsics;
    let eye = truth.inverse().apply(&Vector3::zeros());
    for (i, corner) in spec.board.world_corners().iter().enumerate() {
        let p = lidar_from_world.apply(corner);
        match project_point(k, &truth.apply(&p)) {
            Ok(px) if k.contains(&px) => {}
            _ => return Some(format!("corner {i} falls outside the image")),
        }
        let to = p - eye;
        let dist = to.norm();
        let d = to / dist;
        if spec.clutter.iter().any(|c| c.shape.intersect(&eye, &d).is_some_and(|t| t < dist - 1.0e-6)) {
            return Some(format!("corner {i} is occluded"));
        }
    }
    None
}

fn render_frame(spec: &SceneSpec, placement: &BoardPlacement, index: usize) -> Result<LabeledFrame, SynthError> {
    let truth = spec.ground_truth_transform()?;
    let lidar_from_world = spec.world_to_lidar(placement);
    if let Some(reason) = camera_blocker(spec, &lidar_from_world, &truth) {
        return Err(SynthError::BoardNotVisible { index, reason });
    }
    let (mut lidar_rng, mut pixel_rng) = frame_rngs(spec.seed, index);
    let mut primitives = Vec::with_capacity(spec.clutter.len() + 1);
    primitives.push(spec.board_primitive(placement));
    primitives.extend_from_slice(&spec.clutter);
    let (points, labels) = scan(&spec.lidar, &primitives, &mut lidar_rng);
    let hits = labels.iter().filter(|&&l| l == Label::Board).count();
    if hits < spec.min_board_points {
        return Err(SynthError::BoardNotVisible {
            index,
            reason: format!("{hits} LiDAR board hits, need {}", spec.min_board_points),
        });
    }

    let camera_from_world = truth.compose(&lidar_from_world)?;
    let board_pose = BoardPose::from_transform(camera_from_world.inverse()).map_err(|e| SynthError::InvalidScene(e.to_string()))?;
    let true_corners = crate::camera::project_board(&spec.camera.intrinsics, &spec.board, &board_pose.transform)
        .map_err(|e| SynthError::BoardNotVisible { index, reason: e.to_string() })?;
    let observed_corners = add_pixel_noise(&true_corners, spec.camera.pixel_noise_sigma, &mut pixel_rng);
    if let Err(e) = observed_corners.validate(&spec.camera.intrinsics, &spec.board) {
        return Err(SynthError::BoardNotVisible { index, reason: e.to_string() });
    }
    Ok(LabeledFrame {
        index,
        placement: *placement,
        cloud: PointCloud::new(points, Frame::Lidar),
        labels,
        board_pose,
        true_corners,
        observed_corners,
    })
}

/// Renders frame `index` using the scene's explicit board placement.
pub fn generate_frame(spec: &SceneSpec, index: usize) -> Result<LabeledFrame, SynthError> {
    spec.validate()?;
    let placement = spec
        .board_poses
        .get(index)
        .ok_or(SynthError::MissingPose { index, available: spec.board_poses.len() })?;
    render_frame(spec, placement, index)
}

fn sample_placement(range: &PlacementRange, rng: &mut ChaCha8Rng) -> BoardPlacement {
    let mut center = [0.0; 3];
    for k in 0..3 {
        center[k] = if range.center_min[k] < range.center_max[k] {
            rng.random_range(range.center_min[k]..range.center_max[k])
        } else {
            range.center_min[k]
        };
    }
    // sqrt spreads tilts evenly over the cap of allowed normals.
    let tilt = range.max_tilt_deg.to_radians() * rng.random::<f64>().sqrt();
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    let roll = range.max_roll_deg.to_radians() * rng.random_range(-1.0..=1.0);
    let r = exp_so3(&(Vector3::new(phi.cos(), phi.sin(), 0.0) * tilt)) * exp_so3(&(Vector3::z() * roll));
    BoardPlacement { center, rotation_deg: arr(log_so3(&r).map(f64::to_degrees)) }
}

fn smallest_gram_eigenvalue(normals: &[Vector3<f64>]) -> f64 {
    let gram = normals.iter().fold(Matrix3::zeros(), |acc, n| acc + n * n.transpose());
    SymmetricEigen::new(gram).eigenvalues.min()
}

/// Samples `n_frames` board placements whose normals are pairwise at least
/// `spread_deg` apart and renders them. With three or more frames the normals
/// are also kept away from a common plane, so every direction is constrained.
pub fn generate_suite(spec: &SceneSpec, n_frames: usize, spread_deg: f64) -> Result<Vec<LabeledFrame>, SynthError> {
    spec.validate()?;
    if n_frames == 0 {
        return Err(SynthError::InvalidScene("n_frames must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed(spec.seed, stream::ORIENTATION));
    let cos_spread = spread_deg.to_radians().cos();
    let min_eig = (1.0 - cos_spread) / 4.0;
    let mut frames: Vec<LabeledFrame> = Vec::with_capacity(n_frames);
    let mut normals: Vec<Vector3<f64>> = Vec::new();
    for _ in 0..MAX_POSE_ATTEMPTS {
        if frames.len() == n_frames {
            break;
        }
        let placement = sample_placement(&spec.placement, &mut rng);
        let n = placement.normal();
        if normals.iter().any(|m| m.dot(&n) > cos_spread) {
            continue;
        }
        if n_frames >= 3 && normals.len() == 2 {
            let trial = [normals[0], normals[1], n];
            if smallest_gram_eigenvalue(&trial) < min_eig {
                continue;
            }
        }
        match render_frame(spec, &placement, frames.len()) {
            Ok(frame) => {
                normals.push(n);
                frames.push(frame);
            }
            Err(SynthError::BoardNotVisible { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    if frames.len() < n_frames {
        return Err(SynthError::InfeasibleSpread { requested_deg: spread_deg, frames: n_frames, attempts: MAX_POSE_ATTEMPTS });
    }
    Ok(frames)
}

/// Circular target for reprojection checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircleTarget {
    /// Center in the LiDAR frame.
    pub center: [f64; 3],
    pub normal: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone)]
pub struct CircleFrame {
    /// LiDAR hits on the target disk.
    pub target_points: PointCloud<f64>,
    pub true_center_px: Vector2<f64>,
    /// Center pixel with detector noise.
    pub observed_center_px: Vector2<f64>,
}

/// Scans a circular target placed in the scene's clutter (no board) and
/// projects its center into the camera.
pub fn generate_circle_frame(spec: &SceneSpec, target: &CircleTarget, index: usize) -> Result<CircleFrame, SynthError> {
    spec.validate()?;
    let disk = Primitive {
        shape: Shape::Disk { center: target.center, normal: arr(v3(target.normal).normalize()), radius: target.radius },
        label: Label::Target,
    };
    disk.shape.validate().map_err(SynthError::InvalidScene)?;
    let truth = spec.ground_truth_transform()?;
    let (mut lidar_rng, mut pixel_rng) = frame_rngs(spec.seed, index);
    let mut primitives = vec![disk];
    primitives.extend_from_slice(&spec.clutter);
    let (points, labels) = scan(&spec.lidar, &primitives, &mut lidar_rng);
    let hits: Vec<Vector3<f64>> = points.iter().zip(&labels).filter(|(_, &l)| l == Label::Target).map(|(p, _)| *p).collect();
    if hits.len() < spec.min_board_points {
        return Err(SynthError::BoardNotVisible { index, reason: format!("{} LiDAR target hits", hits.len()) });
    }
    let k = &spec.camera.intrinsics;
    let true_center_px = project_point(k, &truth.apply(&v3(target.center)))
        .ok()
        .filter(|px| k.contains(px))
        .ok_or_else(|| SynthError::BoardNotVisible { index, reason: "target center outside the image".into() })?;
    let observed = add_pixel_noise(&CornerObservations(vec![true_center_px]), spec.camera.pixel_noise_sigma, &mut pixel_rng);
    Ok(CircleFrame {
        target_points: PointCloud::new(hits, Frame::Lidar),
        true_center_px,
        observed_center_px: observed.0[0],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::estimate_board_pose;
    use crate::geometry::geodesic_angle;
    use crate::optimizer::observability_check;

    fn quiet(mut spec: SceneSpec) -> SceneSpec {
        spec.lidar.range_noise_sigma = 0.0;
        spec.camera.pixel_noise_sigma = 0.0;
        spec
    }

    #[test]
    fn fronto_parallel_footprint_matches_closed_form() {
        let mut spec = quiet(SceneSpec::board_only(1));
        spec.lidar.azimuth_res_deg = 0.2;
        spec.lidar.elevation_res_deg = 0.2;
        let frame = generate_frame(&spec, 0).unwrap();

        // Board at z = 2 spanning x ∈ [−0.6, 0.6], y ∈ [−0.45, 0.45]. A ray
        // (sin a cos e, −sin e, cos a cos e) meets z = 2 at x = 2 tan a and
        // y = −2 tan e / cos a.
        let (hx, hy, z) = (0.6, 0.45, 2.0);
        let mut expected_rows = Vec::new();
        for e in spec.lidar.elevations() {
            let count = spec
                .lidar
                .azimuths()
                .iter()
                .filter(|&&a| (z * a.tan()).abs() <= hx && (z * e.tan() / a.cos()).abs() <= hy)
                .count();
            expected_rows.push(count);
        }
        let board: Vec<Vector3<f64>> = frame.board_points().points;
        let mut got_rows = vec![0usize; expected_rows.len()];
        let elevations = spec.lidar.elevations();
        for p in &board {
            let e = (-p.y / p.norm()).asin();
            let row = elevations.iter().enumerate().min_by(|a, b| (a.1 - e).abs().total_cmp(&(b.1 - e).abs())).unwrap().0;
            got_rows[row] += 1;
        }
        for (got, want) in got_rows.iter().zip(&expected_rows) {
            assert!(got.abs_diff(*want) <= 1, "row count {got} vs {want}");
        }
        assert!(board.len() > 3000);
        // Noise-free board points lie exactly on the plane.
        assert!(board.iter().all(|p| (p.z - 2.0).abs() < 1e-9));
    }

    #[test]
    fn board_points_satisfy_the_plane_bound() {
        for sigma in [0.0, 0.005] {
            let mut spec = SceneSpec::room(7);
            spec.lidar.range_noise_sigma = sigma;
            let frames = generate_suite(&spec, 3, 20.0).unwrap();
            let truth = spec.ground_truth_transform().unwrap();
            for f in &frames {
                for p in &f.board_points().points {
                    let z = f.board_pose.transform.apply(&truth.apply(p)).z;
                    assert!(z.abs() <= 3.0 * sigma + 1e-9, "z = {z} with σ = {sigma}");
                }
            }
        }
    }

    #[test]
    fn labels_cover_every_point() {
        let f = generate_frame(&SceneSpec::room(3), 0).unwrap();
        assert_eq!(f.labels.len(), f.cloud.len());
        for l in [Label::Board, Label::Floor, Label::Clutter(0), Label::Clutter(2)] {
            assert!(f.labels.contains(&l), "missing {l:?}");
        }
    }

    #[test]
    fn identical_seeds_give_identical_frames() {
        let spec = SceneSpec::room(42);
        let a = generate_suite(&spec, 3, 20.0).unwrap();
        let b = generate_suite(&spec, 3, 20.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.cloud.points, y.cloud.points);
            assert_eq!(x.labels, y.labels);
            assert_eq!(x.observed_corners, y.observed_corners);
            assert_eq!(x.placement, y.placement);
        }
        let c = generate_suite(&SceneSpec::room(43), 3, 20.0).unwrap();
        assert_ne!(a[0].cloud.points, c[0].cloud.points);
    }

    #[test]
    fn frames_do_not_depend_on_generation_order() {
        let mut spec = SceneSpec::room(5);
        spec.board_poses = vec![
            BoardPlacement::fronto_parallel([0.0, 0.0, 2.0]),
            BoardPlacement { center: [0.1, 0.0, 2.2], rotation_deg: [0.0, 25.0, 0.0] },
        ];
        let second_first = generate_frame(&spec, 1).unwrap();
        let _ = generate_frame(&spec, 0).unwrap();
        let again = generate_frame(&spec, 1).unwrap();
        assert_eq!(second_first.cloud.points, again.cloud.points);
    }

    #[test]
    fn noise_free_corners_give_the_true_pose() {
        let spec = quiet(SceneSpec::room(2));
        for f in generate_suite(&spec, 3, 25.0).unwrap() {
            let est = estimate_board_pose(&spec.camera.intrinsics, &spec.board, &f.observed_corners).unwrap();
            assert!(geodesic_angle(est.transform.rotation(), f.board_pose.transform.rotation()) < 1e-6);
            assert!((est.transform.translation() - f.board_pose.transform.translation()).norm() < 1e-6);
        }
    }

    #[test]
    fn suite_spread_and_rank() {
        let spec = SceneSpec::room(9);
        let frames = generate_suite(&spec, 3, 30.0).unwrap();
        for i in 0..3 {
            for j in 0..i {
                let a = frames[i].placement.normal().angle(&frames[j].placement.normal()).to_degrees();
                assert!(a >= 30.0, "{a}");
            }
        }
        let cal: Vec<_> = frames.iter().map(|f| f.calibration_frame()).collect();
        assert_eq!(observability_check(&cal).unwrap().rank_estimate, 3);

        assert_eq!(generate_suite(&spec, 1, 90.0).unwrap().len(), 1);
        assert_eq!(generate_suite(&spec, 10, 10.0).unwrap().len(), 10);
        assert!(matches!(generate_suite(&spec, 4, 70.0), Err(SynthError::InfeasibleSpread { .. })));
    }

    #[test]
    fn smaller_suites_are_prefixes_of_larger_ones() {
        let spec = SceneSpec::board_only(31);
        let big = generate_suite(&spec, 6, 10.0).unwrap();
        for n in [2, 3, 5] {
            let small = generate_suite(&spec, n, 10.0).unwrap();
            for (a, b) in small.iter().zip(&big) {
                assert_eq!(a.placement, b.placement);
                assert_eq!(a.cloud.points, b.cloud.points);
                assert_eq!(a.observed_corners, b.observed_corners);
            }
        }
    }

    #[test]
    fn invisible_boards_are_reported() {
        let mut spec = SceneSpec::board_only(0);
        spec.board_poses = vec![
            BoardPlacement::fronto_parallel([3.0, 0.0, 2.0]),
            BoardPlacement::fronto_parallel([0.0, 0.0, 20.0]),
        ];
        assert!(matches!(generate_frame(&spec, 0), Err(SynthError::BoardNotVisible { index: 0, .. })));
        assert!(matches!(generate_frame(&spec, 1), Err(SynthError::BoardNotVisible { index: 1, .. })));
        assert!(matches!(generate_frame(&spec, 2), Err(SynthError::MissingPose { index: 2, available: 2 })));

        // A wall between the sensors and the board hides it from the camera.
        let mut blocked = SceneSpec::board_only(0);
        blocked.clutter.push(rect([0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], 0.1, 0.1, Label::Clutter(0)));
        assert!(matches!(generate_frame(&blocked, 0), Err(SynthError::BoardNotVisible { .. })));
    }

    #[test]
    fn yaw_rotated_scene_rotates_the_scan() {
        // Rotating about the sensor's y-axis by whole grid steps maps rays to
        // rays, so the scan rotates with the scene.
        let mut spec = quiet(SceneSpec::board_only(0));
        spec.lidar.azimuth_range_deg = [-60.0, 60.0];
        let steps = 25.0;
        let angle = (steps * spec.lidar.azimuth_res_deg).to_radians();
        let rot = exp_so3(&(Vector3::y() * angle));
        let base = spec.board_primitive(&spec.board_poses[0]);
        let Shape::Rect { center, u, v, half_u, half_v } = base.shape else { unreachable!() };
        let turned = rect(arr(rot * v3(center)), arr(rot * v3(u)), arr(rot * v3(v)), half_u, half_v, Label::Board);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (a, _) = scan(&spec.lidar, &[base], &mut rng);
        let (b, _) = scan(&spec.lidar, &[turned], &mut rng);
        assert_eq!(a.len(), b.len());
        let mut rotated: Vec<Vector3<f64>> = a.iter().map(|p| rot * p).collect();
        let key = |p: &Vector3<f64>| (p.y * 1e6).round() as i64 * 1_000_000_000 + (p.x * 1e6).round() as i64;
        rotated.sort_by_key(key);
        let mut b = b;
        b.sort_by_key(key);
        for (p, q) in rotated.iter().zip(&b) {
            assert!((p - q).norm() < 1e-9);
        }
    }

    #[test]
    fn primitive_intersections() {
        let o = Vector3::zeros();
        let z = Vector3::z();
        let sphere = Shape::Sphere { center: [0.0, 0.0, 5.0], radius: 1.0 };
        assert!((sphere.intersect(&o, &z).unwrap() - 4.0).abs() < 1e-12);
        let inside = Shape::Sphere { center: [0.0, 0.0, 0.0], radius: 1.0 };
        assert!((inside.intersect(&o, &z).unwrap() - 1.0).abs() < 1e-12);
        let cube = Shape::Cuboid { min: [-1.0, -1.0, 3.0], max: [1.0, 1.0, 4.0] };
        assert!((cube.intersect(&o, &z).unwrap() - 3.0).abs() < 1e-12);
        assert!(cube.intersect(&o, &Vector3::x()).is_none());
        let disk = Shape::Disk { center: [0.0, 0.0, 2.0], normal: [0.0, 0.0, 1.0], radius: 0.5 };
        assert!((disk.intersect(&o, &z).unwrap() - 2.0).abs() < 1e-12);
        assert!(disk.intersect(&o, &Vector3::new(0.3, 0.0, 1.0).normalize()).is_none());
        let behind = Shape::Disk { center: [0.0, 0.0, -2.0], normal: [0.0, 0.0, 1.0], radius: 0.5 };
        assert!(behind.intersect(&o, &z).is_none());
    }

    #[test]
    fn circle_target_center_projects() {
        let spec = quiet(SceneSpec::room(4));
        let target = CircleTarget { center: [0.2, -0.1, 3.0], normal: [0.0, 0.0, -1.0], radius: 0.25 };
        let f = generate_circle_frame(&spec, &target, 0).unwrap();
        assert_eq!(f.true_center_px, f.observed_center_px);
        let c = f.target_points.centroid().unwrap();
        assert!((c - v3(target.center)).norm() < 0.01);
        assert!(f.target_points.points.iter().all(|p| (p.z - 3.0).abs() < 1e-9));
    }

    #[test]
    fn scene_round_trips_through_json() {
        let spec = SceneSpec::room(11);
        let text = serde_json::to_string(&spec).unwrap();
        let back: SceneSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
        let partial: SceneSpec = serde_json::from_str(r#"{"seed": 3, "clutter": []}"#).unwrap();
        assert_eq!(partial.seed, 3);
        assert!(partial.clutter.is_empty());
        assert_eq!(partial.lidar, LidarModel::default());
    }

    #[test]
    fn invalid_scenes_are_rejected() {
        let mut spec = SceneSpec::room(0);
        spec.lidar.azimuth_res_deg = 0.0;
        assert!(matches!(spec.validate(), Err(SynthError::InvalidScene(_))));
        let mut spec = SceneSpec::room(0);
        spec.ground_truth.rotation[0] = 2.0;
        assert!(matches!(spec.validate(), Err(SynthError::InvalidScene(_))));
    }
}
