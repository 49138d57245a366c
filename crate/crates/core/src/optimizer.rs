//! LiDAR→camera extrinsic solve from board co-planarity.
//!
//! Each LiDAR board point, carried into the camera by the extrinsic and then
//! into the board frame by the camera's board pose, must land on the board
//! plane `z = 0`. The residual of a point is that z-coordinate. The solver is
//! a Levenberg-damped Gauss-Newton over a 6-vector chart (left axis-angle
//! increment on the rotation, additive translation) with a Huber loss.

use nalgebra::{Cholesky, Matrix3, SymmetricEigen, Vector3, Vector6, Matrix6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::BoardPose;
use crate::geometry::{exp_so3, Frame, PointCloud, RigidTransform};
use crate::scalar::Real;

/// Board normals closer than this are treated as the same orientation.
pub const DISTINCT_ORIENTATION_DEG: f64 = 5.0;
/// Relative eigenvalue floor of the normal Gram matrix for counting rank.
pub const RANK_THRESHOLD: f64 = 1.0e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizerError {
    #[error("no calibration frames")]
    NoFrames,
    #[error("insufficient points: need {needed}, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("invalid calibration frame: {0}")]
    InvalidFrame(String),
    #[error("invalid solver options: {0}")]
    InvalidOptions(String),
}

/// One synchronized observation: board points seen by the LiDAR and the
/// board pose seen by the camera.
#[derive(Debug, Clone)]
pub struct CalibrationFrame<T: Real> {
    pub board_points: PointCloud<T>,
    pub board_pose: BoardPose<T>,
}

impl<T: Real> CalibrationFrame<T> {
    pub fn new(board_points: PointCloud<T>, board_pose: BoardPose<T>) -> Result<Self, OptimizerError> {
        let frame = Self { board_points, board_pose };
        frame.validate()?;
        Ok(frame)
    }

    pub fn validate(&self) -> Result<(), OptimizerError> {
        if self.board_points.is_empty() {
            return Err(OptimizerError::InvalidFrame("no board points".into()));
        }
        if self.board_points.frame != Frame::Lidar {
            return Err(OptimizerError::InvalidFrame(format!(
                "board points are in the {} frame, expected lidar",
                self.board_points.frame
            )));
        }
        let t = &self.board_pose.transform;
        if t.source() != Frame::Camera || t.target() != Frame::World {
            return Err(OptimizerError::InvalidFrame("board pose must map camera to world".into()));
        }
        Ok(())
    }

    /// Board normal in the camera frame.
    pub fn normal_in_camera(&self) -> Vector3<T> {
        self.board_pose.normal_in_camera()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions<T: Real> {
    pub max_iterations: usize,
    pub parameter_tolerance: T,
    pub residual_tolerance: T,
    pub damping_init: T,
    /// Knee of the Huber loss, in meters.
    pub huber_delta: T,
    /// Minimum total number of board points across frames.
    pub min_points: usize,
    /// LiDAR→camera starting point; identity when absent.
    pub initial_guess: Option<RigidTransform<T>>,
}

impl<T: Real> Default for SolverOptions<T> {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            parameter_tolerance: T::lit(1.0e-10),
            residual_tolerance: T::lit(1.0e-12),
            damping_init: T::lit(1.0e-3),
            huber_delta: T::lit(0.06),
            min_points: 50,
            initial_guess: None,
        }
    }
}

impl<T: Real> SolverOptions<T> {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        for (name, v) in [
            ("parameter_tolerance", self.parameter_tolerance),
            ("residual_tolerance", self.residual_tolerance),
            ("damping_init", self.damping_init),
            ("huber_delta", self.huber_delta),
        ] {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(OptimizerError::InvalidOptions(format!("{name} must be positive")));
            }
        }
        if self.max_iterations == 0 {
            return Err(OptimizerError::InvalidOptions("max_iterations must be positive".into()));
        }
        if let Some(g) = &self.initial_guess {
            if g.source() != Frame::Lidar || g.target() != Frame::Camera {
                return Err(OptimizerError::InvalidOptions("initial guess must map lidar to camera".into()));
            }
        }
        Ok(())
    }
}

/// How well the frames pin down the extrinsic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservabilityReport {
    pub distinct_orientation_count: usize,
    /// Eigenvalues of `Σ nnᵀ` over camera-frame board normals, descending.
    pub normal_gram_eigenvalues: [f64; 3],
    pub rank_estimate: usize,
    pub warning: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ExtrinsicEstimate<T: Real> {
    /// LiDAR→camera transform.
    pub transform: RigidTransform<T>,
    /// Root mean square of the plain residuals, in meters.
    pub rms_residual: T,
    pub iterations: usize,
    pub converged: bool,
    pub observability: ObservabilityReport,
    /// Robust objective at the initial guess and at the returned solution.
    pub initial_cost: T,
    pub final_cost: T,
}

fn check_frames<T: Real>(frames: &[CalibrationFrame<T>]) -> Result<(), OptimizerError> {
    if frames.is_empty() {
        return Err(OptimizerError::NoFrames);
    }
    frames.iter().try_for_each(|f| f.validate())
}

/// Board-plane offset of every point under the LiDAR→camera transform `x`,
/// in frame order then point order.
pub fn coplanar_residuals<T: Real>(x: &RigidTransform<T>, frames: &[CalibrationFrame<T>]) -> Vec<T> {
    let mut out = Vec::with_capacity(frames.iter().map(|f| f.board_points.len()).sum());
    for f in frames {
        let to_world = &f.board_pose.transform;
        out.par_extend(f.board_points.points.par_iter().map(|p| to_world.apply(&x.apply(p)).z));
    }
    out
}

/// Applies a chart increment `(ω, v)`: `R ← exp(ω)·R`, `t ← t + v`.
pub fn apply_increment<T: Real>(x: &RigidTransform<T>, delta: &Vector6<T>) -> RigidTransform<T> {
    let w = Vector3::new(delta[0], delta[1], delta[2]);
    let v = Vector3::new(delta[3], delta[4], delta[5]);
    let r = exp_so3(&w) * x.rotation();
    RigidTransform::new_projected(r, x.translation() + v, x.source(), x.target())
        .expect("product of rotations stays a rotation")
}

/// Derivatives of each residual with respect to the chart increment at `x`,
/// in the order of [`coplanar_residuals`].
///
/// For a point `p`, with `q = R_CL·p` and `n` the board normal in the camera
/// frame, the residual is `n·(R_CL·p + t_CL) + const`, so `∂r/∂ω = q × n`
/// and `∂r/∂v = n`.
pub fn residual_jacobian<T: Real>(x: &RigidTransform<T>, frames: &[CalibrationFrame<T>]) -> Vec<Vector6<T>> {
    let mut out = Vec::with_capacity(frames.iter().map(|f| f.board_points.len()).sum());
    for f in frames {
        let n = f.normal_in_camera();
        out.par_extend(f.board_points.points.par_iter().map(|p| {
            let q = x.rotation() * p;
            let dw = q.cross(&n);
            Vector6::new(dw.x, dw.y, dw.z, n.x, n.y, n.z)
        }));
    }
    out
}

fn huber<T: Real>(r: T, delta: T) -> T {
    let a = r.abs();
    if a <= delta {
        r * r * T::lit(0.5)
    } else {
        delta * (a - delta * T::lit(0.5))
    }
}

fn huber_weight<T: Real>(r: T, delta: T) -> T {
    let a = r.abs();
    if a <= delta {
        T::one()
    } else {
        delta / a
    }
}

/// Robust objective `Σ ρ(rᵢ)` with the Huber loss.
pub fn robust_cost<T: Real>(residuals: &[T], delta: T) -> T {
    residuals.iter().fold(T::zero(), |acc, &r| acc + huber(r, delta))
}

fn rms<T: Real>(residuals: &[T]) -> T {
    if residuals.is_empty() {
        return T::zero();
    }
    let ss = residuals.iter().fold(T::zero(), |acc, &r| acc + r * r);
    (ss / T::from_count(residuals.len())).sqrt()
}

/// Solves for the LiDAR→camera transform that puts every board point on its
/// board plane.
pub fn solve_extrinsics<T: Real>(
    frames: &[CalibrationFrame<T>],
    opts: &SolverOptions<T>,
) -> Result<ExtrinsicEstimate<T>, OptimizerError> {
    check_frames(frames)?;
    opts.validate()?;
    let total: usize = frames.iter().map(|f| f.board_points.len()).sum();
    if total < opts.min_points {
        return Err(OptimizerError::InsufficientPoints { needed: opts.min_points, got: total });
    }
    let observability = observability_check(frames)?;
    if let Some(w) = &observability.warning {
        log::info!("{w}");
    }

    let delta = opts.huber_delta;
    let mut x = opts.initial_guess.unwrap_or_else(|| RigidTransform::identity(Frame::Lidar, Frame::Camera));
    let mut residuals = coplanar_residuals(&x, frames);
    let initial_cost = robust_cost(&residuals, delta);
    let mut cost = initial_cost;
    let mut lambda = opts.damping_init;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        let jac = residual_jacobian(&x, frames);
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for (j, &r) in jac.iter().zip(&residuals) {
            let w = huber_weight(r, delta);
            h += j * j.transpose() * w;
            g += j * (w * r);
        }

        // Raise the damping until a step lowers the cost or becomes negligible.
        loop {
            let damped = h + Matrix6::identity() * lambda;
            let step = match Cholesky::new(damped) {
                Some(c) => -c.solve(&g),
                None => {
                    lambda *= T::lit(10.0);
                    continue;
                }
            };
            if step.norm() < opts.parameter_tolerance {
                converged = true;
                break;
            }
            let candidate = apply_increment(&x, &step);
            let cand_residuals = coplanar_residuals(&candidate, frames);
            let cand_cost = robust_cost(&cand_residuals, delta);
            if cand_cost < cost {
                let decrease = (cost - cand_cost) / cost;
                x = candidate;
                residuals = cand_residuals;
                cost = cand_cost;
                lambda = (lambda / T::lit(10.0)).max(T::lit(1.0e-12));
                if decrease < opts.residual_tolerance {
                    converged = true;
                }
                break;
            }
            lambda *= T::lit(10.0);
            if !lambda.is_finite() {
                converged = true;
                break;
            }
        }
        if converged {
            break;
        }
    }

    Ok(ExtrinsicEstimate {
        transform: x.renormalized(),
        rms_residual: rms(&residuals),
        iterations,
        converged,
        observability,
        initial_cost,
        final_cost: cost,
    })
}

/// Counts how many distinct board orientations the frames provide and how
/// many directions their normals span.
pub fn observability_check<T: Real>(frames: &[CalibrationFrame<T>]) -> Result<ObservabilityReport, OptimizerError> {
    check_frames(frames)?;
    let normals: Vec<Vector3<f64>> = frames
        .iter()
        .map(|f| {
            let n = f.normal_in_camera();
            Vector3::new(n.x.as_f64(), n.y.as_f64(), n.z.as_f64()).normalize()
        })
        .collect();

    let gram = normals.iter().fold(Matrix3::zeros(), |acc, n| acc + n * n.transpose());
    let mut eig: Vec<f64> = SymmetricEigen::new(gram).eigenvalues.iter().map(|&e| e.max(0.0)).collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let eigenvalues = [eig[0], eig[1], eig[2]];
    let rank_estimate = eigenvalues.iter().filter(|&&e| e > RANK_THRESHOLD * eigenvalues[0].max(1.0)).count();

    // Flipped normals describe the same plane orientation.
    let cos_min = DISTINCT_ORIENTATION_DEG.to_radians().cos();
    let mut representatives: Vec<Vector3<f64>> = Vec::new();
    for n in &normals {
        if representatives.iter().all(|r| r.dot(n).abs() < cos_min) {
            representatives.push(*n);
        }
    }
    let distinct = representatives.len();

    let warning = (distinct < 3).then(|| {
        let effective = distinct.min(rank_estimate).max(1);
        let free_t = 3 - effective;
        let free_r = usize::from(effective == 1);
        let mut msg = format!(
            "only {distinct} distinct board orientation(s) (normal rank {rank_estimate}): \
             {free_t} translation direction(s) unconstrained"
        );
        if free_r > 0 {
            msg.push_str(", plus rotation about the board normal");
        }
        msg.push_str("; add frames with differently tilted boards");
        msg
    });

    Ok(ObservabilityReport {
        distinct_orientation_count: distinct,
        normal_gram_eigenvalues: eigenvalues,
        rank_estimate,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{geodesic_angle, rotation_about};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Camera→world pose for a board centered at `center` (camera frame)
    /// whose normal is tilted by `tilt` (axis-angle) from facing the camera.
    fn board_pose(center: Vector3<f64>, tilt: Vector3<f64>) -> BoardPose<f64> {
        let r_cw = if tilt.norm() == 0.0 { Matrix3::identity() } else { rotation_about(&tilt, tilt.norm()) };
        // World→camera: board point b maps to r_cw·b + center.
        let cam_from_world = RigidTransform::new(r_cw, center, Frame::World, Frame::Camera).unwrap();
        BoardPose::from_transform(cam_from_world.inverse()).unwrap()
    }

    fn truth() -> RigidTransform<f64> {
        let axis = Vector3::new(1.0, -2.0, 0.5);
        let r = rotation_about(&axis, 5f64.to_radians());
        RigidTransform::new(r, Vector3::new(0.06, -0.05, 0.06), Frame::Lidar, Frame::Camera).unwrap()
    }

    /// LiDAR points on the board square of half-size `half`, exact under `truth`.
    fn frame(truth: &RigidTransform<f64>, pose: BoardPose<f64>, half: f64, steps: usize) -> CalibrationFrame<f64> {
        let cam_from_world = pose.transform.inverse();
        let lidar_from_cam = truth.inverse();
        let mut pts = Vec::new();
        for i in 0..steps {
            for j in 0..steps {
                let b = Vector3::new(
                    -half + 2.0 * half * i as f64 / (steps - 1) as f64,
                    -half + 2.0 * half * j as f64 / (steps - 1) as f64,
                    0.0,
                );
                pts.push(lidar_from_cam.apply(&cam_from_world.apply(&b)));
            }
        }
        CalibrationFrame::new(PointCloud::new(pts, Frame::Lidar), pose).unwrap()
    }

    fn three_frames(t: &RigidTransform<f64>) -> Vec<CalibrationFrame<f64>> {
        let a = 35f64.to_radians();
        vec![
            frame(t, board_pose(Vector3::new(0.0, 0.0, 2.5), Vector3::new(0.0, a, 0.0)), 0.4, 12),
            frame(t, board_pose(Vector3::new(0.3, 0.0, 3.0), Vector3::new(a, 0.0, 0.0)), 0.4, 12),
            frame(t, board_pose(Vector3::new(-0.3, 0.2, 2.0), Vector3::new(-0.5 * a, -0.7 * a, 0.0)), 0.4, 12),
        ]
    }

    #[test]
    fn residuals_vanish_at_truth() {
        let t = truth();
        let r = coplanar_residuals(&t, &three_frames(&t));
        assert_eq!(r.len(), 3 * 144);
        assert!(r.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn offset_along_normal_shows_up_in_every_residual() {
        let t = truth();
        let frames = vec![frame(&t, board_pose(Vector3::new(0.0, 0.0, 2.0), Vector3::zeros()), 0.4, 10)];
        // Fronto-parallel board: its world z-axis is the camera z-axis, so
        // shifting the extrinsic by 2 cm along camera z moves every point 2 cm
        // along the board normal.
        let n = frames[0].normal_in_camera();
        let shifted = RigidTransform::new(*t.rotation(), t.translation() + n * 0.02, Frame::Lidar, Frame::Camera).unwrap();
        assert!(coplanar_residuals(&shifted, &frames).iter().all(|r| (r - 0.02).abs() < 1e-9));

        let in_plane = Vector3::new(0.3, -0.2, 0.0);
        let slid = RigidTransform::new(*t.rotation(), t.translation() + in_plane, Frame::Lidar, Frame::Camera).unwrap();
        assert!(coplanar_residuals(&slid, &frames).iter().all(|r| r.abs() < 1e-9));
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let t = truth();
        let frames = three_frames(&t);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-6;
        for _ in 0..10 {
            let d0 = Vector6::from_fn(|i, _| if i < 3 { rng.random_range(-0.2..0.2) } else { rng.random_range(-0.3..0.3) });
            let x = apply_increment(&t, &d0);
            let jac = residual_jacobian(&x, &frames);
            for k in 0..6 {
                let mut e = Vector6::zeros();
                e[k] = h;
                let plus = coplanar_residuals(&apply_increment(&x, &e), &frames);
                let minus = coplanar_residuals(&apply_increment(&x, &(-e)), &frames);
                for (i, j) in jac.iter().enumerate() {
                    let fd = (plus[i] - minus[i]) / (2.0 * h);
                    let scale = j[k].abs().max(1.0);
                    assert!((fd - j[k]).abs() / scale < 1e-5, "param {k}, point {i}: {fd} vs {}", j[k]);
                }
            }
        }
    }

    #[test]
    fn exact_recovery_from_identity() {
        let t = truth();
        let est = solve_extrinsics(&three_frames(&t), &SolverOptions::default()).unwrap();
        assert!(est.converged);
        let rot_deg = geodesic_angle(est.transform.rotation(), t.rotation()).to_degrees();
        assert!(rot_deg < 1e-6, "{rot_deg}");
        assert!((est.transform.translation() - t.translation()).norm() < 1e-6);
        assert_eq!(est.observability.rank_estimate, 3);
        assert!(est.observability.warning.is_none());
        assert!(est.final_cost <= est.initial_cost);
    }

    #[test]
    fn basin_of_convergence() {
        let t = truth();
        let frames = three_frames(&t);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let dir = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let r = rotation_about(&axis, 15f64.to_radians()) * t.rotation();
            let init = RigidTransform::new(r, t.translation() + dir.normalize() * 0.3, Frame::Lidar, Frame::Camera).unwrap();
            let opts = SolverOptions { initial_guess: Some(init), ..Default::default() };
            let est = solve_extrinsics(&frames, &opts).unwrap();
            assert!(geodesic_angle(est.transform.rotation(), t.rotation()).to_degrees() < 1e-6);
            assert!((est.transform.translation() - t.translation()).norm() < 1e-6);
        }
    }

    #[test]
    fn cost_never_increases() {
        let t = truth();
        let mut frames = three_frames(&t);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for f in &mut frames {
            for p in &mut f.board_points.points {
                *p += Vector3::new(0.0, 0.0, rng.random_range(-0.01..0.01));
            }
            // A few gross outliers exercise the Huber branch.
            f.board_points.points[0].z += 0.5;
        }
        for max_iterations in [1, 2, 5, 50] {
            let opts = SolverOptions { max_iterations, ..Default::default() };
            let est = solve_extrinsics(&frames, &opts).unwrap();
            assert!(est.final_cost <= est.initial_cost);
            assert!(est.iterations <= max_iterations);
        }
    }

    #[test]
    fn duplicated_points_leave_the_argmin_unchanged() {
        let t = truth();
        let mut frames = three_frames(&t);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for f in &mut frames {
            for p in &mut f.board_points.points {
                *p += Vector3::new(0.0, 0.0, rng.random_range(-0.005..0.005));
            }
        }
        let base = solve_extrinsics(&frames, &SolverOptions::default()).unwrap();
        let mut doubled_frames = frames.clone();
        for f in &mut doubled_frames {
            let pts = f.board_points.points.clone();
            f.board_points.points.extend(pts);
        }
        let doubled = solve_extrinsics(&doubled_frames, &SolverOptions::default()).unwrap();
        assert!(geodesic_angle(base.transform.rotation(), doubled.transform.rotation()).to_degrees() < 1e-7);
        assert!((base.transform.translation() - doubled.transform.translation()).norm() < 1e-8);
        assert!(doubled.converged);
    }

    #[test]
    fn objective_is_gauge_consistent() {
        // Rotating the LiDAR frame by G and starting from x·G⁻¹ gives the same
        // objective at every corresponding point.
        let t = truth();
        let frames = three_frames(&t);
        let g = RigidTransform::new(
            rotation_about(&Vector3::new(0.2, 1.0, -0.4), 0.7),
            Vector3::new(0.5, -1.0, 0.2),
            Frame::Lidar,
            Frame::Lidar,
        )
        .unwrap();
        let moved: Vec<_> = frames
            .iter()
            .map(|f| {
                let pts = f.board_points.points.iter().map(|p| g.apply(p)).collect();
                CalibrationFrame::new(PointCloud::new(pts, Frame::Lidar), f.board_pose).unwrap()
            })
            .collect();
        let x = apply_increment(&t, &Vector6::new(0.05, -0.02, 0.01, 0.1, 0.0, -0.05));
        let xg = x.compose(&g.inverse()).unwrap();
        let a = robust_cost(&coplanar_residuals(&x, &frames), 0.06);
        let b = robust_cost(&coplanar_residuals(&xg, &moved), 0.06);
        assert!((a - b).abs() < 1e-9 * a.max(1.0));

        let init = RigidTransform::identity(Frame::Lidar, Frame::Camera).compose(&g.inverse()).unwrap();
        let opts = SolverOptions { initial_guess: Some(init), ..Default::default() };
        let est = solve_extrinsics(&moved, &opts).unwrap();
        let expected = t.compose(&g.inverse()).unwrap();
        assert!(geodesic_angle(est.transform.rotation(), expected.rotation()).to_degrees() < 1e-6);
    }

    #[test]
    fn single_plane_is_flagged_but_satisfied() {
        let t = truth();
        let frames = vec![frame(&t, board_pose(Vector3::new(0.0, 0.0, 2.0), Vector3::new(0.0, 0.3, 0.0)), 0.4, 12)];
        let est = solve_extrinsics(&frames, &SolverOptions::default()).unwrap();
        assert!(est.converged);
        assert!(est.observability.rank_estimate <= 3);
        assert_eq!(est.observability.rank_estimate, 1);
        let w = est.observability.warning.as_deref().unwrap();
        assert!(w.contains("2 translation direction(s)") && w.contains("rotation"), "{w}");
        assert!(est.rms_residual < 1e-9);
    }

    #[test]
    fn observability_examples() {
        let t = truth();
        let mk = |tilt: Vector3<f64>| frame(&t, board_pose(Vector3::new(0.0, 0.0, 2.0), tilt), 0.3, 8);
        let h = std::f64::consts::FRAC_PI_2;

        // Normals along camera z, x and y.
        let ortho = [mk(Vector3::zeros()), mk(Vector3::new(0.0, h, 0.0)), mk(Vector3::new(h, 0.0, 0.0))];
        let rep = observability_check(&ortho).unwrap();
        assert_eq!(rep.rank_estimate, 3);
        assert_eq!(rep.distinct_orientation_count, 3);
        assert!(rep.warning.is_none());
        for e in rep.normal_gram_eigenvalues {
            assert!((e - 1.0).abs() < 1e-12);
        }

        let parallel = [mk(Vector3::zeros()), mk(Vector3::zeros())];
        let rep = observability_check(&parallel).unwrap();
        assert_eq!(rep.rank_estimate, 1);
        assert_eq!(rep.distinct_orientation_count, 1);
        assert!(rep.warning.is_some());
        assert!((rep.normal_gram_eigenvalues[0] - 2.0).abs() < 1e-12);

        let forty = [mk(Vector3::zeros()), mk(Vector3::new(0.0, 40f64.to_radians(), 0.0))];
        let rep = observability_check(&forty).unwrap();
        assert_eq!(rep.rank_estimate, 2);
        // Gram of two unit vectors at angle a has eigenvalues 1 ± cos a.
        let c = 40f64.to_radians().cos();
        assert!((rep.normal_gram_eigenvalues[0] - (1.0 + c)).abs() < 1e-12);
        assert!((rep.normal_gram_eigenvalues[1] - (1.0 - c)).abs() < 1e-12);
        assert!(rep.warning.as_deref().unwrap().contains("1 translation direction(s)"));
        assert!(!rep.warning.as_deref().unwrap().contains("rotation"));
    }

    #[test]
    fn two_planes_leave_one_direction_free() {
        // The solution may slide along the line shared by both planes.
        let t = truth();
        let a = 40f64.to_radians();
        let frames = vec![
            frame(&t, board_pose(Vector3::new(0.0, 0.0, 2.0), Vector3::zeros()), 0.4, 12),
            frame(&t, board_pose(Vector3::new(0.0, 0.0, 2.5), Vector3::new(0.0, a, 0.0)), 0.4, 12),
        ];
        let est = solve_extrinsics(&frames, &SolverOptions::default()).unwrap();
        assert!(est.rms_residual < 1e-9);
        assert_eq!(est.observability.rank_estimate, 2);
    }

    #[test]
    fn rejects_bad_input() {
        let t = truth();
        assert_eq!(solve_extrinsics::<f64>(&[], &SolverOptions::default()).unwrap_err(), OptimizerError::NoFrames);
        let small = vec![frame(&t, board_pose(Vector3::new(0.0, 0.0, 2.0), Vector3::zeros()), 0.4, 5)];
        assert_eq!(
            solve_extrinsics(&small, &SolverOptions::default()).unwrap_err(),
            OptimizerError::InsufficientPoints { needed: 50, got: 25 }
        );
        let opts = SolverOptions { huber_delta: 0.0, ..Default::default() };
        assert!(matches!(solve_extrinsics(&three_frames(&t), &opts), Err(OptimizerError::InvalidOptions(_))));
        let wrong = RigidTransform::identity(Frame::Camera, Frame::Lidar);
        let opts = SolverOptions { initial_guess: Some(wrong), ..Default::default() };
        assert!(matches!(solve_extrinsics(&three_frames(&t), &opts), Err(OptimizerError::InvalidOptions(_))));
        let empty = CalibrationFrame::new(PointCloud::empty(Frame::Lidar), board_pose(Vector3::new(0.0, 0.0, 2.0), Vector3::zeros()));
        assert!(empty.is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let t = truth();
        let frames: Vec<CalibrationFrame<f32>> = three_frames(&t)
            .iter()
            .map(|f| {
                let pts = f.board_points.points.iter().map(|p| p.cast::<f32>()).collect();
                let pose = BoardPose::from_transform(f.board_pose.transform.cast::<f32>()).unwrap();
                CalibrationFrame::new(PointCloud::new(pts, Frame::Lidar), pose).unwrap()
            })
            .collect();
        let opts = SolverOptions { parameter_tolerance: 1e-6, residual_tolerance: 1e-7, ..Default::default() };
        let est = solve_extrinsics(&frames, &opts).unwrap();
        let rot = geodesic_angle(est.transform.rotation(), &t.rotation().cast::<f32>());
        assert!(rot.to_degrees() < 0.01);
        assert!((est.transform.translation() - t.translation().cast::<f32>()).norm() < 1e-3);
    }
}
