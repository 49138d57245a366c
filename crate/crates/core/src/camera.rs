//! Pinhole projection, planar board pose estimation and the board distance
//! prior.

use nalgebra::{DMatrix, Matrix3, SMatrix, SVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{exp_so3, orthonormalize, Frame, Point3, RigidTransform};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CameraError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid board spec: {0}")]
    InvalidBoard(String),
    #[error("expected {expected} corners, got {got}")]
    CornerCount { expected: usize, got: usize },
    #[error("corner {index} at ({u:.2}, {v:.2}) lies outside the image")]
    CornerOutOfBounds { index: usize, u: f64, v: f64 },
    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("pose estimation failed: {0}")]
    PoseEstimation(String),
    #[error("degenerate corner spacing: {pixels:.3} px between corners {a} and {b}")]
    DegenerateSpacing { a: usize, b: usize, pixels: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub image_width: u32,
    pub image_height: u32,
}

impl<T: Real> CameraIntrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T, image_width: u32, image_height: u32) -> Result<Self, CameraError> {
        let k = Self { fx, fy, cx, cy, image_width, image_height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fx > T::zero() && self.fy > T::zero()) {
            return Err(CameraError::InvalidIntrinsics("focal lengths must be positive".into()));
        }
        if !self.contains(&Vector2::new(self.cx, self.cy)) {
            return Err(CameraError::InvalidIntrinsics("principal point outside the image".into()));
        }
        Ok(())
    }

    /// Mean of the two focal lengths, used where a single focal length is needed.
    pub fn mean_focal(&self) -> T {
        (self.fx + self.fy) * T::lit(0.5)
    }

    pub fn contains(&self, px: &Vector2<T>) -> bool {
        px.x >= T::zero()
            && px.y >= T::zero()
            && px.x <= T::from_count(self.image_width as usize)
            && px.y <= T::from_count(self.image_height as usize)
    }

    /// Pixel to normalized image coordinates.
    fn normalize(&self, px: &Vector2<T>) -> Vector2<T> {
        Vector2::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy)
    }
}

/// Checkerboard geometry. `rows` and `cols` count interior corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoardSpec<T> {
    pub rows: usize,
    pub cols: usize,
    pub square_size: T,
}

impl<T: Real> BoardSpec<T> {
    pub fn new(rows: usize, cols: usize, square_size: T) -> Result<Self, CameraError> {
        let b = Self { rows, cols, square_size };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if self.rows < 2 || self.cols < 2 {
            return Err(CameraError::InvalidBoard("need at least 2x2 interior corners".into()));
        }
        if !(self.square_size > T::zero()) {
            return Err(CameraError::InvalidBoard("square size must be positive".into()));
        }
        Ok(())
    }

    pub fn corner_count(&self) -> usize {
        self.rows * self.cols
    }

    /// Corner `k = row * cols + col` sits at `(col·s, row·s, 0)`.
    pub fn world_corners(&self) -> Vec<Point3<T>> {
        let s = self.square_size;
        (0..self.rows)
            .flat_map(|r| (0..self.cols).map(move |c| Vector3::new(T::from_count(c) * s, T::from_count(r) * s, T::zero())))
            .collect()
    }

    /// Center of the corner grid in the board frame.
    pub fn center(&self) -> Point3<T> {
        let s = self.square_size;
        Vector3::new(
            T::from_count(self.cols - 1) * s * T::lit(0.5),
            T::from_count(self.rows - 1) * s * T::lit(0.5),
            T::zero(),
        )
    }

    /// Outer size `(width, height)` of a board whose squares extend one
    /// square past the outermost interior corners.
    pub fn physical_size(&self) -> (T, T) {
        let s = self.square_size;
        (T::from_count(self.cols + 1) * s, T::from_count(self.rows + 1) * s)
    }

    /// Index pairs of horizontally and vertically adjacent corners.
    pub fn adjacent_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::with_capacity(2 * self.rows * self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                let k = r * self.cols + c;
                if c + 1 < self.cols {
                    pairs.push((k, k + 1));
                }
                if r + 1 < self.rows {
                    pairs.push((k, k + self.cols));
                }
            }
        }
        pairs
    }
}

/// Detected corner pixels in row-major board order.
#[derive(Debug, Clone, PartialEq)]
pub struct CornerObservations<T: Real>(pub Vec<Vector2<T>>);

impl<T: Real> CornerObservations<T> {
    pub fn validate(&self, k: &CameraIntrinsics<T>, spec: &BoardSpec<T>) -> Result<(), CameraError> {
        if self.0.len() != spec.corner_count() {
            return Err(CameraError::CornerCount { expected: spec.corner_count(), got: self.0.len() });
        }
        for (index, px) in self.0.iter().enumerate() {
            if !px.iter().all(|c| c.is_finite()) || !k.contains(px) {
                return Err(CameraError::CornerOutOfBounds { index, u: px.x.as_f64(), v: px.y.as_f64() });
            }
        }
        Ok(())
    }
}

/// Camera pose relative to the board: maps camera-frame points into the
/// board (world) frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoardPose<T: Real> {
    pub transform: RigidTransform<T>,
    pub residual_px: T,
}

impl<T: Real> BoardPose<T> {
    /// Wraps a camera→world transform; the residual is zero.
    pub fn from_transform(transform: RigidTransform<T>) -> Result<Self, CameraError> {
        if transform.source() != Frame::Camera || transform.target() != Frame::World {
            return Err(CameraError::PoseEstimation(format!(
                "board pose must map camera to world, got {} to {}",
                transform.source(),
                transform.target()
            )));
        }
        Ok(Self { transform, residual_px: T::zero() })
    }

    /// Board normal (world z-axis) expressed in the camera frame.
    pub fn normal_in_camera(&self) -> Vector3<T> {
        self.transform.rotation().row(2).transpose()
    }
}

/// Pinhole projection of a camera-frame point.
pub fn project_point<T: Real>(k: &CameraIntrinsics<T>, p: &Point3<T>) -> Result<Vector2<T>, CameraError> {
    if !(p.z > T::zero()) {
        return Err(CameraError::BehindCamera { z: p.z.as_f64() });
    }
    Ok(Vector2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
}

/// Hartley normalization: translate to the centroid, scale to mean distance √2.
fn normalizing_transform<T: Real>(pts: &[Vector2<T>]) -> Matrix3<T> {
    let n = T::from_count(pts.len());
    let c = pts.iter().fold(Vector2::zeros(), |a, p| a + p) / n;
    let mean_dist = pts.iter().map(|p| (p - c).norm()).fold(T::zero(), |a, d| a + d) / n;
    let s = if mean_dist > T::zero() { T::lit(2.0).sqrt() / mean_dist } else { T::one() };
    Matrix3::new(s, T::zero(), -s * c.x, T::zero(), s, -s * c.y, T::zero(), T::zero(), T::one())
}

/// Normalized DLT estimate of the plane-to-image homography.
fn estimate_homography<T: Real>(plane: &[Vector2<T>], image: &[Vector2<T>]) -> Result<Matrix3<T>, CameraError> {
    let tp = normalizing_transform(plane);
    let ti = normalizing_transform(image);
    let n = plane.len();
    let mut a = DMatrix::<T>::zeros(2 * n, 9);
    for (i, (p, q)) in plane.iter().zip(image).enumerate() {
        let p = tp * Vector3::new(p.x, p.y, T::one());
        let q = ti * Vector3::new(q.x, q.y, T::one());
        let (x, y) = (p.x, p.y);
        let (u, v) = (q.x, q.y);
        let row0 = [-x, -y, -T::one(), T::zero(), T::zero(), T::zero(), u * x, u * y, u];
        let row1 = [T::zero(), T::zero(), T::zero(), -x, -y, -T::one(), v * x, v * y, v];
        for j in 0..9 {
            a[(2 * i, j)] = row0[j];
            a[(2 * i + 1, j)] = row1[j];
        }
    }
    // AᵀA is 9x9 even when there are fewer than nine rows.
    let ata = a.transpose() * &a;
    let eig = ata.symmetric_eigen();
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap_or(std::cmp::Ordering::Equal));
    let largest = eig.eigenvalues[order[8]].max(T::default_epsilon());
    let second = eig.eigenvalues[order[1]];
    if second / largest < T::lit(1.0e-10) {
        return Err(CameraError::PoseEstimation("homography system is rank deficient".into()));
    }
    let h = eig.eigenvectors.column(order[0]);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let ti_inv = ti
        .try_inverse()
        .ok_or_else(|| CameraError::PoseEstimation("singular normalization".into()))?;
    Ok(ti_inv * hn * tp)
}

/// Rejects observation sets whose pixels are (nearly) collinear.
fn check_pixel_spread<T: Real>(image: &[Vector2<T>]) -> Result<(), CameraError> {
    let n = T::from_count(image.len());
    let c = image.iter().fold(Vector2::zeros(), |a, p| a + p) / n;
    let cov = image.iter().fold(nalgebra::Matrix2::zeros(), |acc, p| {
        let d = p - c;
        acc + d * d.transpose()
    }) / n;
    let eig = cov.symmetric_eigenvalues();
    let (lo, hi) = if eig[0] < eig[1] { (eig[0], eig[1]) } else { (eig[1], eig[0]) };
    if !(hi > T::zero()) || lo / hi < T::lit(1.0e-8) {
        return Err(CameraError::PoseEstimation("corner pixels are collinear".into()));
    }
    Ok(())
}

/// Camera-from-board pose `(R_CW, t_CW)` from a homography in normalized
/// coordinates.
fn decompose_homography<T: Real>(h: &Matrix3<T>) -> (Matrix3<T>, Vector3<T>) {
    let h1: Vector3<T> = h.column(0).into_owned();
    let h2: Vector3<T> = h.column(1).into_owned();
    let h3: Vector3<T> = h.column(2).into_owned();
    let mut lambda = T::lit(2.0) / (h1.norm() + h2.norm());
    // The board must be in front of the camera.
    if h3.z * lambda < T::zero() {
        lambda = -lambda;
    }
    let r1 = h1 * lambda;
    let r2 = h2 * lambda;
    let r3 = r1.cross(&r2);
    let r = Matrix3::from_columns(&[r1, r2, r3]);
    (orthonormalize(&r), h3 * lambda)
}

fn reprojection_residuals<T: Real>(
    k: &CameraIntrinsics<T>,
    r: &Matrix3<T>,
    t: &Vector3<T>,
    world: &[Point3<T>],
    observed: &[Vector2<T>],
) -> Option<Vec<Vector2<T>>> {
    world
        .iter()
        .zip(observed)
        .map(|(pw, obs)| project_point(k, &(r * pw + t)).ok().map(|px| px - obs))
        .collect()
}

fn sum_sq<T: Real>(res: &[Vector2<T>]) -> T {
    res.iter().fold(T::zero(), |a, r| a + r.norm_squared())
}

/// Levenberg-Marquardt refinement of `(R_CW, t_CW)` on corner reprojection
/// error. Increments are applied on the left: `R ← exp(ω)·R`, `t ← exp(ω)·t + v`.
fn refine_pose<T: Real>(
    k: &CameraIntrinsics<T>,
    mut r: Matrix3<T>,
    mut t: Vector3<T>,
    world: &[Point3<T>],
    observed: &[Vector2<T>],
) -> (Matrix3<T>, Vector3<T>) {
    let Some(mut res) = reprojection_residuals(k, &r, &t, world, observed) else {
        return (r, t);
    };
    let mut cost = sum_sq(&res);
    let mut lambda = T::lit(1.0e-3);
    for _ in 0..100 {
        let mut jtj = SMatrix::<T, 6, 6>::zeros();
        let mut jtr = SVector::<T, 6>::zeros();
        for (pw, e) in world.iter().zip(&res) {
            let pc = r * pw + t;
            let iz = T::one() / pc.z;
            let dproj = nalgebra::Matrix2x3::new(
                k.fx * iz, T::zero(), -k.fx * pc.x * iz * iz,
                T::zero(), k.fy * iz, -k.fy * pc.y * iz * iz,
            );
            // d(exp(ω)·pc)/dω = -[pc]×
            let mut dp = SMatrix::<T, 3, 6>::zeros();
            dp.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-crate::geometry::skew(&pc)));
            dp.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
            let j = dproj * dp;
            jtj += j.transpose() * j;
            jtr += j.transpose() * e;
        }
        let mut improved = false;
        for _ in 0..10 {
            let damped = jtj + SMatrix::<T, 6, 6>::identity() * lambda;
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-jtr))) else {
                lambda *= T::lit(10.0);
                continue;
            };
            let omega = Vector3::new(step[0], step[1], step[2]);
            let dr = exp_so3(&omega);
            let r_new = orthonormalize(&(dr * r));
            let t_new = dr * t + Vector3::new(step[3], step[4], step[5]);
            match reprojection_residuals(k, &r_new, &t_new, world, observed) {
                Some(new_res) if sum_sq(&new_res) <= cost => {
                    let new_cost = sum_sq(&new_res);
                    let rel = (cost - new_cost) / cost.max(T::default_epsilon());
                    r = r_new;
                    t = t_new;
                    res = new_res;
                    cost = new_cost;
                    lambda = (lambda / T::lit(10.0)).max(T::lit(1.0e-12));
                    improved = step.norm() > T::lit(1.0e-15) && rel > T::lit(1.0e-15);
                    break;
                }
                _ => lambda *= T::lit(10.0),
            }
        }
        if !improved {
            break;
        }
    }
    (r, t)
}

/// Estimates the camera→board transform from detected corners.
///
/// Uses a normalized DLT homography, decomposes it with the known
/// intrinsics, and refines the pose by minimizing corner reprojection error.
pub fn estimate_board_pose<T: Real>(
    k: &CameraIntrinsics<T>,
    spec: &BoardSpec<T>,
    corners: &CornerObservations<T>,
) -> Result<BoardPose<T>, CameraError> {
    k.validate()?;
    spec.validate()?;
    corners.validate(k, spec)?;
    check_pixel_spread(&corners.0)?;

    let world = spec.world_corners();
    let plane: Vec<Vector2<T>> = world.iter().map(|p| Vector2::new(p.x, p.y)).collect();
    let normalized: Vec<Vector2<T>> = corners.0.iter().map(|px| k.normalize(px)).collect();
    let h = estimate_homography(&plane, &normalized)?;
    let (r0, t0) = decompose_homography(&h);
    if !r0.iter().chain(t0.iter()).all(|c| c.is_finite()) {
        return Err(CameraError::PoseEstimation("homography decomposition produced non-finite values".into()));
    }
    let (r, t) = refine_pose(k, r0, t0, &world, &corners.0);
    let residuals = reprojection_residuals(k, &r, &t, &world, &corners.0)
        .ok_or_else(|| CameraError::PoseEstimation("board ends up behind the camera".into()))?;
    let residual_px = residuals.iter().fold(T::zero(), |a, e| a + e.norm()) / T::from_count(residuals.len());

    let camera_from_world = RigidTransform::new_projected(r, t, Frame::World, Frame::Camera)
        .map_err(|e| CameraError::PoseEstimation(e.to_string()))?;
    Ok(BoardPose { transform: camera_from_world.inverse(), residual_px })
}

/// Board-to-camera distance from corner spacing by similar triangles:
/// `l = f·w′/w`, with `w` the median pixel distance over adjacent corner
/// pairs and `w′` the square size.
pub fn estimate_board_distance<T: Real>(
    k: &CameraIntrinsics<T>,
    spec: &BoardSpec<T>,
    corners: &CornerObservations<T>,
) -> Result<T, CameraError> {
    k.validate()?;
    spec.validate()?;
    if corners.0.len() != spec.corner_count() {
        return Err(CameraError::CornerCount { expected: spec.corner_count(), got: corners.0.len() });
    }
    let mut spacings = Vec::with_capacity(2 * spec.corner_count());
    for (a, b) in spec.adjacent_pairs() {
        let w = (corners.0[a] - corners.0[b]).norm();
        if !(w >= T::one()) {
            return Err(CameraError::DegenerateSpacing { a, b, pixels: w.as_f64() });
        }
        spacings.push(w);
    }
    let w = median(&mut spacings);
    Ok(k.mean_focal() * spec.square_size / w)
}

pub(crate) fn median<T: Real>(values: &mut [T]) -> T {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) * T::lit(0.5)
    }
}

/// Projects the board corners for a camera→board pose; used to synthesize
/// observations.
pub fn project_board<T: Real>(
    k: &CameraIntrinsics<T>,
    spec: &BoardSpec<T>,
    camera_to_world: &RigidTransform<T>,
) -> Result<CornerObservations<T>, CameraError> {
    let world_to_camera = camera_to_world.inverse();
    let px = spec
        .world_corners()
        .iter()
        .map(|p| project_point(k, &world_to_camera.apply(p)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CornerObservations(px))
}
