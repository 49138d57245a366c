//! Rigid-body math and frame bookkeeping.
//!
//! Rotations are stored as 3x3 matrices. Axis-angle only appears as the
//! three-parameter chart used by the solvers. Every [`RigidTransform`] carries
//! the pair of frames it maps between, and composition checks that the pairs
//! line up.

use std::fmt;

use nalgebra::{Matrix3, Unit, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

/// A 3-D point in meters.
pub type Point3<T> = Vector3<T>;

/// A unit-length direction.
pub type UnitVector3<T> = Unit<Vector3<T>>;

/// Coordinate frames of the LiDAR-camera rig.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Lidar,
    Camera,
    /// Checkerboard frame: the board lies in its x-y plane.
    World,
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Frame::Lidar => "lidar",
            Frame::Camera => "camera",
            Frame::World => "world",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("frame mismatch: expected {expected}, found {found}")]
    FrameMismatch { expected: Frame, found: Frame },
    #[error("rotation is not orthonormal (deviation {deviation:.3e})")]
    NotOrthonormal { deviation: f64 },
    #[error("rotation has determinant {det:.9}, expected +1")]
    Reflection { det: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

pub fn is_finite_point<T: Real>(p: &Point3<T>) -> bool {
    p.iter().all(|c| c.is_finite())
}

/// Largest absolute entry of `RᵀR - I`.
pub fn orthonormality_deviation<T: Real>(r: &Matrix3<T>) -> T {
    (r.transpose() * r - Matrix3::identity()).amax()
}

/// Projects a near-rotation onto SO(3) using the polar decomposition.
pub fn orthonormalize<T: Real>(r: &Matrix3<T>) -> Matrix3<T> {
    let svd = r.svd(true, true);
    let (Some(mut u), Some(v_t)) = (svd.u, svd.v_t) else {
        return *r;
    };
    if (u * v_t).determinant() < T::zero() {
        let mut last = u.column_mut(2);
        last.neg_mut();
    }
    u * v_t
}

/// Rotation plus translation taking points from `source` into `target`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform<T: Real> {
    rotation: Matrix3<T>,
    translation: Vector3<T>,
    source: Frame,
    target: Frame,
}

impl<T: Real> RigidTransform<T> {
    /// Builds a transform, rejecting rotations that are not proper
    /// orthonormal matrices at the scalar's invariant tolerance.
    pub fn new(
        rotation: Matrix3<T>,
        translation: Vector3<T>,
        source: Frame,
        target: Frame,
    ) -> Result<Self, GeometryError> {
        if !rotation.iter().all(|c| c.is_finite()) {
            return Err(GeometryError::NonFinite("rotation"));
        }
        if !is_finite_point(&translation) {
            return Err(GeometryError::NonFinite("translation"));
        }
        let tol = T::invariant_tol();
        let deviation = orthonormality_deviation(&rotation);
        if deviation > tol {
            return Err(GeometryError::NotOrthonormal { deviation: deviation.as_f64() });
        }
        let det = rotation.determinant();
        if (det - T::one()).abs() > tol {
            return Err(GeometryError::Reflection { det: det.as_f64() });
        }
        Ok(Self { rotation, translation, source, target })
    }

    /// Like [`RigidTransform::new`] but first projects `rotation` onto SO(3).
    pub fn new_projected(
        rotation: Matrix3<T>,
        translation: Vector3<T>,
        source: Frame,
        target: Frame,
    ) -> Result<Self, GeometryError> {
        Self::new(orthonormalize(&rotation), translation, source, target)
    }

    pub fn identity(source: Frame, target: Frame) -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros(), source, target }
    }

    pub fn from_translation(translation: Vector3<T>, source: Frame, target: Frame) -> Self {
        Self { rotation: Matrix3::identity(), translation, source, target }
    }

    pub fn rotation(&self) -> &Matrix3<T> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<T> {
        &self.translation
    }

    pub fn source(&self) -> Frame {
        self.source
    }

    pub fn target(&self) -> Frame {
        self.target
    }

    /// Returns `R·p + t`.
    #[inline]
    pub fn apply(&self, p: &Point3<T>) -> Point3<T> {
        self.rotation * p + self.translation
    }

    /// Rotates a direction without translating it.
    #[inline]
    pub fn apply_vector(&self, v: &Vector3<T>) -> Vector3<T> {
        self.rotation * v
    }

    /// Maps a whole cloud, checking that it is expressed in `source`.
    pub fn transform_cloud(&self, cloud: &PointCloud<T>) -> Result<PointCloud<T>, GeometryError> {
        if cloud.frame != self.source {
            return Err(GeometryError::FrameMismatch { expected: self.source, found: cloud.frame });
        }
        Ok(PointCloud {
            points: cloud.points.iter().map(|p| self.apply(p)).collect(),
            frame: self.target,
        })
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
            source: self.target,
            target: self.source,
        }
    }

    /// `self ∘ inner`: applies `inner` first, then `self`.
    pub fn compose(&self, inner: &Self) -> Result<Self, GeometryError> {
        if self.source != inner.target {
            return Err(GeometryError::FrameMismatch { expected: self.source, found: inner.target });
        }
        Ok(Self {
            rotation: orthonormalize(&(self.rotation * inner.rotation)),
            translation: self.rotation * inner.translation + self.translation,
            source: inner.source,
            target: self.target,
        })
    }

    /// Same geometry with a different frame label pair.
    pub fn relabel(&self, source: Frame, target: Frame) -> Self {
        Self { source, target, ..*self }
    }

    /// Re-projects the rotation onto SO(3).
    pub fn renormalized(&self) -> Self {
        Self { rotation: orthonormalize(&self.rotation), ..*self }
    }

    /// Converts the scalar type, re-projecting the rotation afterwards.
    pub fn cast<U: Real>(&self) -> RigidTransform<U> {
        let rotation: Matrix3<U> = self.rotation.map(|c| U::lit(c.as_f64()));
        RigidTransform {
            rotation: orthonormalize(&rotation),
            translation: self.translation.map(|c| U::lit(c.as_f64())),
            source: self.source,
            target: self.target,
        }
    }
}

/// Applies `t` to `p`.
pub fn transform_point<T: Real>(t: &RigidTransform<T>, p: &Point3<T>) -> Point3<T> {
    t.apply(p)
}

/// `a ∘ b`; `a`'s source frame must be `b`'s target frame.
pub fn compose<T: Real>(
    a: &RigidTransform<T>,
    b: &RigidTransform<T>,
) -> Result<RigidTransform<T>, GeometryError> {
    a.compose(b)
}

pub fn invert<T: Real>(t: &RigidTransform<T>) -> RigidTransform<T> {
    t.inverse()
}

/// Rotation as a unit axis and an angle in `[0, π]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle<T: Real> {
    pub axis: UnitVector3<T>,
    pub angle: T,
}

impl<T: Real> AxisAngle<T> {
    /// Normalizes `angle` into `[0, π]`, flipping the axis when needed.
    pub fn new(axis: UnitVector3<T>, angle: T) -> Self {
        let two_pi = T::two_pi();
        let mut a = angle % two_pi;
        if a < T::zero() {
            a += two_pi;
        }
        if a > T::pi() {
            Self { axis: -axis, angle: two_pi - a }
        } else {
            Self { axis, angle: a }
        }
    }

    pub fn to_matrix(&self) -> Matrix3<T> {
        exp_so3(&(self.axis.into_inner() * self.angle))
    }

    pub fn from_matrix(r: &Matrix3<T>) -> Self {
        let v = log_so3(r);
        let angle = v.norm();
        if angle > T::zero() {
            Self { axis: Unit::new_unchecked(v / angle), angle }
        } else {
            Self { axis: Vector3::z_axis(), angle: T::zero() }
        }
    }
}

pub fn axis_angle_to_matrix<T: Real>(a: &AxisAngle<T>) -> Matrix3<T> {
    a.to_matrix()
}

pub fn matrix_to_axis_angle<T: Real>(r: &Matrix3<T>) -> AxisAngle<T> {
    AxisAngle::from_matrix(r)
}

#[inline]
pub fn skew<T: Real>(v: &Vector3<T>) -> Matrix3<T> {
    Matrix3::new(
        T::zero(), -v.z, v.y,
        v.z, T::zero(), -v.x,
        -v.y, v.x, T::zero(),
    )
}

/// Rodrigues' formula for a rotation vector (axis times angle).
pub fn exp_so3<T: Real>(w: &Vector3<T>) -> Matrix3<T> {
    let theta_sq = w.norm_squared();
    let k = skew(w);
    let (a, b) = if theta_sq < T::lit(1.0e-10) {
        // Taylor terms keep the map smooth through zero.
        (
            T::one() - theta_sq / T::lit(6.0),
            T::lit(0.5) - theta_sq / T::lit(24.0),
        )
    } else {
        let theta = theta_sq.sqrt();
        (theta.sin() / theta, (T::one() - theta.cos()) / theta_sq)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Rotation vector of `r`, with angle in `[0, π]`.
pub fn log_so3<T: Real>(r: &Matrix3<T>) -> Vector3<T> {
    let half = T::lit(0.5);
    let v = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let cos_theta = ((r.trace() - T::one()) * half).clamp(-T::one(), T::one());
    let sin_theta = (v.norm() * half).min(T::one());
    let theta = sin_theta.atan2(cos_theta);
    if cos_theta > T::zero() {
        // Away from π the skew part determines the axis accurately.
        if sin_theta < T::lit(1.0e-7) {
            return v * (half + theta * theta / T::lit(12.0));
        }
        return v * (theta / (T::lit(2.0) * sin_theta));
    }
    // Near π use the symmetric part: R + Rᵀ = 2cosθ·I + 2(1 - cosθ)·aaᵀ.
    let sym = (r + r.transpose() - Matrix3::identity() * (T::lit(2.0) * cos_theta))
        / (T::lit(2.0) * (T::one() - cos_theta));
    let mut best = 0;
    for i in 1..3 {
        if sym[(i, i)] > sym[(best, best)] {
            best = i;
        }
    }
    let mut axis: Vector3<T> = sym.column(best).into_owned();
    let n = axis.norm();
    if n <= T::zero() {
        return Vector3::zeros();
    }
    axis /= n;
    if axis.dot(&v) < T::zero() {
        axis = -axis;
    }
    axis * theta
}

/// Angle of `a · bᵀ`, in radians.
pub fn geodesic_angle<T: Real>(a: &Matrix3<T>, b: &Matrix3<T>) -> T {
    log_so3(&(a * b.transpose())).norm()
}

/// Rotation about `axis` by `angle` radians.
pub fn rotation_about<T: Real>(axis: &Vector3<T>, angle: T) -> Matrix3<T> {
    exp_so3(&(axis.normalize() * angle))
}

/// Ordered set of points tagged with the frame they are expressed in.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T: Real> {
    pub points: Vec<Point3<T>>,
    pub frame: Frame,
}

impl<T: Real> PointCloud<T> {
    pub fn new(points: Vec<Point3<T>>, frame: Frame) -> Self {
        Self { points, frame }
    }

    pub fn empty(frame: Frame) -> Self {
        Self { points: Vec::new(), frame }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Option<Point3<T>> {
        if self.points.is_empty() {
            return None;
        }
        let sum = self.points.iter().fold(Vector3::zeros(), |acc, p| acc + p);
        Some(sum / T::from_count(self.points.len()))
    }
}
