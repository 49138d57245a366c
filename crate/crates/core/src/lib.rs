//! LiDAR-camera extrinsic calibration from checkerboard co-planarity.
//!
//! The board plane is pulled out of a raw LiDAR sweep (normals, clustering,
//! RANSAC, orientation and distance priors), and the LiDAR→camera transform
//! is solved so that every board point lands on the board plane reported by
//! the camera. A ray-casting scene generator supplies ground truth.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases at
//! the crate root fix the scalar for the common cases.

pub mod camera;
pub mod extraction;
pub mod geometry;
pub mod metrics;
pub mod optimizer;
pub mod rng;
pub mod scalar;
pub mod synth;

pub use scalar::Real;

pub type RigidTransform64 = geometry::RigidTransform<f64>;
pub type RigidTransform32 = geometry::RigidTransform<f32>;
pub type PointCloud64 = geometry::PointCloud<f64>;
pub type PointCloud32 = geometry::PointCloud<f32>;
pub type CameraIntrinsics64 = camera::CameraIntrinsics<f64>;
pub type BoardSpec64 = camera::BoardSpec<f64>;
pub type BoardPose64 = camera::BoardPose<f64>;
pub type ExtractionParams64 = extraction::ExtractionParams<f64>;
pub type PlaneCandidate64 = extraction::PlaneCandidate<f64>;
pub type CalibrationFrame64 = optimizer::CalibrationFrame<f64>;
pub type SolverOptions64 = optimizer::SolverOptions<f64>;
pub type ExtrinsicEstimate64 = optimizer::ExtrinsicEstimate<f64>;
pub type CalibrationErrors64 = metrics::CalibrationErrors<f64>;
