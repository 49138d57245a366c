//! Isolates the checkerboard's points in a raw LiDAR sweep.
//!
//! The pipeline runs PCA normals → normal-aware density clustering →
//! per-cluster RANSAC → tilt filter → distance/density selection. Input points
//! are put into a canonical order first, so the result does not depend on the
//! order points arrive in.

mod cluster;
mod normals;
mod plane;
mod select;
mod spatial;

use std::fmt;

use nalgebra::{Unit, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cluster::{cluster_points, representative_normal, weighted_mean_direction, Cluster};
pub use normals::{estimate_normals, NormalEstimate};
pub(crate) use normals::smallest_principal_axis;
pub use plane::{centroid_distance, fit_plane_ransac, plane_distance, tilt_angle, PlaneCandidate, MIN_INLIER_RATIO};
pub use select::{filter_planes, select_board_plane, Selection};

use crate::geometry::{is_finite_point, Frame, PointCloud, UnitVector3};
use crate::rng::{split_seed, stream};
use crate::scalar::Real;

/// Pipeline stage, attached to failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Normals,
    Clustering,
    PlaneFitting,
    AngleFilter,
    DistanceSelection,
    SizeCheck,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Ingest => "ingest",
            Stage::Normals => "normals",
            Stage::Clustering => "clustering",
            Stage::PlaneFitting => "plane-fitting",
            Stage::AngleFilter => "angle-filter",
            Stage::DistanceSelection => "distance-selection",
            Stage::SizeCheck => "size-check",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExtractionError {
    #[error("invalid extraction parameters: {0}")]
    InvalidParams(String),
    #[error("insufficient points: need {needed}, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("weighted normal sum vanishes")]
    DegenerateNormal,
    #[error("no plane found (best inlier ratio {inlier_ratio:.3})")]
    NoPlane { inlier_ratio: f64 },
    #[error("no plane candidates to select from")]
    EmptyCandidates,
    #[error("extraction failed at {stage}: {reason}")]
    Failed { stage: Stage, reason: String },
}

impl ExtractionError {
    fn at(stage: Stage, reason: impl Into<String>) -> Self {
        ExtractionError::Failed { stage, reason: reason.into() }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            ExtractionError::Failed { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

/// Tuning knobs for board extraction. Distances in meters, angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionParams<T: Real> {
    pub knn_k: usize,
    pub dbscan_eps: T,
    pub dbscan_min_pts: usize,
    pub normal_angle_merge_deg: T,
    pub ransac_threshold: T,
    pub ransac_iterations: usize,
    /// Maximum tilt between a candidate's normal and `reference_axis`.
    pub theta_deg: T,
    /// The sensor's viewing axis.
    #[serde(with = "unit_vector_serde")]
    pub reference_axis: UnitVector3<T>,
    pub distance_tolerance: T,
    /// Expected outer size of the board. When set, the selected plane's
    /// in-plane extent must match it within `size_tolerance` (relative).
    pub board_size: Option<[T; 2]>,
    pub size_tolerance: T,
}

impl<T: Real> Default for ExtractionParams<T> {
    fn default() -> Self {
        Self {
            knn_k: 20,
            dbscan_eps: T::lit(0.15),
            dbscan_min_pts: 10,
            normal_angle_merge_deg: T::lit(10.0),
            ransac_threshold: T::lit(0.02),
            ransac_iterations: 500,
            theta_deg: T::lit(45.0),
            reference_axis: Vector3::z_axis(),
            distance_tolerance: T::lit(0.3),
            board_size: None,
            size_tolerance: T::lit(0.35),
        }
    }
}

impl<T: Real> ExtractionParams<T> {
    pub fn validate(&self) -> Result<(), ExtractionError> {
        let positive = [
            ("dbscan_eps", self.dbscan_eps),
            ("normal_angle_merge_deg", self.normal_angle_merge_deg),
            ("ransac_threshold", self.ransac_threshold),
            ("distance_tolerance", self.distance_tolerance),
        ];
        for (name, v) in positive {
            if !(v > T::zero()) {
                return Err(ExtractionError::InvalidParams(format!("{name} must be positive")));
            }
        }
        if self.knn_k < 3 {
            return Err(ExtractionError::InvalidParams("knn_k must be at least 3".into()));
        }
        if self.dbscan_min_pts == 0 || self.ransac_iterations == 0 {
            return Err(ExtractionError::InvalidParams("dbscan_min_pts and ransac_iterations must be positive".into()));
        }
        if !(self.theta_deg > T::zero() && self.theta_deg < T::lit(90.0)) {
            return Err(ExtractionError::InvalidParams("theta_deg must lie in (0, 90)".into()));
        }
        if !(self.size_tolerance > T::zero() && self.size_tolerance < T::one()) {
            return Err(ExtractionError::InvalidParams("size_tolerance must lie in (0, 1)".into()));
        }
        if let Some([w, h]) = self.board_size {
            if !(w > T::zero() && h > T::zero()) {
                return Err(ExtractionError::InvalidParams("board_size must be positive".into()));
            }
        }
        if (self.reference_axis.norm() - T::one()).abs() > T::invariant_tol() {
            return Err(ExtractionError::InvalidParams("reference_axis must be a unit vector".into()));
        }
        Ok(())
    }
}

mod unit_vector_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<T: Real + Serialize, S: Serializer>(v: &UnitVector3<T>, s: S) -> Result<S::Ok, S::Error> {
        [v.x, v.y, v.z].serialize(s)
    }

    pub fn deserialize<'de, T: Real + Deserialize<'de>, D: Deserializer<'de>>(d: D) -> Result<UnitVector3<T>, D::Error> {
        let [x, y, z] = <[T; 3]>::deserialize(d)?;
        let v = Vector3::new(x, y, z);
        if !(v.norm() > T::zero()) {
            return Err(serde::de::Error::custom("reference axis must be non-zero"));
        }
        Ok(Unit::new_normalize(v))
    }
}

/// Per-candidate numbers reported alongside an extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub cluster_size: usize,
    pub alpha_deg: f64,
    pub distance: f64,
    pub density: usize,
    /// In-plane extent of the inliers along their principal axes, largest first.
    pub extent: [f64; 2],
    pub normal: [f64; 3],
    pub passed_angle_filter: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionDiagnostics {
    pub input_points: usize,
    pub dropped_points: usize,
    pub cluster_count: usize,
    pub failed_fits: usize,
    pub candidates: Vec<CandidateReport>,
    /// Index into `candidates` of the chosen plane.
    pub selected: usize,
    pub distance_prior: f64,
    pub low_confidence: bool,
}

#[derive(Debug, Clone)]
pub struct Extraction<T: Real> {
    /// Selected board points, in the LiDAR frame.
    pub board: PointCloud<T>,
    /// Indices of those points in the input cloud, ascending.
    pub indices: Vec<usize>,
    /// The selected plane; its inlier indices refer to the input cloud.
    pub plane: PlaneCandidate<T>,
    pub diagnostics: ExtractionDiagnostics,
}

/// Extent of `points` within the plane of `normal`, measured along the
/// principal axes of their spread, largest first.
pub fn plane_extent<T: Real>(normal: &UnitVector3<T>, points: impl Iterator<Item = Vector3<T>> + Clone) -> [T; 2] {
    let n = normal.into_inner();
    let helper = if n.x.abs() < T::lit(0.9) { Vector3::x() } else { Vector3::y() };
    let e1 = n.cross(&helper).normalize();
    let e2 = n.cross(&e1);
    let coords: Vec<nalgebra::Vector2<T>> = points.map(|p| nalgebra::Vector2::new(p.dot(&e1), p.dot(&e2))).collect();
    if coords.len() < 2 {
        return [T::zero(), T::zero()];
    }
    let mean = coords.iter().fold(nalgebra::Vector2::zeros(), |a, c| a + c) / T::from_count(coords.len());
    let cov = coords.iter().fold(nalgebra::Matrix2::zeros(), |a, c| {
        let d = c - mean;
        a + d * d.transpose()
    });
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut extents = [T::zero(); 2];
    for (k, ext) in extents.iter_mut().enumerate() {
        let axis = eig.eigenvectors.column(k);
        let (lo, hi) = coords.iter().fold((T::max_value().unwrap(), T::min_value().unwrap()), |(lo, hi), c| {
            let s = c.dot(&axis);
            (lo.min(s), hi.max(s))
        });
        *ext = hi - lo;
    }
    if extents[0] < extents[1] {
        extents.swap(0, 1);
    }
    extents
}

fn canonical_order<T: Real>(points: &[nalgebra::Vector3<T>], keep: &[usize]) -> Vec<usize> {
    let mut order = keep.to_vec();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (points[a], points[b]);
        pa.x.as_f64()
            .total_cmp(&pb.x.as_f64())
            .then(pa.y.as_f64().total_cmp(&pb.y.as_f64()))
            .then(pa.z.as_f64().total_cmp(&pb.z.as_f64()))
            .then(a.cmp(&b))
    });
    order
}

/// Runs the full board extraction on a LiDAR cloud given the camera's
/// board-distance prior `l`.
pub fn extract_board<T: Real>(
    cloud: &PointCloud<T>,
    l: T,
    params: &ExtractionParams<T>,
    seed: u64,
) -> Result<Extraction<T>, ExtractionError> {
    params.validate()?;
    if cloud.frame != Frame::Lidar {
        return Err(ExtractionError::at(Stage::Ingest, format!("cloud is in the {} frame, expected lidar", cloud.frame)));
    }
    if cloud.is_empty() {
        return Err(ExtractionError::at(Stage::Ingest, "empty cloud"));
    }
    if let Some(i) = cloud.points.iter().position(|p| !is_finite_point(p)) {
        return Err(ExtractionError::at(Stage::Ingest, format!("point {i} is not finite")));
    }
    // Points at the sensor origin have no usable orientation.
    let keep: Vec<usize> = (0..cloud.len()).filter(|&i| cloud.points[i].norm() > T::lit(1.0e-9)).collect();
    let order = canonical_order(&cloud.points, &keep);
    let sorted = PointCloud::new(order.iter().map(|&i| cloud.points[i]).collect(), Frame::Lidar);

    let normals = estimate_normals(&sorted, params.knn_k, params.dbscan_eps)
        .map_err(|e| ExtractionError::at(Stage::Normals, e.to_string()))?;
    let clusters = cluster_points(&sorted, &normals, params);
    if clusters.is_empty() {
        return Err(ExtractionError::at(Stage::Clustering, "no clusters found"));
    }

    let fits: Vec<Result<PlaneCandidate<T>, ExtractionError>> = clusters
        .par_iter()
        .enumerate()
        .map(|(ci, c)| fit_plane_ransac(c, &sorted, params, split_seed(split_seed(seed, stream::RANSAC), ci as u64)))
        .collect();
    let mut candidates = Vec::new();
    let mut cluster_sizes = Vec::new();
    let mut failed_fits = 0;
    for (fit, c) in fits.into_iter().zip(&clusters) {
        match fit {
            Ok(cand) => {
                candidates.push(cand);
                cluster_sizes.push(c.members.len());
            }
            Err(e) => {
                log::debug!("cluster of {} points skipped: {e}", c.members.len());
                failed_fits += 1;
            }
        }
    }
    if candidates.is_empty() {
        return Err(ExtractionError::at(Stage::PlaneFitting, format!("no plane fits among {} clusters", clusters.len())));
    }

    let passed: Vec<usize> = (0..candidates.len()).filter(|&i| candidates[i].alpha_deg <= params.theta_deg).collect();
    let filtered = filter_planes(&candidates, params);
    if filtered.is_empty() {
        return Err(ExtractionError::at(
            Stage::AngleFilter,
            format!("all {} planes tilt more than {:.1} deg", candidates.len(), params.theta_deg.as_f64()),
        ));
    }
    let selection = select_board_plane(&filtered, l, params)
        .map_err(|e| ExtractionError::at(Stage::DistanceSelection, e.to_string()))?;
    let chosen = &filtered[selection.index];
    if selection.low_confidence {
        return Err(ExtractionError::at(
            Stage::DistanceSelection,
            format!(
                "no plane within {:.3} m of the distance prior {:.3} m (closest at {:.3} m)",
                params.distance_tolerance.as_f64(),
                l.as_f64(),
                chosen.distance.as_f64()
            ),
        ));
    }
    let selected = passed[selection.index];
    let extents: Vec<[T; 2]> = candidates
        .iter()
        .map(|c| plane_extent(&c.normal, c.inliers.iter().map(|&i| sorted.points[i])))
        .collect();
    if let Some(size) = params.board_size {
        let mut want = size;
        if want[0] < want[1] {
            want.swap(0, 1);
        }
        let got = extents[selected];
        let tol = params.size_tolerance;
        let fits = (0..2).all(|k| got[k] >= want[k] * (T::one() - tol) && got[k] <= want[k] * (T::one() + tol));
        if !fits {
            return Err(ExtractionError::at(
                Stage::SizeCheck,
                format!(
                    "selected plane spans {:.3} × {:.3} m, board is {:.3} × {:.3} m",
                    got[0].as_f64(),
                    got[1].as_f64(),
                    want[0].as_f64(),
                    want[1].as_f64()
                ),
            ));
        }
    }

    let reports = candidates
        .iter()
        .zip(&cluster_sizes)
        .zip(&extents)
        .enumerate()
        .map(|(i, ((c, &size), e))| CandidateReport {
            cluster_size: size,
            alpha_deg: c.alpha_deg.as_f64(),
            distance: c.distance.as_f64(),
            density: c.density,
            extent: [e[0].as_f64(), e[1].as_f64()],
            normal: [c.normal.x.as_f64(), c.normal.y.as_f64(), c.normal.z.as_f64()],
            passed_angle_filter: passed.contains(&i),
        })
        .collect();

    let mut indices: Vec<usize> = chosen.inliers.iter().map(|&i| order[i]).collect();
    indices.sort_unstable();
    let board = PointCloud::new(indices.iter().map(|&i| cloud.points[i]).collect(), Frame::Lidar);
    let plane = PlaneCandidate { inliers: indices.clone(), ..chosen.clone() };
    Ok(Extraction {
        board,
        indices,
        plane,
        diagnostics: ExtractionDiagnostics {
            input_points: cloud.len(),
            dropped_points: cloud.len() - keep.len(),
            cluster_count: clusters.len(),
            failed_fits,
            candidates: reports,
            selected,
            distance_prior: l.as_f64(),
            low_confidence: selection.low_confidence,
        },
    })
}

/// [`extract_board`] returning only the board points.
pub fn extract_board_points<T: Real>(
    cloud: &PointCloud<T>,
    l: T,
    params: &ExtractionParams<T>,
    seed: u64,
) -> Result<PointCloud<T>, ExtractionError> {
    extract_board(cloud, l, params, seed).map(|e| e.board)
}
