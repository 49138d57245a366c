use nalgebra::{Matrix3, Unit, Vector3};
use rayon::prelude::*;

use super::spatial::GridIndex;
use super::ExtractionError;
use crate::geometry::{PointCloud, UnitVector3};
use crate::scalar::Real;

/// Per-point PCA normals plus the local density used as a weight.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalEstimate<T: Real> {
    pub normals: Vec<UnitVector3<T>>,
    /// Number of other points within the density radius.
    pub neighbor_counts: Vec<usize>,
}

/// Eigenvector of the smallest eigenvalue of the scatter matrix of `pts`.
pub(crate) fn smallest_principal_axis<T: Real>(pts: impl Iterator<Item = Vector3<T>> + Clone) -> Option<(Vector3<T>, Vector3<T>)> {
    let (sum, n) = pts.clone().fold((Vector3::zeros(), 0usize), |(s, n), p| (s + p, n + 1));
    if n < 3 {
        return None;
    }
    let centroid = sum / T::from_count(n);
    let scatter = pts.fold(Matrix3::zeros(), |acc, p| {
        let d = p - centroid;
        acc + d * d.transpose()
    });
    let eig = scatter.symmetric_eigen();
    let imin = eig.eigenvalues.imin();
    let axis: Vector3<T> = eig.eigenvectors.column(imin).into_owned();
    let norm = axis.norm();
    (norm > T::zero()).then(|| (axis / norm, centroid))
}

/// PCA normals over each point and its `k` nearest neighbors, flipped to
/// face the sensor origin. `density_radius` sets the neighbor count used as
/// the point's weight.
pub fn estimate_normals<T: Real>(
    cloud: &PointCloud<T>,
    k: usize,
    density_radius: T,
) -> Result<NormalEstimate<T>, ExtractionError> {
    let n = cloud.len();
    if k < 3 || n < k + 1 {
        return Err(ExtractionError::InsufficientPoints { needed: (k + 1).max(4), got: n });
    }
    let pts = &cloud.points;
    let radius = density_radius.as_f64();
    let knn_grid = GridIndex::build(pts, (radius / 2.0).max(1e-6));
    let radius_grid = GridIndex::build(pts, radius.max(1e-6));

    let results: Vec<(UnitVector3<T>, usize)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let nbrs = knn_grid.nearest(pts, i, k);
            let local = std::iter::once(i).chain(nbrs.iter().copied()).map(|j| pts[j]);
            let mut normal = smallest_principal_axis(local.clone()).map(|(a, _)| a).unwrap_or_else(Vector3::z);
            if normal.dot(&(-pts[i])) < T::zero() {
                normal = -normal;
            }
            let count = radius_grid.count_within(pts, i, density_radius) - 1;
            (Unit::new_normalize(normal), count)
        })
        .collect();
    let (normals, neighbor_counts) = results.into_iter().unzip();
    Ok(NormalEstimate { normals, neighbor_counts })
}
