use nalgebra::{Unit, Vector3};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::cluster::Cluster;
use super::normals::smallest_principal_axis;
use super::{ExtractionError, ExtractionParams};
use crate::geometry::{Point3, PointCloud, UnitVector3};
use crate::scalar::Real;

/// Minimum fraction of a cluster the best plane must explain.
pub const MIN_INLIER_RATIO: f64 = 0.2;

/// A fitted plane `normal·p = offset` with its supporting points.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneCandidate<T: Real> {
    /// Plane normal, oriented toward the sensor origin.
    pub normal: UnitVector3<T>,
    pub offset: T,
    /// Cloud indices of the inliers, ascending.
    pub inliers: Vec<usize>,
    /// Density-weighted normal of the source cluster.
    pub representative_normal: UnitVector3<T>,
    /// Tilt of the representative normal against the reference axis, degrees.
    pub alpha_deg: T,
    /// Norm of the inlier centroid, meters.
    pub distance: T,
    /// Inlier count.
    pub density: usize,
}

/// Angle in degrees between a normal and the reference axis, ignoring the
/// normal's sign.
pub fn tilt_angle<T: Real>(n: &UnitVector3<T>, reference_axis: &UnitVector3<T>) -> T {
    n.dot(reference_axis).abs().min(T::one()).acos().to_deg()
}

/// `(1/n)·‖Σ pᵢ‖`: the norm of the centroid of `points`.
pub fn centroid_distance<T: Real>(points: impl Iterator<Item = Point3<T>>) -> T {
    let (sum, n) = points.fold((Vector3::zeros(), 0usize), |(s, n), p| (s + p, n + 1));
    if n == 0 {
        return T::zero();
    }
    sum.norm() / T::from_count(n)
}

/// Distance from the sensor origin to the centroid of the candidate's inliers.
pub fn plane_distance<T: Real>(candidate: &PlaneCandidate<T>, cloud: &PointCloud<T>) -> T {
    centroid_distance(candidate.inliers.iter().map(|&i| cloud.points[i]))
}

fn inlier_set_hash(indices: &[usize]) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &i in indices {
        for b in (i as u64).to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

fn inliers_of<T: Real>(cloud: &PointCloud<T>, members: &[usize], normal: &Vector3<T>, offset: T, threshold: T) -> Vec<usize> {
    members
        .iter()
        .copied()
        .filter(|&i| (normal.dot(&cloud.points[i]) - offset).abs() <= threshold)
        .collect()
}

/// RANSAC plane fit over one cluster followed by a least-squares refit on
/// the consensus set. Cluster members off the final plane are discarded.
pub fn fit_plane_ransac<T: Real>(
    cluster: &Cluster<T>,
    cloud: &PointCloud<T>,
    params: &ExtractionParams<T>,
    seed: u64,
) -> Result<PlaneCandidate<T>, ExtractionError> {
    let members = &cluster.members;
    let m = members.len();
    if m < 3 {
        return Err(ExtractionError::NoPlane { inlier_ratio: 0.0 });
    }
    let threshold = params.ransac_threshold;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // (count, hash, normal, offset); ties on count go to the lower hash.
    let mut best: Option<(usize, u64, Vector3<T>, T)> = None;
    let mut rounds = 0;
    let mut attempts = 0;
    let max_attempts = params.ransac_iterations.saturating_mul(10).max(10);
    while rounds < params.ransac_iterations && attempts < max_attempts {
        attempts += 1;
        let sample = index::sample(&mut rng, m, 3);
        let p0 = cloud.points[members[sample.index(0)]];
        let e1 = cloud.points[members[sample.index(1)]] - p0;
        let e2 = cloud.points[members[sample.index(2)]] - p0;
        let cross = e1.cross(&e2);
        let scale = e1.norm() * e2.norm();
        if !(cross.norm() > T::lit(1.0e-9) * scale) || scale <= T::zero() {
            continue;
        }
        rounds += 1;
        let normal = cross.normalize();
        let offset = normal.dot(&p0);
        let count = members
            .iter()
            .filter(|&&i| (normal.dot(&cloud.points[i]) - offset).abs() <= threshold)
            .count();
        let better = match &best {
            None => true,
            Some((c, _, _, _)) if count > *c => true,
            Some((c, h, _, _)) if count == *c => {
                let hash = inlier_set_hash(&inliers_of(cloud, members, &normal, offset, threshold));
                hash < *h
            }
            _ => false,
        };
        if better {
            let hash = inlier_set_hash(&inliers_of(cloud, members, &normal, offset, threshold));
            best = Some((count, hash, normal, offset));
        }
    }
    let Some((count, _, mut normal, mut offset)) = best else {
        return Err(ExtractionError::NoPlane { inlier_ratio: 0.0 });
    };
    let ratio = count as f64 / m as f64;
    if ratio < MIN_INLIER_RATIO {
        return Err(ExtractionError::NoPlane { inlier_ratio: ratio });
    }

    let mut inliers = inliers_of(cloud, members, &normal, offset, threshold);
    for _ in 0..3 {
        let Some((n, c)) = smallest_principal_axis(inliers.iter().map(|&i| cloud.points[i])) else {
            break;
        };
        let refit = inliers_of(cloud, members, &n, n.dot(&c), threshold);
        if refit.len() < 3 {
            break;
        }
        let unchanged = refit == inliers;
        normal = n;
        offset = n.dot(&c);
        inliers = refit;
        if unchanged {
            break;
        }
    }
    // Every retained point must satisfy the final plane.
    inliers = inliers_of(cloud, members, &normal, offset, threshold);

    if offset > T::zero() {
        normal = -normal;
        offset = -offset;
    }
    let normal = Unit::new_normalize(normal);
    let distance = centroid_distance(inliers.iter().map(|&i| cloud.points[i]));
    Ok(PlaneCandidate {
        normal,
        offset,
        density: inliers.len(),
        inliers,
        representative_normal: cluster.representative_normal,
        alpha_deg: tilt_angle(&cluster.representative_normal, &params.reference_axis),
        distance,
    })
}
