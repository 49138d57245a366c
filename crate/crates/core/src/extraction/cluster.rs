use std::collections::VecDeque;

use nalgebra::{Unit, Vector3};

use super::normals::NormalEstimate;
use super::spatial::GridIndex;
use super::{ExtractionError, ExtractionParams};
use crate::geometry::{PointCloud, UnitVector3};
use crate::scalar::Real;

/// A group of points with similar orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster<T: Real> {
    /// Indices into the cloud, ascending.
    pub members: Vec<usize>,
    pub representative_normal: UnitVector3<T>,
}

#[derive(Clone, Copy, PartialEq)]
enum Label {
    Unvisited,
    Noise,
    Member(usize),
}

/// Density-based clustering where two points are neighbors when they are
/// within `dbscan_eps` of each other and their normals differ by at most
/// `normal_angle_merge_deg`. Noise points belong to no cluster.
pub fn cluster_points<T: Real>(
    cloud: &PointCloud<T>,
    normals: &NormalEstimate<T>,
    params: &ExtractionParams<T>,
) -> Vec<Cluster<T>> {
    let n = cloud.len();
    if n == 0 || normals.normals.len() != n {
        return Vec::new();
    }
    let pts = &cloud.points;
    let grid = GridIndex::build(pts, params.dbscan_eps.as_f64().max(1e-6));
    let cos_merge = params.normal_angle_merge_deg.to_rad().cos();
    let neighbors = |i: usize| -> Vec<usize> {
        let ni = normals.normals[i];
        grid.within(pts, i, params.dbscan_eps)
            .into_iter()
            .filter(|&j| j != i && ni.dot(&normals.normals[j]) >= cos_merge)
            .collect()
    };

    let mut labels = vec![Label::Unvisited; n];
    let mut next_id = 0;
    let mut queue = VecDeque::new();
    for i in 0..n {
        if labels[i] != Label::Unvisited {
            continue;
        }
        let seeds = neighbors(i);
        if seeds.len() < params.dbscan_min_pts {
            labels[i] = Label::Noise;
            continue;
        }
        let id = next_id;
        next_id += 1;
        labels[i] = Label::Member(id);
        queue.extend(seeds);
        while let Some(j) = queue.pop_front() {
            match labels[j] {
                Label::Member(_) => continue,
                Label::Noise => {
                    // Border point: joins the cluster but does not expand it.
                    labels[j] = Label::Member(id);
                    continue;
                }
                Label::Unvisited => {}
            }
            labels[j] = Label::Member(id);
            let nj = neighbors(j);
            if nj.len() >= params.dbscan_min_pts {
                queue.extend(nj.into_iter().filter(|&m| !matches!(labels[m], Label::Member(_))));
            }
        }
    }

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); next_id];
    for (i, label) in labels.iter().enumerate() {
        if let Label::Member(id) = label {
            members[*id].push(i);
        }
    }
    members
        .into_iter()
        .filter_map(|members| {
            let weights: Vec<T> = members.iter().map(|&i| T::from_count(normals.neighbor_counts[i])).collect();
            let dirs: Vec<UnitVector3<T>> = members.iter().map(|&i| normals.normals[i]).collect();
            match weighted_mean_direction(&dirs, &weights) {
                Ok(representative_normal) => Some(Cluster { members, representative_normal }),
                Err(_) => {
                    log::warn!("dropping cluster of {} points with cancelling normals", members.len());
                    None
                }
            }
        })
        .collect()
}

/// Density-weighted mean direction `Σ wᵢnᵢ / ‖Σ wᵢnᵢ‖`.
pub fn weighted_mean_direction<T: Real>(
    normals: &[UnitVector3<T>],
    weights: &[T],
) -> Result<UnitVector3<T>, ExtractionError> {
    let sum = normals
        .iter()
        .zip(weights)
        .fold(Vector3::zeros(), |acc: Vector3<T>, (n, &w)| acc + n.into_inner() * w);
    let norm = sum.norm();
    if !(norm >= T::lit(1.0e-12)) {
        return Err(ExtractionError::DegenerateNormal);
    }
    Ok(Unit::new_unchecked(sum / norm))
}

/// Representative normal of a cluster, weighting each member by its
/// neighbor count.
pub fn representative_normal<T: Real>(
    cluster: &Cluster<T>,
    normals: &NormalEstimate<T>,
) -> Result<UnitVector3<T>, ExtractionError> {
    if cluster.members.is_empty() {
        return Err(ExtractionError::DegenerateNormal);
    }
    let dirs: Vec<_> = cluster.members.iter().map(|&i| normals.normals[i]).collect();
    let weights: Vec<T> = cluster.members.iter().map(|&i| T::from_count(normals.neighbor_counts[i])).collect();
    weighted_mean_direction(&dirs, &weights)
}
