//! Uniform voxel hash for radius and k-nearest-neighbor queries.

use std::collections::HashMap;
use std::hash::{BuildHasherDefault, Hasher};

use nalgebra::Vector3;

use crate::scalar::Real;

type Key = (i64, i64, i64);

/// Multiply-rotate hash for integer cell keys; the default SipHash dominates
/// query time otherwise.
#[derive(Default)]
struct CellHasher(u64);

impl Hasher for CellHasher {
    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.write_u64(b as u64);
        }
    }

    fn write_i64(&mut self, v: i64) {
        self.write_u64(v as u64);
    }

    fn write_u64(&mut self, v: u64) {
        self.0 = (self.0.rotate_left(5) ^ v).wrapping_mul(0x517c_c1b7_2722_0a95);
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

type CellMap = HashMap<Key, Vec<u32>, BuildHasherDefault<CellHasher>>;

pub struct GridIndex {
    cell: f64,
    cells: CellMap,
    keys: Vec<Key>,
}

impl GridIndex {
    pub fn build<T: Real>(points: &[Vector3<T>], cell: f64) -> Self {
        assert!(cell > 0.0, "grid cell size must be positive");
        let mut cells = CellMap::default();
        let keys: Vec<Key> = points.iter().map(|p| key_of(p, cell)).collect();
        for (i, k) in keys.iter().enumerate() {
            cells.entry(*k).or_default().push(i as u32);
        }
        Self { cell, cells, keys }
    }

    fn gather(&self, center: Key, reach: i64, out: &mut Vec<usize>) {
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    if let Some(bucket) = self.cells.get(&(center.0 + dx, center.1 + dy, center.2 + dz)) {
                        out.extend(bucket.iter().map(|&i| i as usize));
                    }
                }
            }
        }
    }

    /// Indices of all points within `radius` of point `query` (itself
    /// included), in ascending index order.
    pub fn within<T: Real>(&self, points: &[Vector3<T>], query: usize, radius: T) -> Vec<usize> {
        let reach = (radius.as_f64() / self.cell).ceil().max(1.0) as i64;
        let mut candidates = Vec::new();
        self.gather(self.keys[query], reach, &mut candidates);
        let q = points[query];
        let r2 = radius * radius;
        let mut out: Vec<usize> = candidates.into_iter().filter(|&j| (points[j] - q).norm_squared() <= r2).collect();
        out.sort_unstable();
        out
    }

    /// Number of points within `radius` of point `query`, itself included.
    pub fn count_within<T: Real>(&self, points: &[Vector3<T>], query: usize, radius: T) -> usize {
        let reach = (radius.as_f64() / self.cell).ceil().max(1.0) as i64;
        let q = points[query];
        let r2 = radius * radius;
        let center = self.keys[query];
        let mut count = 0;
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    if let Some(bucket) = self.cells.get(&(center.0 + dx, center.1 + dy, center.2 + dz)) {
                        count += bucket.iter().filter(|&&j| (points[j as usize] - q).norm_squared() <= r2).count();
                    }
                }
            }
        }
        count
    }

    /// The `k` nearest neighbors of point `query`, excluding itself. Ties are
    /// broken by index.
    pub fn nearest<T: Real>(&self, points: &[Vector3<T>], query: usize, k: usize) -> Vec<usize> {
        let q = points[query];
        let by_distance = |cands: Vec<usize>| {
            let mut scored: Vec<(T, usize)> = cands
                .into_iter()
                .filter(|&j| j != query)
                .map(|j| ((points[j] - q).norm_squared(), j))
                .collect();
            let cmp = |a: &(T, usize), b: &(T, usize)| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1));
            if scored.len() > k {
                scored.select_nth_unstable_by(k - 1, cmp);
                scored.truncate(k);
            }
            scored.sort_unstable_by(cmp);
            scored
        };
        let mut reach = 1i64;
        loop {
            let mut cands = Vec::new();
            self.gather(self.keys[query], reach, &mut cands);
            if cands.len() > k {
                let scored = by_distance(cands);
                // Everything within reach·cell of the query is inside the cube.
                let covered = T::lit(reach as f64 * self.cell);
                if scored[k - 1].0 <= covered * covered {
                    return scored.into_iter().take(k).map(|(_, j)| j).collect();
                }
            }
            reach += 1;
            if reach > 16 {
                let scored = by_distance((0..points.len()).collect());
                return scored.into_iter().take(k).map(|(_, j)| j).collect();
            }
        }
    }
}

fn key_of<T: Real>(p: &Vector3<T>, cell: f64) -> Key {
    (
        (p.x.as_f64() / cell).floor() as i64,
        (p.y.as_f64() / cell).floor() as i64,
        (p.z.as_f64() / cell).floor() as i64,
    )
}
