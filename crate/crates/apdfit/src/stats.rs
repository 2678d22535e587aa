//! Per-grain measurements, the grain adjacency graph, and grid-graph
//! boundary distances.
//!
//! Two distinct voxel adjacencies are in play: boundary distances run on the
//! 6-connected grid graph, while grain neighborhood uses the 26-neighborhood
//! (face, edge, or corner contact).

use serde::Serialize;
use thiserror::Error;

use crate::linalg::{self, Mat3, Vec3};
use crate::volume::GrainScan;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("delta must be at least 1, got {0}")]
    DeltaTooSmall(u32),
}

/// Sentinel distance for volumes without any grain boundary.
pub const UNBOUNDED_DISTANCE: u32 = u32::MAX;

/// Per-grain voxel count, centroid, covariance and (regularized) precision.
#[derive(Debug, Clone)]
pub struct GrainStats {
    pub kappa: Vec<u64>,
    pub centroid: Vec<Vec3>,
    pub covariance: Vec<Mat3>,
    /// `covariance^{-1}` after ridge regularization; always SPD.
    pub precision: Vec<Mat3>,
}

impl GrainStats {
    pub fn k(&self) -> usize {
        self.kappa.len()
    }

    pub fn total_weight(&self) -> u64 {
        self.kappa.iter().sum()
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct GrainRow {
            label: u32,
            kappa: u64,
            centroid: [f64; 3],
            covariance: [f64; 9],
        }
        #[derive(Serialize)]
        struct Doc {
            k: usize,
            grains: Vec<GrainRow>,
        }
        let grains = (0..self.k())
            .map(|i| GrainRow {
                label: i as u32 + 1,
                kappa: self.kappa[i],
                centroid: [self.centroid[i].x, self.centroid[i].y, self.centroid[i].z],
                covariance: linalg::mat3_to_row_major(&self.covariance[i]),
            })
            .collect();
        serde_json::to_string_pretty(&Doc { k: self.k(), grains }).expect("stats serialize")
    }
}

/// Centroids and second moments of every grain.
///
/// The covariance is the centered second moment over the grain's voxel
/// centers (divided by the count, not count - 1). Precision matrices are
/// inverses after a relative ridge: `1e-8 * tr/3` for grains with at least 4
/// voxels, an absolute ridge of 1 for smaller (rank-deficient) grains.
pub fn compute_stats(scan: &GrainScan) -> GrainStats {
    let k = scan.k() as usize;
    let (nx, ny, nz) = scan.dims();

    let mut kappa = vec![0u64; k];
    let mut pos_sum = vec![Vec3::zeros(); k];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let g = scan.label_at(x, y, z) as usize - 1;
                kappa[g] += 1;
                pos_sum[g] += scan.voxel_center(x, y, z);
            }
        }
    }
    let centroid: Vec<Vec3> = (0..k).map(|i| pos_sum[i] / kappa[i] as f64).collect();

    // Second pass: centered outer products.
    let mut moment = vec![Mat3::zeros(); k];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let g = scan.label_at(x, y, z) as usize - 1;
                let d = scan.voxel_center(x, y, z) - centroid[g];
                moment[g] += d * d.transpose();
            }
        }
    }
    let covariance: Vec<Mat3> = (0..k)
        .map(|i| linalg::symmetrize(&(moment[i] / kappa[i] as f64)))
        .collect();

    let precision = covariance
        .iter()
        .zip(&kappa)
        .map(|(cov, &count)| {
            let eps_ridge = if count < 4 { 1.0 } else { 1e-8 };
            let trace = cov.trace();
            let ridge = eps_ridge * if trace > 0.0 { trace / 3.0 } else { 1.0 };
            linalg::spd_inverse_ridged(cov, ridge)
        })
        .collect();

    GrainStats {
        kappa,
        centroid,
        covariance,
        precision,
    }
}

/// Grain adjacency under the 26-neighborhood, plus a per-grain flag marking
/// grains that do not touch the outer face of the volume.
#[derive(Debug, Clone)]
pub struct NeighborGraph {
    adjacency: Vec<std::collections::BTreeSet<u32>>,
    interior: Vec<bool>,
}

impl NeighborGraph {
    pub fn k(&self) -> usize {
        self.adjacency.len()
    }

    /// Neighbor labels of grain `label` (1-based), sorted.
    pub fn neighbors(&self, label: u32) -> &std::collections::BTreeSet<u32> {
        &self.adjacency[label as usize - 1]
    }

    pub fn is_interior(&self, label: u32) -> bool {
        self.interior[label as usize - 1]
    }

    pub fn interior_count(&self) -> usize {
        self.interior.iter().filter(|&&b| b).count()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(|s| s.len()).sum::<usize>() / 2
    }

    /// Whether the grain graph is connected (ignoring isolated label set
    /// holes; all labels 1..=k are nodes).
    pub fn is_connected(&self) -> bool {
        let k = self.k();
        if k <= 1 {
            return true;
        }
        let mut seen = vec![false; k];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut found = 1;
        while let Some(i) = stack.pop() {
            for &nb in &self.adjacency[i] {
                let j = nb as usize - 1;
                if !seen[j] {
                    seen[j] = true;
                    found += 1;
                    stack.push(j);
                }
            }
        }
        found == k
    }
}

/// Build the 26-neighborhood grain graph of a labeling. Label 0 voxels (in
/// predictions) contribute no edges.
pub fn compute_neighbors(scan: &GrainScan) -> NeighborGraph {
    let k = scan.k() as usize;
    let (nx, ny, nz) = scan.dims();
    let mut adjacency = vec![std::collections::BTreeSet::new(); k];
    let mut interior = vec![true; k];

    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let a = scan.label_at(x, y, z);
                if a == 0 {
                    continue;
                }
                if x == 0 || x == nx - 1 || y == 0 || y == ny - 1 || z == 0 || z == nz - 1 {
                    interior[a as usize - 1] = false;
                }
                // Scan the 13 lexicographically-forward neighbors; each
                // unordered voxel pair is visited once.
                for dz in 0..=1isize {
                    for dy in -1..=1isize {
                        for dx in -1..=1isize {
                            if (dz, dy, dx) <= (0, 0, 0) {
                                continue;
                            }
                            let (qx, qy, qz) =
                                (x as isize + dx, y as isize + dy, z as isize + dz);
                            if qx < 0
                                || qy < 0
                                || qz < 0
                                || qx >= nx as isize
                                || qy >= ny as isize
                                || qz >= nz as isize
                            {
                                continue;
                            }
                            let b = scan.label_at(qx as usize, qy as usize, qz as usize);
                            if b != 0 && b != a {
                                adjacency[a as usize - 1].insert(b);
                                adjacency[b as usize - 1].insert(a);
                            }
                        }
                    }
                }
            }
        }
    }
    NeighborGraph {
        adjacency,
        interior,
    }
}

/// Per-voxel grid-graph distance to the nearest differently-labeled voxel.
///
/// A voxel with a differently-labeled 6-neighbor has distance 1.
#[derive(Debug, Clone)]
pub struct BoundaryDistanceField {
    dims: (usize, usize, usize),
    distance: Vec<u32>,
}

impl BoundaryDistanceField {
    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn distances(&self) -> &[u32] {
        &self.distance
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> u32 {
        self.distance[x + self.dims.0 * (y + self.dims.1 * z)]
    }

    #[inline]
    pub fn at_index(&self, index: usize) -> u32 {
        self.distance[index]
    }
}

/// Multi-source BFS over the 6-connected grid graph. Sources are all voxels
/// adjacent to a different label (distance 1); a single-grain volume gets
/// [`UNBOUNDED_DISTANCE`] everywhere.
pub fn compute_boundary_distance(scan: &GrainScan) -> BoundaryDistanceField {
    let dims = scan.dims();
    let (nx, ny, nz) = dims;
    let n = scan.len();
    let labels = scan.labels();
    let mut distance = vec![UNBOUNDED_DISTANCE; n];
    let mut queue = std::collections::VecDeque::new();

    let stride_y = nx;
    let stride_z = nx * ny;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let idx = x + stride_y * y + stride_z * z;
                let a = labels[idx];
                let boundary = (x + 1 < nx && labels[idx + 1] != a)
                    || (x > 0 && labels[idx - 1] != a)
                    || (y + 1 < ny && labels[idx + stride_y] != a)
                    || (y > 0 && labels[idx - stride_y] != a)
                    || (z + 1 < nz && labels[idx + stride_z] != a)
                    || (z > 0 && labels[idx - stride_z] != a);
                if boundary {
                    distance[idx] = 1;
                    queue.push_back(idx);
                }
            }
        }
    }

    while let Some(idx) = queue.pop_front() {
        let d = distance[idx];
        let x = idx % nx;
        let y = (idx / nx) % ny;
        let z = idx / stride_z;
        let push = |nidx: usize, distance: &mut Vec<u32>,
                        queue: &mut std::collections::VecDeque<usize>| {
            if distance[nidx] == UNBOUNDED_DISTANCE {
                distance[nidx] = d + 1;
                queue.push_back(nidx);
            }
        };
        if x + 1 < nx {
            push(idx + 1, &mut distance, &mut queue);
        }
        if x > 0 {
            push(idx - 1, &mut distance, &mut queue);
        }
        if y + 1 < ny {
            push(idx + stride_y, &mut distance, &mut queue);
        }
        if y > 0 {
            push(idx - stride_y, &mut distance, &mut queue);
        }
        if z + 1 < nz {
            push(idx + stride_z, &mut distance, &mut queue);
        }
        if z > 0 {
            push(idx - stride_z, &mut distance, &mut queue);
        }
    }

    BoundaryDistanceField { dims, distance }
}

/// Boolean mask of voxels at distance `delta` or more from every
/// differently-labeled voxel (the union of all grain delta-interiors).
pub fn delta_interior_mask(
    field: &BoundaryDistanceField,
    delta: u32,
) -> Result<Vec<bool>, StatsError> {
    if delta < 1 {
        return Err(StatsError::DeltaTooSmall(delta));
    }
    Ok(field.distance.iter().map(|&d| d >= delta).collect())
}
