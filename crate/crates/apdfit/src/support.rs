//! Image supports: weighted point sets standing in for the full voxel set.
//!
//! The assignment LP only needs *some* weighted point set whose cluster
//! weights can match the grain sizes. These constructions shrink the voxel
//! set by orders of magnitude while conserving total weight exactly:
//!
//! - [`full_support`]: every voxel center with unit weight;
//! - [`pencil_coreset`]: project points onto rays through the sites and
//!   merge runs of points along each ray into batches;
//! - [`resolution_coreset`]: coarsen the voxel grid, one weighted point per
//!   coarse cell;
//! - [`interior_removal`]: drop points deep inside a single grain and mount
//!   their weight on one representative per grain.
//!
//! Every point carries provenance: its attributed (majority) grain, whether
//! the aggregate is pure, and the minimum grid-graph boundary distance over
//! the aggregated voxels. Downstream consumers decide strictness and
//! removability from these summaries.

use serde::Serialize;
use thiserror::Error;

use crate::linalg::{self, Mat3, Vec3};
use crate::stats::{BoundaryDistanceField, GrainStats};
use crate::volume::GrainScan;

#[derive(Debug, Error)]
pub enum SupportError {
    #[error("pencil coresets need at least 6 rays per site, got {0}")]
    TooFewRays(usize),
    #[error("batch error bound must be positive, got {0}")]
    NonPositiveBatchError(f64),
    #[error("resolution component must be in 1..=dims, got {got:?} for dims {dims:?}")]
    BadResolution {
        got: (usize, usize, usize),
        dims: (usize, usize, usize),
    },
    #[error("interior removal needs delta >= 2 (delta = 1 would remove every voxel), got {0}")]
    DeltaTooSmall(u32),
    #[error("epsilon must lie in (0, 0.5], got {0}")]
    EpsOutOfRange(f64),
}

/// What a support point stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PointKind {
    Voxel,
    BatchCentroid,
    CoarseCell,
    InteriorRep,
}

/// A weighted point set with per-point provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSupport {
    positions: Vec<Vec3>,
    weights: Vec<f64>,
    grains: Vec<u32>,
    pure: Vec<bool>,
    min_boundary_dist: Vec<u32>,
    kinds: Vec<PointKind>,
}

struct SupportPoint {
    position: Vec3,
    weight: f64,
    grain: u32,
    pure: bool,
    min_boundary_dist: u32,
    kind: PointKind,
}

impl ImageSupport {
    fn from_points(mut points: Vec<SupportPoint>) -> Self {
        // Canonical order: by grain, then lexicographic position.
        points.sort_by(|a, b| {
            a.grain
                .cmp(&b.grain)
                .then(a.position.x.total_cmp(&b.position.x))
                .then(a.position.y.total_cmp(&b.position.y))
                .then(a.position.z.total_cmp(&b.position.z))
        });
        let mut out = Self {
            positions: Vec::with_capacity(points.len()),
            weights: Vec::with_capacity(points.len()),
            grains: Vec::with_capacity(points.len()),
            pure: Vec::with_capacity(points.len()),
            min_boundary_dist: Vec::with_capacity(points.len()),
            kinds: Vec::with_capacity(points.len()),
        };
        for p in points {
            debug_assert!(p.weight > 0.0 && p.position.iter().all(|v| v.is_finite()));
            out.positions.push(p.position);
            out.weights.push(p.weight);
            out.grains.push(p.grain);
            out.pure.push(p.pure);
            out.min_boundary_dist.push(p.min_boundary_dist);
            out.kinds.push(p.kind);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn position(&self, j: usize) -> &Vec3 {
        &self.positions[j]
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn weight(&self, j: usize) -> f64 {
        self.weights[j]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Attributed (weighted-majority) grain of point `j`, 1-based.
    pub fn grain(&self, j: usize) -> u32 {
        self.grains[j]
    }

    /// Whether every aggregated voxel of point `j` has the same label.
    pub fn is_pure(&self, j: usize) -> bool {
        self.pure[j]
    }

    /// Minimum boundary distance over the voxels aggregated into point `j`.
    pub fn min_boundary_dist(&self, j: usize) -> u32 {
        self.min_boundary_dist[j]
    }

    pub fn kind(&self, j: usize) -> PointKind {
        self.kinds[j]
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Row {
            x: [f64; 3],
            w: f64,
            grain: u32,
            pure: bool,
            min_boundary_dist: u32,
            kind: PointKind,
        }
        let rows: Vec<Row> = (0..self.len())
            .map(|j| Row {
                x: [self.positions[j].x, self.positions[j].y, self.positions[j].z],
                w: self.weights[j],
                grain: self.grains[j],
                pure: self.pure[j],
                min_boundary_dist: self.min_boundary_dist[j],
                kind: self.kinds[j],
            })
            .collect();
        serde_json::to_string_pretty(&rows).expect("support serializes")
    }
}

/// Pencil coreset parameters.
#[derive(Debug, Clone, Copy)]
pub struct PencilParams {
    /// Rays per site; at least 6.
    pub rays_per_site: usize,
    /// Upper bound on the per-batch error `sum w (t - mean)^2` in the site
    /// metric.
    pub batch_error: f64,
    /// Distribute rays with respect to the per-site ellipsoids instead of
    /// Euclidean spheres.
    pub ellipsoidal: bool,
}

impl Default for PencilParams {
    fn default() -> Self {
        Self {
            rays_per_site: 64,
            batch_error: 1.0,
            ellipsoidal: true,
        }
    }
}

/// Resolution coreset parameters: the coarse grid size per axis.
#[derive(Debug, Clone, Copy)]
pub struct ResolutionParams {
    pub tau: (usize, usize, usize),
}

/// Interior removal parameter: the uniform grid-graph depth.
#[derive(Debug, Clone, Copy)]
pub struct InteriorParams {
    pub delta: u32,
}

/// How to build the base support before optional interior removal.
#[derive(Debug, Clone, Copy)]
pub enum SupportStrategy {
    None,
    Pencil(PencilParams),
    Resolution(ResolutionParams),
}

/// Every voxel center with unit weight.
pub fn full_support(scan: &GrainScan, field: &BoundaryDistanceField) -> ImageSupport {
    let (nx, ny, nz) = scan.dims();
    let mut points = Vec::with_capacity(scan.len());
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                points.push(SupportPoint {
                    position: scan.voxel_center(x, y, z),
                    weight: 1.0,
                    grain: scan.label_at(x, y, z),
                    pure: true,
                    min_boundary_dist: field.at(x, y, z),
                    kind: PointKind::Voxel,
                });
            }
        }
    }
    ImageSupport::from_points(points)
}

/// Quasi-uniform unit directions via the spherical Fibonacci lattice, with a
/// deterministic per-site azimuthal offset.
pub fn fibonacci_directions(count: usize, site_index: usize) -> Vec<Vec3> {
    let golden = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let offset = site_index as f64 * golden;
    (0..count)
        .map(|t| {
            let z = 1.0 - (2.0 * t as f64 + 1.0) / count as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = 2.0 * std::f64::consts::PI * ((t as f64 / golden + offset) % 1.0);
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

struct Pencil {
    /// Ray directions, unit Euclidean length.
    dirs: Vec<Vec3>,
    /// Gram values `<u, u>_A` per ray.
    dir_norm_sq: Vec<f64>,
}

/// Greedy grouping of weighted 1-d points into batches with bounded error.
/// Returns `(mean_t, weight, member_range)` per batch; `points` must be
/// sorted by `t` and `gram` is the squared metric norm of the ray
/// direction.
pub fn batch_along_ray(
    points: &[(f64, f64)], // (t, weight)
    gram: f64,
    batch_error: f64,
) -> Vec<(f64, f64, std::ops::Range<usize>)> {
    let mut out = Vec::new();
    let mut start = 0;
    let (mut sw, mut swt, mut swt2) = (0.0, 0.0, 0.0);
    for (idx, &(t, w)) in points.iter().enumerate() {
        let (nsw, nswt, nswt2) = (sw + w, swt + w * t, swt2 + w * t * t);
        let err = (nswt2 - nswt * nswt / nsw).max(0.0) * gram;
        if idx > start && err > batch_error {
            out.push((swt / sw, sw, start..idx));
            start = idx;
            sw = w;
            swt = w * t;
            swt2 = w * t * t;
        } else {
            sw = nsw;
            swt = nswt;
            swt2 = nswt2;
        }
    }
    if sw > 0.0 {
        out.push((swt / sw, sw, start..points.len()));
    }
    out
}

/// Compress the voxel set onto pencils of rays through the sites.
///
/// Each voxel center is assigned to the site nearest in that site's norm,
/// projected onto the nearest ray of the site's pencil, and merged into
/// batches along the ray with per-batch error at most `batch_error`.
pub fn pencil_coreset(
    scan: &GrainScan,
    stats: &GrainStats,
    params: PencilParams,
    field: &BoundaryDistanceField,
) -> Result<ImageSupport, SupportError> {
    if params.rays_per_site < 6 {
        return Err(SupportError::TooFewRays(params.rays_per_site));
    }
    if !(params.batch_error > 0.0) {
        return Err(SupportError::NonPositiveBatchError(params.batch_error));
    }
    let k = stats.k();
    let shapes: Vec<Mat3> = if params.ellipsoidal {
        stats.precision.clone()
    } else {
        vec![Mat3::identity(); k]
    };

    let pencils: Vec<Pencil> = (0..k)
        .map(|i| {
            let base = fibonacci_directions(params.rays_per_site, i);
            let dirs: Vec<Vec3> = if params.ellipsoidal {
                let half = linalg::spd_inv_sqrt(&shapes[i]);
                base.iter().map(|u| (half * u).normalize()).collect()
            } else {
                base
            };
            let dir_norm_sq = dirs.iter().map(|u| u.dot(&(shapes[i] * u))).collect();
            Pencil { dirs, dir_norm_sq }
        })
        .collect();

    // Assign every voxel to (site, ray) and record the signed coordinate of
    // its projection along the ray.
    use rayon::prelude::*;
    let (nx, ny, nz) = scan.dims();
    let assignments: Vec<(u32, u32, f64)> = (0..nz)
        .into_par_iter()
        .flat_map_iter(|z| {
            let mut slab = Vec::with_capacity(nx * ny);
            for y in 0..ny {
                for x in 0..nx {
                    let p = scan.voxel_center(x, y, z);
                    let mut best_site = 0usize;
                    let mut best_d = f64::INFINITY;
                    for i in 0..k {
                        let d = linalg::quad_form(&shapes[i], &stats.centroid[i], &p);
                        if d < best_d {
                            best_d = d;
                            best_site = i;
                        }
                    }
                    let rel = p - stats.centroid[best_site];
                    let pencil = &pencils[best_site];
                    let a_rel = shapes[best_site] * rel;
                    let norm_rel = rel.dot(&a_rel);
                    let mut best_ray = 0usize;
                    let mut best_perp = f64::INFINITY;
                    let mut best_t = 0.0;
                    for (r, u) in pencil.dirs.iter().enumerate() {
                        let t = u.dot(&a_rel) / pencil.dir_norm_sq[r];
                        let perp = norm_rel - t * t * pencil.dir_norm_sq[r];
                        if perp < best_perp {
                            best_perp = perp;
                            best_ray = r;
                            best_t = t;
                        }
                    }
                    slab.push((best_site as u32, best_ray as u32, best_t));
                }
            }
            slab
        })
        .collect();

    // Bucket voxels per (site, ray), sort along the ray, batch greedily.
    let rays_total = k * params.rays_per_site;
    let mut buckets: Vec<Vec<(f64, u32)>> = vec![Vec::new(); rays_total];
    for (idx, &(site, ray, t)) in assignments.iter().enumerate() {
        buckets[site as usize * params.rays_per_site + ray as usize].push((t, idx as u32));
    }

    let mut points = Vec::new();
    for (bucket_id, bucket) in buckets.iter_mut().enumerate() {
        if bucket.is_empty() {
            continue;
        }
        let site = bucket_id / params.rays_per_site;
        let ray = bucket_id % params.rays_per_site;
        bucket.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let ts: Vec<(f64, f64)> = bucket.iter().map(|&(t, _)| (t, 1.0)).collect();
        let gram = pencils[site].dir_norm_sq[ray];
        for (mean_t, weight, members) in batch_along_ray(&ts, gram, params.batch_error) {
            let position = stats.centroid[site] + mean_t * pencils[site].dirs[ray];
            let mut counts = std::collections::BTreeMap::new();
            let mut min_bd = u32::MAX;
            for &(_, vidx) in &bucket[members] {
                let label = scan.labels()[vidx as usize];
                *counts.entry(label).or_insert(0u64) += 1;
                min_bd = min_bd.min(field.at_index(vidx as usize));
            }
            let (&majority, _) = counts
                .iter()
                .max_by_key(|&(label, c)| (*c, std::cmp::Reverse(*label)))
                .unwrap();
            points.push(SupportPoint {
                position,
                weight,
                grain: majority,
                pure: counts.len() == 1,
                min_boundary_dist: min_bd,
                kind: PointKind::BatchCentroid,
            });
        }
    }
    Ok(ImageSupport::from_points(points))
}

/// Near-equal integer split of `extent` into `parts` ranges; the remainder
/// is spread over the leading ranges.
fn split_axis(extent: usize, parts: usize) -> Vec<std::ops::Range<usize>> {
    let base = extent / parts;
    let rem = extent % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for p in 0..parts {
        let len = base + usize::from(p < rem);
        out.push(start..start + len);
        start += len;
    }
    out
}

/// Coarsen the voxel grid to `tau` cells per axis; one point per coarse
/// cell at the centroid of its fine-voxel centers, weighted by the count.
pub fn resolution_coreset(
    scan: &GrainScan,
    params: ResolutionParams,
    field: &BoundaryDistanceField,
) -> Result<ImageSupport, SupportError> {
    let dims = scan.dims();
    let tau = params.tau;
    if tau.0 == 0
        || tau.1 == 0
        || tau.2 == 0
        || tau.0 > dims.0
        || tau.1 > dims.1
        || tau.2 > dims.2
    {
        return Err(SupportError::BadResolution { got: tau, dims });
    }
    let xs = split_axis(dims.0, tau.0);
    let ys = split_axis(dims.1, tau.1);
    let zs = split_axis(dims.2, tau.2);

    let mut points = Vec::with_capacity(tau.0 * tau.1 * tau.2);
    for zr in &zs {
        for yr in &ys {
            for xr in &xs {
                let mut sum = Vec3::zeros();
                let mut count = 0u64;
                let mut counts = std::collections::BTreeMap::new();
                let mut min_bd = u32::MAX;
                for z in zr.clone() {
                    for y in yr.clone() {
                        for x in xr.clone() {
                            sum += scan.voxel_center(x, y, z);
                            count += 1;
                            *counts.entry(scan.label_at(x, y, z)).or_insert(0u64) += 1;
                            min_bd = min_bd.min(field.at(x, y, z));
                        }
                    }
                }
                if count == 0 {
                    continue;
                }
                let (&majority, _) = counts
                    .iter()
                    .max_by_key(|&(label, c)| (*c, std::cmp::Reverse(*label)))
                    .unwrap();
                points.push(SupportPoint {
                    position: sum / count as f64,
                    weight: count as f64,
                    grain: majority,
                    pure: counts.len() == 1,
                    min_boundary_dist: min_bd,
                    kind: if count == 1 {
                        PointKind::Voxel
                    } else {
                        PointKind::CoarseCell
                    },
                });
            }
        }
    }
    Ok(ImageSupport::from_points(points))
}

/// Advisory per-axis resolution from the worst-case coreset bound
/// `ceil(2^{8/3} k / eps^{2/3})`.
pub fn advisory_tau(k: usize, eps: f64) -> Result<u64, SupportError> {
    if !(eps > 0.0 && eps <= 0.5) {
        return Err(SupportError::EpsOutOfRange(eps));
    }
    Ok((2.0f64.powf(8.0 / 3.0) * k as f64 / eps.powf(2.0 / 3.0)).ceil() as u64)
}

/// Remove support points whose aggregated voxels all lie at depth `delta`
/// or more inside a single grain; their weight moves to one representative
/// per grain at the grain centroid.
pub fn interior_removal(
    stats: &GrainStats,
    support: &ImageSupport,
    params: InteriorParams,
) -> Result<ImageSupport, SupportError> {
    if params.delta < 2 {
        return Err(SupportError::DeltaTooSmall(params.delta));
    }
    let k = stats.k();
    let mut removed_weight = vec![0.0f64; k];
    let mut removed_min_bd = vec![u32::MAX; k];
    let mut points = Vec::with_capacity(support.len());
    for j in 0..support.len() {
        let removable = support.is_pure(j) && support.min_boundary_dist(j) >= params.delta;
        if removable {
            let g = support.grain(j) as usize - 1;
            removed_weight[g] += support.weight(j);
            removed_min_bd[g] = removed_min_bd[g].min(support.min_boundary_dist(j));
        } else {
            points.push(SupportPoint {
                position: *support.position(j),
                weight: support.weight(j),
                grain: support.grain(j),
                pure: support.is_pure(j),
                min_boundary_dist: support.min_boundary_dist(j),
                kind: support.kind(j),
            });
        }
    }
    for g in 0..k {
        if removed_weight[g] > 0.0 {
            points.push(SupportPoint {
                position: stats.centroid[g],
                weight: removed_weight[g],
                grain: g as u32 + 1,
                pure: true,
                min_boundary_dist: removed_min_bd[g],
                kind: PointKind::InteriorRep,
            });
        }
    }
    Ok(ImageSupport::from_points(points))
}

/// Compose a base strategy with optional interior removal.
pub fn combined_support(
    scan: &GrainScan,
    stats: &GrainStats,
    field: &BoundaryDistanceField,
    strategy: SupportStrategy,
    interior: Option<InteriorParams>,
) -> Result<ImageSupport, SupportError> {
    let base = match strategy {
        SupportStrategy::None => full_support(scan, field),
        SupportStrategy::Pencil(p) => pencil_coreset(scan, stats, p, field)?,
        SupportStrategy::Resolution(r) => resolution_coreset(scan, r, field)?,
    };
    match interior {
        None => Ok(base),
        Some(params) => interior_removal(stats, &base, params),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{compute_boundary_distance, compute_stats};
    use crate::volume::GrainScan;

    fn strip() -> (GrainScan, GrainStats, BoundaryDistanceField) {
        let scan = GrainScan::new((4, 1, 1), (1.0, 1.0, 1.0), vec![1, 1, 2, 2], 2).unwrap();
        let stats = compute_stats(&scan);
        let field = compute_boundary_distance(&scan);
        (scan, stats, field)
    }

    fn checkerboard(n: usize) -> GrainScan {
        let mut labels = Vec::with_capacity(n * n * n);
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    let octant =
                        (x >= n / 2) as u32 + 2 * (y >= n / 2) as u32 + 4 * (z >= n / 2) as u32;
                    labels.push(octant + 1);
                }
            }
        }
        GrainScan::new((n, n, n), (1.0, 1.0, 1.0), labels, 8).unwrap()
    }

    #[test]
    fn full_support_is_unit_voxels() {
        let (scan, _, field) = strip();
        let s = full_support(&scan, &field);
        assert_eq!(s.len(), 4);
        assert_eq!(s.total_weight(), 4.0);
        assert!(s.weights().iter().all(|&w| w == 1.0));
    }

    #[test]
    fn batching_with_infinite_budget_is_one_centroid() {
        let pts = [(1.0, 1.0), (2.0, 1.0), (3.0, 1.0)];
        let batches = batch_along_ray(&pts, 1.0, f64::INFINITY);
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].0, 2.0);
        assert_eq!(batches[0].1, 3.0);
    }

    #[test]
    fn batching_with_tight_budget_keeps_singletons() {
        // Error of any 2-point unit-weight batch at spacing 1 is 0.5.
        let pts = [(1.0, 1.0), (2.0, 1.0), (3.0, 1.0)];
        let batches = batch_along_ray(&pts, 1.0, 0.4);
        assert_eq!(batches.len(), 3);
        for (i, b) in batches.iter().enumerate() {
            assert_eq!(b.0, (i + 1) as f64);
            assert_eq!(b.1, 1.0);
        }
    }

    #[test]
    fn resolution_coreset_blocks() {
        let labels = vec![1, 1, 2, 2, 1, 1, 2, 2, 1, 1, 2, 2, 1, 1, 2, 2];
        let scan = GrainScan::new((4, 4, 1), (1.0, 1.0, 1.0), labels, 2).unwrap();
        let field = compute_boundary_distance(&scan);
        let s =
            resolution_coreset(&scan, ResolutionParams { tau: (2, 2, 1) }, &field).unwrap();
        assert_eq!(s.len(), 4);
        assert!(s.weights().iter().all(|&w| w == 4.0));
        let mut positions: Vec<(f64, f64)> = s.positions().iter().map(|p| (p.x, p.y)).collect();
        positions.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(
            positions,
            vec![(1.0, 1.0), (1.0, 3.0), (3.0, 1.0), (3.0, 3.0)]
        );
        assert_eq!(s.total_weight(), 16.0);
        // The 2x2 blocks here are single-label.
        assert!((0..s.len()).all(|j| s.is_pure(j)));
    }

    #[test]
    fn resolution_identity_at_full_dims() {
        let (scan, _, field) = strip();
        let full = full_support(&scan, &field);
        let coarse =
            resolution_coreset(&scan, ResolutionParams { tau: scan.dims() }, &field).unwrap();
        assert_eq!(coarse.positions(), full.positions());
        assert_eq!(coarse.weights(), full.weights());
        assert_eq!(coarse.total_weight(), full.total_weight());
    }

    #[test]
    fn resolution_rejects_bad_tau() {
        let (scan, _, field) = strip();
        assert!(resolution_coreset(&scan, ResolutionParams { tau: (0, 1, 1) }, &field).is_err());
        assert!(resolution_coreset(&scan, ResolutionParams { tau: (5, 1, 1) }, &field).is_err());
    }

    #[test]
    fn split_axis_spreads_remainder() {
        assert_eq!(split_axis(7, 3), vec![0..3, 3..5, 5..7]);
        assert_eq!(split_axis(6, 3), vec![0..2, 2..4, 4..6]);
    }

    #[test]
    fn advisory_tau_values() {
        // ceil(2^(10/3)) = ceil(10.08) = 11.
        assert_eq!(advisory_tau(1, 0.5).unwrap(), 11);
        assert_eq!(advisory_tau(50, 0.01).unwrap(), 6840);
        assert!(advisory_tau(10, 0.6).is_err());
        assert!(advisory_tau(10, 0.0).is_err());
        // Dropping the 2^(8/3) constant, as done in worst-case size
        // comparisons: (k / eps^(2/3))^3 = k^3 / eps^2 = 1.25e9 here.
        let constant_free = 50.0f64.powi(3) / 0.01f64.powi(2);
        assert_eq!(constant_free, 1.25e9);
    }

    #[test]
    fn interior_removal_on_strip() {
        let (scan, stats, field) = strip();
        let s = full_support(&scan, &field);
        let out = interior_removal(&stats, &s, InteriorParams { delta: 2 }).unwrap();
        // Voxels 1 and 4 (distance 2) are replaced by per-grain reps.
        assert_eq!(out.len(), 4);
        assert_eq!(out.total_weight(), 4.0);
        let reps: Vec<usize> = (0..out.len())
            .filter(|&j| out.kind(j) == PointKind::InteriorRep)
            .collect();
        assert_eq!(reps.len(), 2);
        for &j in &reps {
            let g = out.grain(j) as usize - 1;
            assert_eq!(out.weight(j), 1.0);
            assert!((out.position(j) - stats.centroid[g]).norm() < 1e-12);
        }
        assert!(interior_removal(&stats, &s, InteriorParams { delta: 1 }).is_err());
    }

    #[test]
    fn pencil_contract_checks() {
        let (scan, stats, field) = strip();
        let err = pencil_coreset(
            &scan,
            &stats,
            PencilParams {
                rays_per_site: 5,
                ..Default::default()
            },
            &field,
        )
        .unwrap_err();
        assert!(matches!(err, SupportError::TooFewRays(5)));
        let err = pencil_coreset(
            &scan,
            &stats,
            PencilParams {
                batch_error: 0.0,
                ..Default::default()
            },
            &field,
        )
        .unwrap_err();
        assert!(matches!(err, SupportError::NonPositiveBatchError(_)));
    }

    #[test]
    fn pencil_conserves_weight_and_stays_on_rays() {
        let scan = checkerboard(8);
        let stats = compute_stats(&scan);
        let field = compute_boundary_distance(&scan);
        let params = PencilParams {
            rays_per_site: 16,
            batch_error: 2.0,
            ellipsoidal: true,
        };
        let s = pencil_coreset(&scan, &stats, params, &field).unwrap();
        assert!(s.len() <= scan.len());
        assert_eq!(s.total_weight(), scan.len() as f64);

        // Every batch centroid lies on some ray of some site's pencil:
        // perpendicular metric distance below 1e-9, measured on the
        // residual vector to avoid cancellation.
        for j in 0..s.len() {
            let p = s.position(j);
            let mut best = f64::INFINITY;
            for i in 0..stats.k() {
                let a = &stats.precision[i];
                let rel = p - stats.centroid[i];
                let a_rel = a * rel;
                let half = linalg::spd_inv_sqrt(a);
                for u in fibonacci_directions(params.rays_per_site, i) {
                    let dir = (half * u).normalize();
                    let gram = dir.dot(&(a * dir));
                    let t = dir.dot(&a_rel) / gram;
                    let v = rel - t * dir;
                    let perp = v.dot(&(a * v)).max(0.0);
                    best = best.min(perp.sqrt());
                }
            }
            assert!(best < 1e-9, "batch centroid off-ray by {best}");
        }
    }

    #[test]
    fn combined_none_is_full_support() {
        let (scan, stats, field) = strip();
        let a = combined_support(&scan, &stats, &field, SupportStrategy::None, None).unwrap();
        let b = full_support(&scan, &field);
        assert_eq!(a, b);
    }

    #[test]
    fn combined_resolution_plus_removal_conserves_weight() {
        let scan = checkerboard(16);
        let stats = compute_stats(&scan);
        let field = compute_boundary_distance(&scan);
        let s = combined_support(
            &scan,
            &stats,
            &field,
            SupportStrategy::Resolution(ResolutionParams { tau: (8, 8, 8) }),
            Some(InteriorParams { delta: 2 }),
        )
        .unwrap();
        assert!(s.len() < 8 * 8 * 8);
        assert_eq!(s.total_weight(), (16 * 16 * 16) as f64);
        // Per-grain weight conservation: every aggregate here is pure.
        let mut per_grain = vec![0.0; 8];
        for j in 0..s.len() {
            assert!(s.is_pure(j));
            per_grain[s.grain(j) as usize - 1] += s.weight(j);
        }
        for g in 0..8 {
            assert_eq!(per_grain[g], stats.kappa[g] as f64);
        }
    }
}
