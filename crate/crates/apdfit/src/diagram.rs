//! Anisotropic power diagrams: evaluation, classification, rasterization.
//!
//! A diagram is given per cell by an SPD shape matrix `A_i`, a site `s_i`
//! and a size offset `gamma_i`; cell membership of a point is decided by the
//! smallest `h_i(x) = (x - s_i)^T A_i (x - s_i) + gamma_i`. Ties within a
//! tolerance classify as 0 (boundary).

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, Mat3, Vec3};
use crate::volume::GrainScan;

#[derive(Debug, Error)]
pub enum DiagramError {
    #[error("cell {0}: shape matrix is not symmetric positive definite")]
    NotSpd(usize),
    #[error("sites {0} and {1} coincide")]
    DuplicateSites(usize, usize),
    #[error("diagram must have at least one cell")]
    Empty,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid diagram file {path}: {reason}")]
    Parse { path: String, reason: String },
}

/// The per-cell parameters of an anisotropic power diagram.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagramParams {
    shapes: Vec<Mat3>,
    sites: Vec<Vec3>,
    gammas: Vec<f64>,
}

/// Result of classifying one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassificationResult {
    /// 0 when the point ties between cells within the tolerance.
    pub label: u32,
    /// Gap between the best and second-best cell value; infinite for k = 1.
    pub margin: f64,
}

impl DiagramParams {
    pub fn new(
        shapes: Vec<Mat3>,
        sites: Vec<Vec3>,
        gammas: Vec<f64>,
    ) -> Result<Self, DiagramError> {
        if shapes.is_empty() {
            return Err(DiagramError::Empty);
        }
        assert_eq!(shapes.len(), sites.len());
        assert_eq!(shapes.len(), gammas.len());
        for (i, a) in shapes.iter().enumerate() {
            if !linalg::is_spd(a) {
                return Err(DiagramError::NotSpd(i));
            }
        }
        for i in 0..sites.len() {
            for j in (i + 1)..sites.len() {
                if sites[i] == sites[j] {
                    return Err(DiagramError::DuplicateSites(i, j));
                }
            }
        }
        Ok(Self {
            shapes,
            sites,
            gammas,
        })
    }

    /// Voronoi diagram: unit shapes, zero sizes.
    pub fn voronoi(sites: Vec<Vec3>) -> Result<Self, DiagramError> {
        let k = sites.len();
        Self::new(vec![Mat3::identity(); k], sites, vec![0.0; k])
    }

    /// Power (Laguerre) diagram: unit shapes, given sizes.
    pub fn power(sites: Vec<Vec3>, gammas: Vec<f64>) -> Result<Self, DiagramError> {
        let k = sites.len();
        Self::new(vec![Mat3::identity(); k], sites, gammas)
    }

    pub fn k(&self) -> usize {
        self.shapes.len()
    }

    pub fn shape(&self, i: usize) -> &Mat3 {
        &self.shapes[i]
    }

    pub fn site(&self, i: usize) -> &Vec3 {
        &self.sites[i]
    }

    pub fn gamma(&self, i: usize) -> f64 {
        self.gammas[i]
    }

    pub fn shapes(&self) -> &[Mat3] {
        &self.shapes
    }

    pub fn sites(&self) -> &[Vec3] {
        &self.sites
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    /// `h_i(x) = (x - s_i)^T A_i (x - s_i) + gamma_i`.
    #[inline]
    pub fn h_value(&self, i: usize, x: &Vec3) -> f64 {
        linalg::quad_form(&self.shapes[i], &self.sites[i], x) + self.gammas[i]
    }

    /// Index of the smallest cell value and the gap to the second smallest.
    pub fn classify(&self, x: &Vec3, tie_tol: f64) -> ClassificationResult {
        debug_assert!(tie_tol >= 0.0);
        let mut best = 0usize;
        let mut best_h = self.h_value(0, x);
        let mut second_h = f64::INFINITY;
        for i in 1..self.k() {
            let h = self.h_value(i, x);
            if h < best_h {
                second_h = best_h;
                best_h = h;
                best = i;
            } else if h < second_h {
                second_h = h;
            }
        }
        let margin = second_h - best_h;
        let label = if margin > tie_tol { best as u32 + 1 } else { 0 };
        ClassificationResult { label, margin }
    }

    /// A relative tie tolerance: `1e-9` times the median cell value scale
    /// over the given volume box.
    pub fn default_tie_tol(&self, dims: (usize, usize, usize), spacing: (f64, f64, f64)) -> f64 {
        let half_diag = 0.5 * Vec3::new(
            dims.0 as f64 * spacing.0,
            dims.1 as f64 * spacing.1,
            dims.2 as f64 * spacing.2,
        )
        .norm();
        let mut scales: Vec<f64> = self
            .shapes
            .iter()
            .zip(&self.gammas)
            .map(|(a, g)| linalg::sym_spectral_norm(a) * half_diag * half_diag + g.abs())
            .collect();
        scales.sort_by(f64::total_cmp);
        1e-9 * scales[scales.len() / 2]
    }

    /// Classify every voxel center of a box volume. The output may contain
    /// label 0 on cell boundaries.
    pub fn rasterize(
        &self,
        dims: (usize, usize, usize),
        spacing: (f64, f64, f64),
        tie_tol: f64,
    ) -> GrainScan {
        let (nx, ny, nz) = dims;
        let labels: Vec<u32> = (0..nz)
            .into_par_iter()
            .flat_map_iter(|z| {
                let mut slab = Vec::with_capacity(nx * ny);
                for y in 0..ny {
                    for x in 0..nx {
                        let p = Vec3::new(
                            (x as f64 + 0.5) * spacing.0,
                            (y as f64 + 0.5) * spacing.1,
                            (z as f64 + 0.5) * spacing.2,
                        );
                        slab.push(self.classify(&p, tie_tol).label);
                    }
                }
                slab
            })
            .collect();
        GrainScan::new_allow_zero(dims, spacing, labels, self.k() as u32)
            .expect("rasterized labels are within range")
    }

    pub fn to_json(&self) -> String {
        let doc = DiagramDoc {
            k: self.k(),
            cells: (0..self.k())
                .map(|i| CellDoc {
                    a: linalg::mat3_to_row_major(&self.shapes[i]),
                    s: [self.sites[i].x, self.sites[i].y, self.sites[i].z],
                    gamma: self.gammas[i],
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("diagram serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), DiagramError> {
        fs::write(path, self.to_json()).map_err(|source| DiagramError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, DiagramError> {
        let text = fs::read_to_string(path).map_err(|source| DiagramError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let doc: DiagramDoc = serde_json::from_str(&text).map_err(|e| DiagramError::Parse {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let mut shapes = Vec::with_capacity(doc.cells.len());
        let mut sites = Vec::with_capacity(doc.cells.len());
        let mut gammas = Vec::with_capacity(doc.cells.len());
        for cell in &doc.cells {
            shapes.push(linalg::mat3_from_row_major(&cell.a));
            sites.push(Vec3::new(cell.s[0], cell.s[1], cell.s[2]));
            gammas.push(cell.gamma);
        }
        Self::new(shapes, sites, gammas)
    }
}

#[derive(Serialize, Deserialize)]
struct DiagramDoc {
    k: usize,
    cells: Vec<CellDoc>,
}

#[derive(Serialize, Deserialize)]
struct CellDoc {
    a: [f64; 9],
    s: [f64; 3],
    gamma: f64,
}
