//! Labeled voxel volumes and their on-disk formats.
//!
//! A volume is stored as two files: a JSON header (`dims`, `spacing_um`,
//! `k`, `dtype`, `byte_order`) and a raw little-endian label array in
//! x-fastest order (`index = x + nx * (y + ny * z)`). Ground-truth scans use
//! labels `1..=k`; rasterized predictions may additionally contain label `0`
//! for voxels on a cell boundary.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Vec3;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid header {path}: {reason}")]
    Header { path: String, reason: String },
    #[error("size mismatch: data holds {found} bytes, header implies {expected}")]
    SizeMismatch { expected: u64, found: u64 },
    #[error("label {label} out of range [{min}, {max}] at voxel {index}")]
    LabelRange {
        label: u32,
        min: u32,
        max: u32,
        index: usize,
    },
    #[error("label {label} does not occur in the volume although k = {k}")]
    MissingLabel { label: u32, k: u32 },
    #[error("invalid dimensions or spacing: {0}")]
    BadGeometry(String),
    #[error("slice index {index} out of range for axis {axis:?} of extent {extent}")]
    SliceOutOfRange {
        axis: Axis,
        index: usize,
        extent: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Header of the raw label file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VolumeHeader {
    pub dims: (usize, usize, usize),
    pub spacing_um: (f64, f64, f64),
    pub k: u32,
    /// "u16" or "u32"
    pub dtype: String,
    /// only "little-endian" is supported
    pub byte_order: String,
}

impl VolumeHeader {
    pub fn voxel_count(&self) -> u64 {
        self.dims.0 as u64 * self.dims.1 as u64 * self.dims.2 as u64
    }

    pub fn scalar_width(&self) -> Result<usize, VolumeError> {
        match self.dtype.as_str() {
            "u16" => Ok(2),
            "u32" => Ok(4),
            other => Err(VolumeError::Header {
                path: String::new(),
                reason: format!("unsupported dtype {other:?} (use \"u16\" or \"u32\")"),
            }),
        }
    }

    fn validate(&self, path: &str) -> Result<(), VolumeError> {
        let err = |reason: String| VolumeError::Header {
            path: path.to_string(),
            reason,
        };
        if self.byte_order != "little-endian" {
            return Err(err(format!(
                "unsupported byte order {:?}",
                self.byte_order
            )));
        }
        let width = self.scalar_width().map_err(|e| match e {
            VolumeError::Header { reason, .. } => err(reason),
            other => other,
        })?;
        if width == 2 && self.k > u16::MAX as u32 {
            return Err(err(format!("dtype u16 cannot encode k = {}", self.k)));
        }
        if self.dims.0 == 0 || self.dims.1 == 0 || self.dims.2 == 0 {
            return Err(err("zero dimension".into()));
        }
        if !(self.spacing_um.0 > 0.0 && self.spacing_um.1 > 0.0 && self.spacing_um.2 > 0.0) {
            return Err(err("spacing components must be positive".into()));
        }
        Ok(())
    }
}

/// A dense labeled voxel volume with physical spacing.
///
/// Immutable after construction and safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct GrainScan {
    dims: (usize, usize, usize),
    spacing: (f64, f64, f64),
    labels: Vec<u32>,
    k: u32,
}

impl GrainScan {
    /// A ground-truth scan: every label in `1..=k`, every value occurring.
    pub fn new(
        dims: (usize, usize, usize),
        spacing: (f64, f64, f64),
        labels: Vec<u32>,
        k: u32,
    ) -> Result<Self, VolumeError> {
        let scan = Self::new_allow_zero(dims, spacing, labels, k)?;
        if let Some(index) = scan.labels.iter().position(|&v| v == 0) {
            return Err(VolumeError::LabelRange {
                label: 0,
                min: 1,
                max: k,
                index,
            });
        }
        let mut seen = vec![false; k as usize + 1];
        for &v in &scan.labels {
            seen[v as usize] = true;
        }
        for label in 1..=k {
            if !seen[label as usize] {
                return Err(VolumeError::MissingLabel { label, k });
            }
        }
        Ok(scan)
    }

    /// A predicted labeling: label `0` marks unassigned (boundary) voxels and
    /// cells are allowed to be empty.
    pub fn new_allow_zero(
        dims: (usize, usize, usize),
        spacing: (f64, f64, f64),
        labels: Vec<u32>,
        k: u32,
    ) -> Result<Self, VolumeError> {
        let n = dims
            .0
            .checked_mul(dims.1)
            .and_then(|v| v.checked_mul(dims.2))
            .ok_or_else(|| VolumeError::BadGeometry("dimension product overflows".into()))?;
        if n == 0 {
            return Err(VolumeError::BadGeometry("zero dimension".into()));
        }
        if !(spacing.0 > 0.0 && spacing.1 > 0.0 && spacing.2 > 0.0) {
            return Err(VolumeError::BadGeometry(
                "spacing components must be positive".into(),
            ));
        }
        if labels.len() != n {
            return Err(VolumeError::SizeMismatch {
                expected: n as u64,
                found: labels.len() as u64,
            });
        }
        if k == 0 {
            return Err(VolumeError::BadGeometry("k must be at least 1".into()));
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|&(_, &v)| v > k) {
            return Err(VolumeError::LabelRange {
                label,
                min: 0,
                max: k,
                index,
            });
        }
        Ok(Self {
            dims,
            spacing,
            labels,
            k,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn spacing(&self) -> (f64, f64, f64) {
        self.spacing
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn has_unassigned(&self) -> bool {
        self.labels.iter().any(|&v| v == 0)
    }

    /// Flat index of voxel `(x, y, z)`; x-fastest.
    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims.0 * (y + self.dims.1 * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize, usize) {
        let x = index % self.dims.0;
        let y = (index / self.dims.0) % self.dims.1;
        let z = index / (self.dims.0 * self.dims.1);
        (x, y, z)
    }

    #[inline]
    pub fn label_at(&self, x: usize, y: usize, z: usize) -> u32 {
        self.labels[self.index(x, y, z)]
    }

    /// Physical center of voxel `(x, y, z)`: `((x + 1/2) sx, ...)`.
    #[inline]
    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> Vec3 {
        Vec3::new(
            (x as f64 + 0.5) * self.spacing.0,
            (y as f64 + 0.5) * self.spacing.1,
            (z as f64 + 0.5) * self.spacing.2,
        )
    }

    /// Center of the whole volume box.
    pub fn volume_center(&self) -> Vec3 {
        Vec3::new(
            self.dims.0 as f64 * self.spacing.0 * 0.5,
            self.dims.1 as f64 * self.spacing.1 * 0.5,
            self.dims.2 as f64 * self.spacing.2 * 0.5,
        )
    }

    /// Per-grain voxel counts, indexed `0..=k` (slot 0 counts unassigned).
    pub fn label_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.k as usize + 1];
        for &v in &self.labels {
            counts[v as usize] += 1;
        }
        counts
    }

    fn header(&self) -> VolumeHeader {
        let dtype = if self.k <= u16::MAX as u32 { "u16" } else { "u32" };
        VolumeHeader {
            dims: self.dims,
            spacing_um: self.spacing,
            k: self.k,
            dtype: dtype.to_string(),
            byte_order: "little-endian".to_string(),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> VolumeError + '_ {
    move |source| VolumeError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn load_header(header_path: &Path) -> Result<VolumeHeader, VolumeError> {
    let text = fs::read_to_string(header_path).map_err(io_err(header_path))?;
    let header: VolumeHeader =
        serde_json::from_str(&text).map_err(|e| VolumeError::Header {
            path: header_path.display().to_string(),
            reason: e.to_string(),
        })?;
    header.validate(&header_path.display().to_string())?;
    Ok(header)
}

fn load_labels(header: &VolumeHeader, data_path: &Path) -> Result<Vec<u32>, VolumeError> {
    let width = header.scalar_width()?;
    let bytes = fs::read(data_path).map_err(io_err(data_path))?;
    let expected = header.voxel_count() * width as u64;
    if bytes.len() as u64 != expected {
        return Err(VolumeError::SizeMismatch {
            expected,
            found: bytes.len() as u64,
        });
    }
    let labels = match width {
        2 => bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as u32)
            .collect(),
        _ => bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    };
    Ok(labels)
}

/// Load a ground-truth scan (labels `1..=k`, all values present).
pub fn load_scan(header_path: &Path, data_path: &Path) -> Result<GrainScan, VolumeError> {
    let header = load_header(header_path)?;
    let labels = load_labels(&header, data_path)?;
    GrainScan::new(header.dims, header.spacing_um, labels, header.k)
}

/// Load a predicted labeling; label `0` and empty cells are permitted.
pub fn load_prediction(header_path: &Path, data_path: &Path) -> Result<GrainScan, VolumeError> {
    let header = load_header(header_path)?;
    let labels = load_labels(&header, data_path)?;
    GrainScan::new_allow_zero(header.dims, header.spacing_um, labels, header.k)
}

/// Write header and raw data. `load_scan(save_scan(s)) == s` bit-exactly.
pub fn save_scan(
    scan: &GrainScan,
    header_path: &Path,
    data_path: &Path,
) -> Result<(), VolumeError> {
    let header = scan.header();
    let text = serde_json::to_string_pretty(&header).expect("header serializes");
    fs::write(header_path, text).map_err(io_err(header_path))?;

    let width = header.scalar_width()?;
    let mut bytes = Vec::with_capacity(scan.labels.len() * width);
    match width {
        2 => {
            for &v in &scan.labels {
                bytes.extend_from_slice(&(v as u16).to_le_bytes());
            }
        }
        _ => {
            for &v in &scan.labels {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    fs::write(data_path, bytes).map_err(io_err(data_path))?;
    Ok(())
}

/// Deterministic label color: the low 24 bits of `label * 0x9E3779B1`.
///
/// The multiplier is odd, so the map is a bijection modulo 2^24: distinct
/// labels below 2^24 get distinct colors, and label 0 is black.
pub fn label_color(label: u32) -> [u8; 3] {
    let c = label.wrapping_mul(0x9E37_79B1) & 0x00FF_FFFF;
    [(c >> 16) as u8, (c >> 8) as u8, c as u8]
}

/// Export one axis-aligned slice as a binary PPM (P6) image.
pub fn export_slice(
    scan: &GrainScan,
    axis: Axis,
    index: usize,
    out_path: &Path,
) -> Result<(), VolumeError> {
    let (nx, ny, nz) = scan.dims;
    let extent = match axis {
        Axis::X => nx,
        Axis::Y => ny,
        Axis::Z => nz,
    };
    if index >= extent {
        return Err(VolumeError::SliceOutOfRange {
            axis,
            index,
            extent,
        });
    }
    // Image rows iterate the later axis, columns the earlier one.
    let (w, h) = match axis {
        Axis::X => (ny, nz),
        Axis::Y => (nx, nz),
        Axis::Z => (nx, ny),
    };
    let mut body = Vec::with_capacity(w * h * 3);
    for row in 0..h {
        for col in 0..w {
            let label = match axis {
                Axis::X => scan.label_at(index, col, row),
                Axis::Y => scan.label_at(col, index, row),
                Axis::Z => scan.label_at(col, row, index),
            };
            body.extend_from_slice(&label_color(label));
        }
    }
    let mut file = fs::File::create(out_path).map_err(io_err(out_path))?;
    write!(file, "P6\n{w} {h}\n255\n").map_err(io_err(out_path))?;
    file.write_all(&body).map_err(io_err(out_path))?;
    Ok(())
}
