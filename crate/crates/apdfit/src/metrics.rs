//! Fit quality between a predicted labeling and the ground-truth scan.
//!
//! `accuracy` is the fraction of voxels whose predicted label matches the
//! truth (label 0 never matches); `weight_error` the normalized sum of
//! per-grain count deviations. Centroid and covariance errors compare grain
//! moments weighted by grain size; neighborhood correctness compares
//! 26-neighborhood adjacency sets.

use serde::Serialize;
use thiserror::Error;

use crate::linalg::{self, Mat3, Vec3};
use crate::stats::{compute_neighbors, compute_stats};
use crate::volume::GrainScan;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("dimension mismatch: truth {truth:?} vs predicted {predicted:?}")]
    DimsMismatch {
        truth: (usize, usize, usize),
        predicted: (usize, usize, usize),
    },
    #[error("predicted labels exceed truth cell count {k}")]
    LabelRange { k: u32 },
}

/// Full metric suite over one (truth, prediction) pair.
#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    /// Fraction of voxels labeled correctly.
    pub accuracy: f64,
    /// Normalized sum of absolute cluster weight deviations.
    pub weight_error: f64,
    /// Size-weighted mean centroid deviation (length units).
    pub centroid_error: f64,
    /// Size-weighted mean covariance deviation, spectral norm.
    pub covariance_error: f64,
    /// Percent of grains with exactly the true 26-neighbor set.
    pub neighborhood_exact: f64,
    /// Percent with at most 1 missing-or-extra neighbor.
    pub neighborhood_le1: f64,
    /// Percent with at most 2 missing-or-extra neighbors.
    pub neighborhood_le2: f64,
    /// Percent of grains whose true neighbors are all present (one-sided).
    pub neighborhood_superset: f64,
    /// Labels of grains with no predicted voxels (penalized in the moment
    /// errors with the volume center and a zero covariance).
    pub empty_predicted_cells: Vec<u32>,
}

fn check_dims(truth: &GrainScan, predicted: &GrainScan) -> Result<(), MetricsError> {
    if truth.dims() != predicted.dims() {
        return Err(MetricsError::DimsMismatch {
            truth: truth.dims(),
            predicted: predicted.dims(),
        });
    }
    if predicted.k() > truth.k() {
        return Err(MetricsError::LabelRange { k: truth.k() });
    }
    Ok(())
}

/// Fraction of voxels with `predicted == truth`; 0-labels never match.
pub fn accuracy(truth: &GrainScan, predicted: &GrainScan) -> Result<f64, MetricsError> {
    check_dims(truth, predicted)?;
    let hits = truth
        .labels()
        .iter()
        .zip(predicted.labels())
        .filter(|(a, b)| a == b)
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

/// `(1/n) sum_i |kappa_i - predicted_count_i|`.
pub fn weight_error(truth: &GrainScan, predicted: &GrainScan) -> Result<f64, MetricsError> {
    check_dims(truth, predicted)?;
    let k = truth.k() as usize;
    let mut true_counts = vec![0i64; k + 1];
    let mut pred_counts = vec![0i64; k + 1];
    for &v in truth.labels() {
        true_counts[v as usize] += 1;
    }
    for &v in predicted.labels() {
        pred_counts[v as usize] += 1;
    }
    let sum: i64 = (1..=k)
        .map(|i| (true_counts[i] - pred_counts[i]).abs())
        .sum();
    Ok(sum as f64 / truth.len() as f64)
}

struct Moments {
    count: Vec<u64>,
    centroid: Vec<Vec3>,
    covariance: Vec<Mat3>,
}

/// Count, centroid and covariance per label over an allow-zero scan; empty
/// cells get the fallback centroid and a zero covariance.
fn moments(scan: &GrainScan, k: usize, fallback: Vec3) -> Moments {
    let (nx, ny, nz) = scan.dims();
    let mut count = vec![0u64; k];
    let mut sum = vec![Vec3::zeros(); k];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let v = scan.label_at(x, y, z);
                if v > 0 {
                    count[v as usize - 1] += 1;
                    sum[v as usize - 1] += scan.voxel_center(x, y, z);
                }
            }
        }
    }
    let centroid: Vec<Vec3> = (0..k)
        .map(|i| {
            if count[i] > 0 {
                sum[i] / count[i] as f64
            } else {
                fallback
            }
        })
        .collect();
    let mut moment = vec![Mat3::zeros(); k];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let v = scan.label_at(x, y, z);
                if v > 0 {
                    let d = scan.voxel_center(x, y, z) - centroid[v as usize - 1];
                    moment[v as usize - 1] += d * d.transpose();
                }
            }
        }
    }
    let covariance = (0..k)
        .map(|i| {
            if count[i] > 0 {
                linalg::symmetrize(&(moment[i] / count[i] as f64))
            } else {
                Mat3::zeros()
            }
        })
        .collect();
    Moments {
        count,
        centroid,
        covariance,
    }
}

/// `(1/n) sum_i kappa_i |c(G_i) - c(C_i)|_2`.
pub fn centroid_error(truth: &GrainScan, predicted: &GrainScan) -> Result<f64, MetricsError> {
    check_dims(truth, predicted)?;
    let stats = compute_stats(truth);
    let pred = moments(predicted, truth.k() as usize, truth.volume_center());
    let sum: f64 = (0..truth.k() as usize)
        .map(|i| stats.kappa[i] as f64 * (stats.centroid[i] - pred.centroid[i]).norm())
        .sum();
    Ok(sum / truth.len() as f64)
}

/// `(1/n) sum_i kappa_i |Sigma_i - Cov(C_i)|_2` (spectral norm).
pub fn covariance_error(truth: &GrainScan, predicted: &GrainScan) -> Result<f64, MetricsError> {
    check_dims(truth, predicted)?;
    let stats = compute_stats(truth);
    let pred = moments(predicted, truth.k() as usize, truth.volume_center());
    let sum: f64 = (0..truth.k() as usize)
        .map(|i| {
            stats.kappa[i] as f64
                * linalg::sym_spectral_norm(&(stats.covariance[i] - pred.covariance[i]))
        })
        .sum();
    Ok(sum / truth.len() as f64)
}

/// Neighborhood correctness percentages: grains whose predicted 26-neighbor
/// set differs from the truth by 0, at most 1, and at most 2 elements
/// (missing or additional), plus the one-sided superset reading.
pub fn neighborhood_report(
    truth: &GrainScan,
    predicted: &GrainScan,
) -> Result<(f64, f64, f64, f64), MetricsError> {
    check_dims(truth, predicted)?;
    let k = truth.k() as usize;
    let tg = compute_neighbors(truth);
    let pg = compute_neighbors(predicted);
    let mut exact = 0usize;
    let mut le1 = 0usize;
    let mut le2 = 0usize;
    let mut superset = 0usize;
    for label in 1..=k as u32 {
        let tn = tg.neighbors(label);
        let pn = if (label as usize) <= pg.k() {
            pg.neighbors(label).clone()
        } else {
            Default::default()
        };
        let sym_diff = tn.symmetric_difference(&pn).count();
        if sym_diff == 0 {
            exact += 1;
        }
        if sym_diff <= 1 {
            le1 += 1;
        }
        if sym_diff <= 2 {
            le2 += 1;
        }
        if tn.is_subset(&pn) {
            superset += 1;
        }
    }
    let pct = |v: usize| 100.0 * v as f64 / k as f64;
    Ok((pct(exact), pct(le1), pct(le2), pct(superset)))
}

/// The full report over one pair.
pub fn fit_report(truth: &GrainScan, predicted: &GrainScan) -> Result<FitReport, MetricsError> {
    check_dims(truth, predicted)?;
    let k = truth.k() as usize;
    let pred = moments(predicted, k, truth.volume_center());
    let empty: Vec<u32> = (0..k)
        .filter(|&i| pred.count[i] == 0)
        .map(|i| i as u32 + 1)
        .collect();
    let (exact, le1, le2, superset) = neighborhood_report(truth, predicted)?;
    Ok(FitReport {
        accuracy: accuracy(truth, predicted)?,
        weight_error: weight_error(truth, predicted)?,
        centroid_error: centroid_error(truth, predicted)?,
        covariance_error: covariance_error(truth, predicted)?,
        neighborhood_exact: exact,
        neighborhood_le1: le1,
        neighborhood_le2: le2,
        neighborhood_superset: superset,
        empty_predicted_cells: empty,
    })
}

impl FitReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let rows = [
            ("Accuracy", format!("{:.4}", self.accuracy)),
            (
                "Relative cluster weight error",
                format!("{:.4}", self.weight_error),
            ),
            (
                "Relative centroid error",
                format!("{:.2}", self.centroid_error),
            ),
            (
                "Relative covariance error",
                format!("{:.2}", self.covariance_error),
            ),
            (
                "Correct neighborhoods (%)",
                format!("{:.2}", self.neighborhood_exact),
            ),
            (
                "Correct neighborhoods up to 1 error (%)",
                format!("{:.2}", self.neighborhood_le1),
            ),
            (
                "Correct neighborhoods up to 2 errors (%)",
                format!("{:.2}", self.neighborhood_le2),
            ),
            (
                "All true neighbors present (%)",
                format!("{:.2}", self.neighborhood_superset),
            ),
        ];
        let width = rows.iter().map(|(name, _)| name.len()).max().unwrap();
        let mut out = String::new();
        for (name, value) in rows {
            out.push_str(&format!("{name:<width$}  {value:>10}\n"));
        }
        if !self.empty_predicted_cells.is_empty() {
            out.push_str(&format!(
                "warning: empty predicted cells: {:?}\n",
                self.empty_predicted_cells
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scan_from(labels: Vec<u32>, dims: (usize, usize, usize), k: u32) -> GrainScan {
        GrainScan::new(dims, (1.0, 1.0, 1.0), labels, k).unwrap()
    }

    fn pred_from(labels: Vec<u32>, dims: (usize, usize, usize), k: u32) -> GrainScan {
        GrainScan::new_allow_zero(dims, (1.0, 1.0, 1.0), labels, k).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let truth = scan_from(vec![1, 1, 2, 2], (4, 1, 1), 2);
        let pred = pred_from(vec![1, 1, 2, 2], (4, 1, 1), 2);
        let report = fit_report(&truth, &pred).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.weight_error, 0.0);
        assert_eq!(report.centroid_error, 0.0);
        assert_eq!(report.covariance_error, 0.0);
        assert_eq!(report.neighborhood_exact, 100.0);
        assert_eq!(report.neighborhood_le1, 100.0);
        assert_eq!(report.neighborhood_le2, 100.0);
        assert!(report.empty_predicted_cells.is_empty());
    }

    #[test]
    fn all_zero_prediction() {
        let truth = scan_from(vec![1, 1, 2, 2], (4, 1, 1), 2);
        let pred = pred_from(vec![0, 0, 0, 0], (4, 1, 1), 2);
        let report = fit_report(&truth, &pred).unwrap();
        assert_eq!(report.accuracy, 0.0);
        assert_eq!(report.empty_predicted_cells, vec![1, 2]);
    }

    #[test]
    fn weight_error_hand_example() {
        // 16 voxels, true counts (8, 8), predicted (9, 7): (1+1)/16.
        let truth = scan_from(
            (0..16).map(|i| if i < 8 { 1 } else { 2 }).collect(),
            (16, 1, 1),
            2,
        );
        let pred = pred_from(
            (0..16).map(|i| if i < 9 { 1 } else { 2 }).collect(),
            (16, 1, 1),
            2,
        );
        assert_eq!(weight_error(&truth, &pred).unwrap(), 0.125);
    }

    #[test]
    fn accuracy_plus_misclassified_is_one() {
        let truth = scan_from(vec![1, 1, 2, 2, 3, 3], (6, 1, 1), 3);
        let pred = pred_from(vec![1, 0, 2, 1, 3, 2], (6, 1, 1), 3);
        let acc = accuracy(&truth, &pred).unwrap();
        let mis = truth
            .labels()
            .iter()
            .zip(pred.labels())
            .filter(|(a, b)| a != b)
            .count() as f64
            / 6.0;
        assert_eq!(acc + mis, 1.0);
    }

    #[test]
    fn centroid_error_single_voxel_shift() {
        // Grain 1 owns 10 voxels of a 16-strip; flipping its last voxel to
        // grain 2 moves the predicted centroid by 0.5 in x.
        let truth = scan_from(
            (0..16).map(|i| if i < 10 { 1 } else { 2 }).collect(),
            (16, 1, 1),
            2,
        );
        let pred = pred_from(
            (0..16).map(|i| if i < 9 { 1 } else { 2 }).collect(),
            (16, 1, 1),
            2,
        );
        // True centroid of grain 1: x = 5.0; predicted: x = 4.5.
        // True centroid of grain 2: x = 13.0; predicted: x = 12.5.
        let want = (10.0 * 0.5 + 6.0 * 0.5) / 16.0;
        let got = centroid_error(&truth, &pred).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn covariance_error_on_perfect_is_zero_and_positive_otherwise() {
        let truth = scan_from(vec![1, 1, 1, 2, 2, 2], (6, 1, 1), 2);
        let same = pred_from(vec![1, 1, 1, 2, 2, 2], (6, 1, 1), 2);
        assert_eq!(covariance_error(&truth, &same).unwrap(), 0.0);
        let off = pred_from(vec![1, 1, 2, 2, 2, 2], (6, 1, 1), 2);
        assert!(covariance_error(&truth, &off).unwrap() > 0.0);
    }

    #[test]
    fn neighborhood_hand_count_on_strip() {
        // Truth: three grains in a row; grain 2 touches 1 and 3.
        let truth = scan_from(vec![1, 1, 2, 2, 3, 3], (6, 1, 1), 3);
        // Prediction misses grain 2 entirely: 1 and 3 become adjacent.
        let pred = pred_from(vec![1, 1, 1, 3, 3, 3], (6, 1, 1), 3);
        let (exact, le1, le2, superset) = neighborhood_report(&truth, &pred).unwrap();
        // Grain 1: true {2}, predicted {3}: diff 2. Grain 2: true {1,3},
        // predicted {}: diff 2. Grain 3: true {2}, predicted {1}: diff 2.
        assert_eq!(exact, 0.0);
        assert_eq!(le1, 0.0);
        assert_eq!(le2, 100.0);
        assert_eq!(superset, 0.0);
    }

    #[test]
    fn weight_error_zero_does_not_imply_accuracy_one() {
        // Swap two equal-sized regions: counts match, labels do not.
        let truth = scan_from(vec![1, 1, 2, 2], (4, 1, 1), 2);
        let pred = pred_from(vec![2, 2, 1, 1], (4, 1, 1), 2);
        assert_eq!(weight_error(&truth, &pred).unwrap(), 0.0);
        assert_eq!(accuracy(&truth, &pred).unwrap(), 0.0);
    }

    #[test]
    fn relabeling_invariance() {
        let truth = scan_from(vec![1, 1, 2, 2, 3, 3], (6, 1, 1), 3);
        let pred = pred_from(vec![1, 2, 2, 2, 3, 3], (6, 1, 1), 3);
        // Permutation (1 2 3) -> (3 1 2) applied to both.
        let perm = |v: u32| [0u32, 3, 1, 2][v as usize];
        let truth_p = scan_from(truth.labels().iter().map(|&v| perm(v)).collect(), (6, 1, 1), 3);
        let pred_p = pred_from(pred.labels().iter().map(|&v| perm(v)).collect(), (6, 1, 1), 3);
        let a = fit_report(&truth, &pred).unwrap();
        let b = fit_report(&truth_p, &pred_p).unwrap();
        assert_eq!(a.accuracy, b.accuracy);
        assert_eq!(a.weight_error, b.weight_error);
        assert!((a.centroid_error - b.centroid_error).abs() < 1e-12);
        assert!((a.covariance_error - b.covariance_error).abs() < 1e-12);
        assert_eq!(a.neighborhood_exact, b.neighborhood_exact);
    }

    #[test]
    fn dims_mismatch_is_an_error() {
        let truth = scan_from(vec![1, 2], (2, 1, 1), 2);
        let pred = pred_from(vec![1, 2, 2], (3, 1, 1), 2);
        assert!(matches!(
            accuracy(&truth, &pred),
            Err(MetricsError::DimsMismatch { .. })
        ));
    }
}
