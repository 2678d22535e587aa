//! Small fixed-size linear algebra helpers shared across the crate.

use nalgebra::{Matrix3, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Quadratic form `(x - s)^T A (x - s)`.
#[inline]
pub fn quad_form(a: &Mat3, s: &Vec3, x: &Vec3) -> f64 {
    let d = x - s;
    (a * d).dot(&d)
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(a: &Mat3) -> [f64; 3] {
    let mut ev: Vec<f64> = a.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    [ev[0], ev[1], ev[2]]
}

/// Spectral norm of a symmetric matrix (largest absolute eigenvalue).
pub fn sym_spectral_norm(a: &Mat3) -> f64 {
    let ev = sym_eigenvalues(a);
    ev[0].abs().max(ev[2].abs())
}

/// Whether `a` is symmetric positive definite, with relative tolerances:
/// symmetry to `1e-12 * |a|`, and smallest eigenvalue above `1e-12 * |a|`.
pub fn is_spd(a: &Mat3) -> bool {
    let scale = sym_spectral_norm(&symmetrize(a));
    if !scale.is_finite() || scale == 0.0 {
        return false;
    }
    let tol = 1e-12 * scale;
    for i in 0..3 {
        for j in (i + 1)..3 {
            if (a[(i, j)] - a[(j, i)]).abs() > tol {
                return false;
            }
        }
    }
    sym_eigenvalues(&symmetrize(a))[0] > tol
}

#[inline]
pub fn symmetrize(a: &Mat3) -> Mat3 {
    0.5 * (a + a.transpose())
}

/// Inverse of an SPD matrix via its eigendecomposition, optionally adding
/// `ridge` to every eigenvalue first. The result is symmetric by
/// construction.
pub fn spd_inverse_ridged(a: &Mat3, ridge: f64) -> Mat3 {
    let se = symmetrize(a).symmetric_eigen();
    let mut inv = Mat3::zeros();
    for i in 0..3 {
        let lam = se.eigenvalues[i] + ridge;
        let q = se.eigenvectors.column(i);
        inv += (q * q.transpose()) / lam;
    }
    symmetrize(&inv)
}

/// `A^{-1/2}` for SPD `A`, via eigendecomposition.
pub fn spd_inv_sqrt(a: &Mat3) -> Mat3 {
    let se = symmetrize(a).symmetric_eigen();
    let mut out = Mat3::zeros();
    for i in 0..3 {
        let lam = se.eigenvalues[i].max(f64::MIN_POSITIVE);
        let q = se.eigenvectors.column(i);
        out += (q * q.transpose()) / lam.sqrt();
    }
    symmetrize(&out)
}

/// Row-major flattening used by on-disk formats.
pub fn mat3_to_row_major(a: &Mat3) -> [f64; 9] {
    let mut out = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            out[3 * r + c] = a[(r, c)];
        }
    }
    out
}

pub fn mat3_from_row_major(v: &[f64; 9]) -> Mat3 {
    Mat3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quad_form_is_squared_ellipsoidal_norm() {
        let a = Mat3::new(4.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        let s = Vec3::zeros();
        assert_eq!(quad_form(&a, &s, &Vec3::new(1.0, 0.0, 0.0)), 4.0);
        assert_eq!(quad_form(&a, &s, &Vec3::new(0.0, 2.0, 2.0)), 8.0);
    }

    #[test]
    fn spd_checks() {
        assert!(is_spd(&Mat3::identity()));
        assert!(!is_spd(&Mat3::zeros()));
        let indefinite = Mat3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(!is_spd(&indefinite));
        let asym = Mat3::new(1.0, 0.5, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(!is_spd(&asym));
    }

    #[test]
    fn inv_sqrt_squares_back() {
        let a = Mat3::new(4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0);
        let m = spd_inv_sqrt(&a);
        let ainv = m * m;
        let prod = a * ainv;
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((prod[(i, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn row_major_round_trip() {
        let a = Mat3::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0);
        assert_eq!(mat3_from_row_major(&mat3_to_row_major(&a)), a);
    }
}
