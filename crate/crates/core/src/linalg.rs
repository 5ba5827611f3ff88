//! Dense linear-algebra helpers shared by the tabular and LQR code.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative singular-value cutoff for pseudo-inverses.
pub const PINV_RELATIVE_CUTOFF: f64 = 1e-10;

/// Solves `m x = b` by partial-pivot LU and rejects the answer when the
/// residual is not small relative to the problem scale.
pub fn solve_checked(m: &DMatrix<f64>, b: &DVector<f64>, context: &'static str) -> Result<DVector<f64>> {
    let x = m
        .clone()
        .lu()
        .solve(b)
        .ok_or(Error::SingularSystem { context })?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem { context });
    }
    let residual = (m * &x - b).amax();
    let scale = 1.0 + m.amax() * x.amax() + b.amax();
    if residual > 1e-9 * scale {
        return Err(Error::SingularSystem { context });
    }
    Ok(x)
}

/// Moore-Penrose pseudo-inverse; singular values below
/// `PINV_RELATIVE_CUTOFF * sigma_max` are treated as zero.
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    if sigma_max <= 0.0 {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    let cut = PINV_RELATIVE_CUTOFF * sigma_max;
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let inv_sigma = DMatrix::from_diagonal(&svd.singular_values.map(|s| if s > cut { 1.0 / s } else { 0.0 }));
    v_t.transpose() * inv_sigma * u.transpose()
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Angle in degrees between two vectors, clamped against rounding.
pub fn angle_degrees(a: &[f64], b: &[f64]) -> f64 {
    cosine(a, b).clamp(-1.0, 1.0).acos().to_degrees()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinv_of_rank_one_projector() {
        let m = DMatrix::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25]);
        let p = pinv(&m);
        // m p m = m
        assert!((&m * &p * &m - &m).amax() < 1e-14);
        assert!((p[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn singular_system_is_reported() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 0.0]);
        assert!(matches!(solve_checked(&m, &b, "test"), Err(Error::SingularSystem { .. })));
    }

    #[test]
    fn spectral_radius_of_triangular() {
        let m = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.0, 1.1]);
        assert!((spectral_radius(&m) - 1.1).abs() < 1e-12);
    }
}
