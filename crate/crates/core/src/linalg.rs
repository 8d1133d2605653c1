//! Small dense linear-algebra helpers shared by the certificates and the
//! optimizer.

use nalgebra::{DMatrix, Matrix2};

/// Spectral norm of a 2×2 matrix from the eigenvalues of its Gram matrix.
pub fn spectral_norm2(m: &Matrix2<f64>) -> f64 {
    let g = m.transpose() * m;
    let tr = g[(0, 0)] + g[(1, 1)];
    let det = g[(0, 0)] * g[(1, 1)] - g[(0, 1)] * g[(1, 0)];
    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
    (0.5 * tr + disc).max(0.0).sqrt()
}

/// Spectral norm (largest singular value) of a general matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 2 && m.ncols() == 2 {
        return spectral_norm2(&Matrix2::from_iterator(m.iter().copied()));
    }
    m.singular_values().max()
}

/// Numerical rank with the threshold `n · σ_max · ε · 64`, where `n` is the
/// larger matrix dimension.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    let n = m.nrows().max(m.ncols()) as f64;
    let threshold = n * smax * f64::EPSILON * 64.0;
    sv.iter().filter(|&&s| s > threshold).count()
}

/// Row-major slice view of an `n × n` matrix as an nalgebra matrix.
pub fn from_row_major(n: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(n, n, data)
}

/// Solves `Mᵀ z = r` for row-major `M`, returning `None` when `M` is
/// numerically singular. Planar systems use the adjugate directly.
pub fn solve_transposed(n: usize, m: &[f64], r: &[f64]) -> Option<Vec<f64>> {
    if n == 2 {
        let det = m[0] * m[3] - m[1] * m[2];
        let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if !(det.abs() > f64::EPSILON * scale * scale) || !det.is_finite() {
            return None;
        }
        // Mᵀ = [[m0, m2], [m1, m3]], (Mᵀ)⁻¹ = adj(Mᵀ)/det.
        return Some(vec![(m[3] * r[0] - m[2] * r[1]) / det, (-m[1] * r[0] + m[0] * r[1]) / det]);
    }
    let mt = DMatrix::from_row_slice(n, n, m).transpose();
    let lu = mt.lu();
    lu.solve(&nalgebra::DVector::from_column_slice(r))
        .map(|z| z.iter().copied().collect())
}

/// Determinant of a row-major `n × n` matrix.
pub fn determinant(n: usize, m: &[f64]) -> f64 {
    match n {
        1 => m[0],
        2 => m[0] * m[3] - m[1] * m[2],
        _ => from_row_major(n, m).determinant(),
    }
}
