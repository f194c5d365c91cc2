//! Thin helpers over `faer` shared by the kernel methods.

use faer::linalg::solvers::DenseSolveCore;
use faer::{Mat, MatRef, Side};

use crate::error::{Error, Result};

/// Symmetric eigendecomposition with eigenvalues sorted in decreasing order.
///
/// Column `j` of the returned matrix is the unit eigenvector for `values[j]`.
pub fn sym_eigen_desc(a: MatRef<'_, f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    if a.nrows() != a.ncols() {
        return Err(Error::invalid("eigendecomposition needs a square matrix"));
    }
    let n = a.nrows();
    if n == 0 {
        return Ok((Vec::new(), Mat::zeros(0, 0)));
    }
    // Symmetrize so tiny asymmetries from floating point products do not
    // leak into the solver.
    let sym = Mat::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    if sym.col_iter().any(|c| c.iter().any(|v| !v.is_finite())) {
        return Err(Error::numerical("non-finite entry in symmetric matrix"));
    }
    let evd = sym
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::numerical(format!("eigendecomposition failed: {e:?}")))?;
    let s = evd.S().column_vector();
    let u = evd.U();
    let values: Vec<f64> = (0..n).rev().map(|i| s[i]).collect();
    let vectors = Mat::from_fn(n, n, |i, j| u[(i, n - 1 - j)]);
    Ok((values, vectors))
}

/// Orthonormal basis of the leading eigenvectors of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    pub basis: Mat<f64>,
    pub eigenvalues: Vec<f64>,
}

impl SpectralBasis {
    /// Keeps eigenvectors whose eigenvalue passes `λ ≥ mu·λ_max`
    /// (`λ > mu·λ_max` when `strict`). Fails if `λ_max ≤ 0`.
    pub fn filtered(a: MatRef<'_, f64>, mu: f64, strict: bool) -> Result<Self> {
        let (values, vectors) = sym_eigen_desc(a)?;
        let lambda_max = values.first().copied().unwrap_or(0.0);
        if !(lambda_max > 0.0) {
            return Err(Error::numerical("degenerate kernel: largest eigenvalue is not positive"));
        }
        let cut = mu * lambda_max;
        let keep = values
            .iter()
            .take_while(|&&v| if strict { v > cut } else { v >= cut })
            .count();
        Ok(Self::from_parts(&values, &vectors, keep))
    }

    pub(crate) fn from_parts(values: &[f64], vectors: &Mat<f64>, keep: usize) -> Self {
        let n = vectors.nrows();
        SpectralBasis {
            basis: Mat::from_fn(n, keep, |i, j| vectors[(i, j)]),
            eigenvalues: values[..keep].to_vec(),
        }
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    /// `P y` with `P = B Bᵀ`.
    pub fn project(&self, y: &[f64]) -> Vec<f64> {
        let coeffs = mat_t_vec(self.basis.as_ref(), y);
        mat_vec(self.basis.as_ref(), &coeffs)
    }

    /// Dense projector `B Bᵀ`.
    pub fn matrix(&self) -> Mat<f64> {
        &self.basis * self.basis.transpose()
    }
}

pub fn mat_vec(a: MatRef<'_, f64>, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.ncols(), x.len());
    let mut out = vec![0.0; a.nrows()];
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        for (o, v) in out.iter_mut().zip(a.col(j).iter()) {
            *o += v * xj;
        }
    }
    out
}

pub fn mat_t_vec(a: MatRef<'_, f64>, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.nrows(), x.len());
    (0..a.ncols()).map(|j| dot(a.col(j).iter().copied(), x)).collect()
}

pub fn dot(a: impl IntoIterator<Item = f64>, b: &[f64]) -> f64 {
    a.into_iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sum_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

pub fn residual_ss(y: &[f64], fitted: &[f64]) -> f64 {
    y.iter().zip(fitted).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Least-squares fitted values `A (AᵀA)⁺ Aᵀ y` computed from a thin SVD.
///
/// Rank deficiency is handled by dropping singular directions below
/// `rcond · σ_max`, so the result is the orthogonal projection of `y` onto
/// the column span of `A`. Returns the fitted values and the numerical rank.
pub fn lstsq_fitted(a: MatRef<'_, f64>, y: &[f64], rcond: f64) -> Result<(Vec<f64>, usize)> {
    if a.nrows() != y.len() {
        return Err(Error::invalid("design rows do not match response length"));
    }
    if a.ncols() == 0 {
        return Ok((vec![0.0; y.len()], 0));
    }
    let svd = a
        .thin_svd()
        .map_err(|e| Error::numerical(format!("svd failed: {e:?}")))?;
    let s = svd.S().column_vector();
    let u = svd.U();
    let smax = (0..s.nrows()).map(|i| s[i]).fold(0.0_f64, f64::max);
    let mut fitted = vec![0.0; y.len()];
    let mut rank = 0;
    for j in 0..s.nrows() {
        if s[j] > rcond * smax && s[j] > 0.0 {
            rank += 1;
            let c = dot(u.col(j).iter().copied(), y);
            for (f, v) in fitted.iter_mut().zip(u.col(j).iter()) {
                *f += c * v;
            }
        }
    }
    Ok((fitted, rank))
}

/// Inverse square root of a symmetric PSD matrix through its eigendecomposition.
/// Eigenvalues below `floor_rel · λ_max` are treated as zero (pseudo-inverse).
pub fn inv_sqrt_psd(a: MatRef<'_, f64>, floor_rel: f64) -> Result<Mat<f64>> {
    let (values, vectors) = sym_eigen_desc(a)?;
    let lambda_max = values.first().copied().unwrap_or(0.0);
    if !(lambda_max > 0.0) || !lambda_max.is_finite() {
        return Err(Error::numerical("matrix is not positive definite"));
    }
    let n = a.nrows();
    let scale: Vec<f64> = values
        .iter()
        .map(|&v| if v > floor_rel * lambda_max { 1.0 / v.sqrt() } else { 0.0 })
        .collect();
    let scaled = Mat::from_fn(n, n, |i, j| vectors[(i, j)] * scale[j]);
    Ok(&scaled * vectors.transpose())
}

/// Cholesky inverse of an SPD matrix; `None` if the factorization fails.
pub fn spd_inverse(a: MatRef<'_, f64>) -> Option<Mat<f64>> {
    a.llt(Side::Lower).ok().map(|llt| llt.inverse())
}

/// Builds a matrix whose rows are the given slices.
pub fn from_rows(rows: &[Vec<f64>]) -> Mat<f64> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    Mat::from_fn(n, d, |i, j| rows[i][j])
}

pub fn row_vec(a: MatRef<'_, f64>, i: usize) -> Vec<f64> {
    (0..a.ncols()).map(|j| a[(i, j)]).collect()
}

pub fn col_vec(a: MatRef<'_, f64>, j: usize) -> Vec<f64> {
    a.col(j).iter().copied().collect()
}

/// Squared Euclidean distance between row `i` of `a` and row `j` of `b`.
#[inline]
pub fn row_sq_dist(a: MatRef<'_, f64>, i: usize, b: MatRef<'_, f64>, j: usize) -> f64 {
    let mut d = 0.0;
    for c in 0..a.ncols() {
        let t = a[(i, c)] - b[(j, c)];
        d += t * t;
    }
    d
}

pub fn frobenius(a: MatRef<'_, f64>) -> f64 {
    a.norm_l2()
}

/// Frobenius norm of `a - b`.
pub fn frobenius_diff(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> f64 {
    (a - b).norm_l2()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_sorted_descending() {
        let a = faer::mat![[2.0, 1.0], [1.0, 2.0]];
        let (vals, vecs) = sym_eigen_desc(a.as_ref()).unwrap();
        assert!((vals[0] - 3.0).abs() < 1e-12);
        assert!((vals[1] - 1.0).abs() < 1e-12);
        let v = col_vec(vecs.as_ref(), 0);
        assert!((v[0].abs() - v[1].abs()).abs() < 1e-12);
    }

    #[test]
    fn lstsq_handles_rank_deficiency() {
        // Two identical columns: projection onto their span.
        let a = faer::mat![[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]];
        let y = [1.0, 0.0, 1.0];
        let (fit, rank) = lstsq_fitted(a.as_ref(), &y, 1e-10).unwrap();
        assert_eq!(rank, 1);
        let c = 4.0 / 14.0;
        for (f, x) in fit.iter().zip([1.0, 2.0, 3.0]) {
            assert!((f - c * x).abs() < 1e-12);
        }
    }

    #[test]
    fn inv_sqrt_squares_to_inverse() {
        let a = faer::mat![[4.0, 1.0], [1.0, 3.0]];
        let r = inv_sqrt_psd(a.as_ref(), 1e-12).unwrap();
        let prod = &(&r * &r) * &a;
        let eye = Mat::<f64>::identity(2, 2);
        assert!(frobenius_diff(prod.as_ref(), eye.as_ref()) < 1e-12);
    }
}
