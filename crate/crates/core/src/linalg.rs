//! Least squares and small dense symmetric solves.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::reduce::chunked_reduce;

/// Smallest accepted eigenvalue ratio of the equilibrated Gram matrix.
const RANK_TOL: f64 = 1e-12;

/// Row-major design matrix.
#[derive(Debug, Clone)]
pub struct Design {
    data: Vec<f64>,
    ncol: usize,
}

impl Design {
    pub fn with_capacity(nrow: usize, ncol: usize) -> Self {
        Self { data: Vec::with_capacity(nrow * ncol), ncol }
    }

    /// Builds a design by evaluating `row_fn` into a fresh row for each unit.
    pub fn from_fn<F: FnMut(usize, &mut Vec<f64>)>(nrow: usize, ncol: usize, mut row_fn: F) -> Self {
        let mut d = Self::with_capacity(nrow, ncol);
        for i in 0..nrow {
            let before = d.data.len();
            row_fn(i, &mut d.data);
            debug_assert_eq!(d.data.len() - before, ncol);
        }
        d
    }

    pub fn nrow(&self) -> usize {
        self.data.len() / self.ncol.max(1)
    }

    pub fn ncol(&self) -> usize {
        self.ncol
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncol..(i + 1) * self.ncol]
    }

    pub fn predict(&self, coef: &[f64]) -> Vec<f64> {
        (0..self.nrow()).map(|i| crate::model::dot(self.row(i), coef)).collect()
    }

    /// `(X'WX, X'Wy)` accumulated in fixed chunks.
    fn gram(&self, y: &[f64], w: Option<&[f64]>) -> (DMatrix<f64>, DVector<f64>) {
        let k = self.ncol;
        let (xtx, xty) = chunked_reduce(
            self.nrow(),
            |range| {
                let m = range.len();
                let mut xc = DMatrix::<f64>::zeros(m, k);
                let mut xw = DMatrix::<f64>::zeros(m, k);
                let mut yc = DVector::<f64>::zeros(m);
                for (r, i) in range.enumerate() {
                    let wi = w.map_or(1.0, |w| w[i]);
                    for (c, &x) in self.row(i).iter().enumerate() {
                        xc[(r, c)] = x;
                        xw[(r, c)] = x * wi;
                    }
                    yc[r] = y[i];
                }
                // Explicit transpose routes through the blocked matrix product.
                let xwt = xw.transpose();
                (&xwt * &xc, &xwt * &yc)
            },
            |(a, b), (c, d)| (a + c, b + d),
        )
        .unwrap_or_else(|| (DMatrix::zeros(k, k), DVector::zeros(k)));
        (xtx, xty)
    }
}

#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coef: Vec<f64>,
    pub residuals: Vec<f64>,
    /// `(X'WX)^{-1}`, useful for classical standard errors.
    pub xtx_inv: DMatrix<f64>,
}

/// Ordinary (or weighted, when `weights` is given) least squares.
///
/// `what` names the regression in collinearity errors.
pub fn least_squares(x: &Design, y: &[f64], weights: Option<&[f64]>, what: &str) -> Result<OlsFit> {
    let n = x.nrow();
    if y.len() != n {
        return Err(Error::InvalidArgument("response length does not match design".into()));
    }
    if n < x.ncol() {
        return Err(Error::Collinear(format!("{what}: fewer rows than columns")));
    }
    let (xtx, xty) = x.gram(y, weights);
    let xtx_inv = solve_spd(&xtx, what)?;
    let coef = &xtx_inv * &xty;
    let coef: Vec<f64> = coef.iter().copied().collect();
    let residuals = (0..n).map(|i| y[i] - crate::model::dot(x.row(i), &coef)).collect();
    Ok(OlsFit { coef, residuals, xtx_inv })
}

/// Inverse of a symmetric positive definite Gram matrix, with an explicit
/// rank check on the equilibrated matrix.
pub(crate) fn solve_spd(xtx: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let k = xtx.nrows();
    let d: Vec<f64> = (0..k).map(|j| xtx[(j, j)]).collect();
    if d.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Collinear(format!("{what}: zero column")));
    }
    let s: Vec<f64> = d.iter().map(|v| 1.0 / v.sqrt()).collect();
    let scaled = DMatrix::from_fn(k, k, |i, j| xtx[(i, j)] * s[i] * s[j]);
    let eig = SymmetricEigen::new(scaled.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min > RANK_TOL * max) {
        return Err(Error::Collinear(what.to_string()));
    }
    let inv = scaled
        .cholesky()
        .ok_or_else(|| Error::Collinear(what.to_string()))?
        .inverse();
    Ok(DMatrix::from_fn(k, k, |i, j| inv[(i, j)] * s[i] * s[j]))
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::DiagnosticUnavailable("matrix is not square".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::DiagnosticUnavailable("non-finite matrix entries".into()));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym
        .try_symmetric_eigen(f64::EPSILON, 10_000)
        .ok_or_else(|| Error::DiagnosticUnavailable("eigen-decomposition did not converge".into()))?;
    let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Solves `m x = b` for a general square matrix via LU; `None` when singular
/// or badly conditioned.
pub(crate) fn solve_general(m: &DMatrix<f64>, b: &[f64]) -> Option<Vec<f64>> {
    let k = m.nrows();
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if !(scale > 0.0) || !scale.is_finite() {
        return None;
    }
    let lu = m.clone().lu();
    let x = lu.solve(&DVector::from_column_slice(b))?;
    if x.iter().any(|v| !v.is_finite()) {
        return None;
    }
    // Reject near-singular systems by the reciprocal pivot ratio.
    let u = lu.u();
    let piv: Vec<f64> = (0..k).map(|i| u[(i, i)].abs()).collect();
    let pmax = piv.iter().cloned().fold(0.0, f64::max);
    let pmin = piv.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(pmin > 1e-13 * pmax) {
        return None;
    }
    Some(x.iter().copied().collect())
}

/// Inverse of a symmetric matrix via its eigen-decomposition; `None` when
/// any eigenvalue is negligible relative to the largest.
pub(crate) fn symmetric_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.try_symmetric_eigen(f64::EPSILON, 10_000)?;
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if eig.eigenvalues.iter().any(|v| !(v.abs() > 1e-13 * max)) {
        return None;
    }
    let inv_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v));
    Some(&eig.eigenvectors * inv_diag * eig.eigenvectors.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exact_fit_recovers_coefficients() {
        let x = Design::from_fn(50, 3, |i, row| {
            let t = i as f64;
            row.extend_from_slice(&[1.0, t, (t * 0.3).sin()]);
        });
        let y: Vec<f64> = (0..50).map(|i| 2.0 - 0.5 * i as f64 + 3.0 * (i as f64 * 0.3).sin()).collect();
        let fit = least_squares(&x, &y, None, "test").unwrap();
        assert_relative_eq!(fit.coef[0], 2.0, epsilon = 1e-10);
        assert_relative_eq!(fit.coef[1], -0.5, epsilon = 1e-10);
        assert_relative_eq!(fit.coef[2], 3.0, epsilon = 1e-10);
        assert!(fit.residuals.iter().all(|r| r.abs() < 1e-10));
    }

    #[test]
    fn duplicated_column_is_rejected() {
        let x = Design::from_fn(3, 3, |i, row| {
            let t = i as f64;
            row.extend_from_slice(&[1.0, t, t]);
        });
        let err = least_squares(&x, &[1.0, 2.0, 3.0], None, "dup").unwrap_err();
        assert_eq!(err, Error::Collinear("dup".into()));
    }

    #[test]
    fn weighted_matches_scaled_rows() {
        let x = Design::from_fn(20, 2, |i, row| row.extend_from_slice(&[1.0, i as f64]));
        let y: Vec<f64> = (0..20).map(|i| ((i * 7 % 5) as f64) - 1.0).collect();
        let w: Vec<f64> = (0..20).map(|i| 1.0 + (i % 3) as f64).collect();
        let fit = least_squares(&x, &y, Some(&w), "w").unwrap();
        let xs = Design::from_fn(20, 2, |i, row| {
            let s = w[i].sqrt();
            row.extend_from_slice(&[s, s * i as f64]);
        });
        let ys: Vec<f64> = (0..20).map(|i| y[i] * w[i].sqrt()).collect();
        let fit2 = least_squares(&xs, &ys, None, "s").unwrap();
        assert_relative_eq!(fit.coef[0], fit2.coef[0], epsilon = 1e-12);
        assert_relative_eq!(fit.coef[1], fit2.coef[1], epsilon = 1e-12);
    }

    #[test]
    fn eigenvalues_sorted() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let e = symmetric_eigenvalues(&m).unwrap();
        assert_relative_eq!(e[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(e[1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn inverse_and_solve() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let inv = symmetric_inverse(&m).unwrap();
        let id = &m * inv;
        assert_relative_eq!(id[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(id[(0, 1)], 0.0, epsilon = 1e-12);
        let x = solve_general(&m, &[1.0, 2.0]).unwrap();
        assert_relative_eq!(4.0 * x[0] + x[1], 1.0, epsilon = 1e-12);
        assert!(solve_general(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]), &[1.0, 1.0]).is_none());
    }
}
