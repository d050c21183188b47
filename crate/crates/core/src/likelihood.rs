//! Conditional normal log-likelihood with analytic score, a finite-difference
//! Hessian, the weak-identification diagnostic and a variance test.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::linalg::{least_squares, symmetric_eigenvalues, Design};
use crate::model::{baseline_mean, sigma2_at, Dataset, Theta};
use crate::reduce::{chunked_reduce, sum_rows, sum_vec_rows};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Guideline below which the CMLE should not be trusted.
pub const KAPPA_WARN_THRESHOLD: f64 = 10.0;

/// Value, score and Hessian at one parameter point.
#[derive(Debug, Clone)]
pub struct LikelihoodEval {
    pub value: f64,
    pub score: Vec<f64>,
    pub hessian: DMatrix<f64>,
}

impl LikelihoodEval {
    pub fn at(theta: &Theta, data: &Dataset) -> Result<Self> {
        Ok(Self {
            value: loglik(theta, data)?,
            score: score(theta, data)?,
            hessian: hessian(theta, data)?,
        })
    }
}

/// Weak-identification diagnostic at an estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kappa {
    /// Smallest eigenvalue of the information (negative Hessian) divided by `k`.
    pub kappa: f64,
    pub k: usize,
    /// Smallest eigenvalue of the negative Hessian.
    pub min_eigenvalue: f64,
    /// True when `kappa` falls below [`KAPPA_WARN_THRESHOLD`].
    pub warning: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub kappa_hat: f64,
    pub k: usize,
    pub min_eigenvalue: f64,
    pub het_test_stat: f64,
    pub het_test_pvalue: f64,
}

fn check_dims(theta: &Theta, data: &Dataset) -> Result<()> {
    if theta.p() != data.p() || theta.etaz.len() != data.p() {
        return Err(Error::InvalidArgument(format!(
            "parameter dimension {} does not match data dimension {}",
            theta.p(),
            data.p()
        )));
    }
    Ok(())
}

/// Sum over observations of the normal log density, including the
/// `-n/2 log(2 pi)` constant.
pub fn loglik(theta: &Theta, data: &Dataset) -> Result<f64> {
    check_dims(theta, data)?;
    let v = sum_vec_rows(data.n(), 1, |i, acc| {
        let z = data.z_row(i);
        let s2 = sigma2_at(theta.eta0, &theta.etaz, z, i)?;
        let a = data.a()[i];
        let r = data.y()[i] - (theta.beta * a + theta.gamma * a * s2 + baseline_mean(theta, z));
        acc[0] += -HALF_LN_2PI - 0.5 * s2.ln() - r * r / (2.0 * s2);
        Ok::<(), Error>(())
    })?;
    Ok(v[0])
}

/// Analytic gradient of [`loglik`] in canonical parameter order.
pub fn score(theta: &Theta, data: &Dataset) -> Result<Vec<f64>> {
    check_dims(theta, data)?;
    let p = data.p();
    let k = theta.k();
    let e0 = Theta::eta0_index(p);
    sum_vec_rows(data.n(), k, |i, g| {
        let z = data.z_row(i);
        let s2 = sigma2_at(theta.eta0, &theta.etaz, z, i)?;
        let a = data.a()[i];
        let r = data.y()[i] - (theta.beta * a + theta.gamma * a * s2 + baseline_mean(theta, z));
        let r_v = r / s2;
        let c = -0.5 + r * r_v * 0.5 + r * theta.gamma * a;
        g[0] += r_v * a;
        g[1] += r * a;
        g[2] += r_v;
        g[e0] += c;
        for (j, &zj) in z.iter().enumerate() {
            g[3 + j] += r_v * zj;
            g[e0 + 1 + j] += c * zj;
        }
        Ok::<(), Error>(())
    })
}

fn fd_step(x: f64) -> f64 {
    (1e-7 * x.abs()).max(1e-6)
}

/// Per-observation score weights `(r/v, r, -1/2 + r^2/(2v) + r gamma a)`
/// given the linear mean part, the log variance and `gamma`.
#[inline]
fn score_weights(y: f64, a: f64, lin: f64, log_v: f64, gamma: f64, row: usize) -> Result<[f64; 3]> {
    if log_v > crate::model::MAX_LOG_VARIANCE || log_v.is_nan() {
        return Err(Error::VarianceOverflow { row });
    }
    Ok(weights_at(y, a, lin, log_v.exp(), gamma))
}

#[inline]
fn weights_at(y: f64, a: f64, lin: f64, v: f64, gamma: f64) -> [f64; 3] {
    let r = y - (lin + gamma * a * v);
    let r_v = r / v;
    [r_v, r, -0.5 + 0.5 * r * r_v + r * gamma * a]
}

/// Central differences of the analytic score, before symmetrization.
///
/// Every score component is one of three per-observation weights times a
/// design term (`a`, `1` or `z_j`), so each column of differences is
/// computed from the perturbed weights and then contracted with the design
/// in a single pass over the data.
pub fn hessian_unsymmetrized(theta: &Theta, data: &Dataset) -> Result<DMatrix<f64>> {
    check_dims(theta, data)?;
    let p = data.p();
    let base = theta.to_vec();
    let k = base.len();
    let e0 = Theta::eta0_index(p);
    let steps: Vec<f64> = base.iter().map(|&b| fd_step(b)).collect();
    let denom: Vec<f64> = base.iter().zip(&steps).map(|(&b, &s)| (b + s) - (b - s)).collect();

    let chunk = |range: std::ops::Range<usize>| -> Result<DMatrix<f64>> {
        let m = range.len();
        // Design terms, one column per observation: mean block (a, 1, z) and
        // variance block (1, z). Differences are stored the same way.
        let mut xm = DMatrix::<f64>::zeros(p + 2, m);
        let mut xv = DMatrix::<f64>::zeros(p + 1, m);
        let mut d = [DMatrix::<f64>::zeros(k, m), DMatrix::<f64>::zeros(k, m), DMatrix::<f64>::zeros(k, m)];
        for (r, i) in range.enumerate() {
            let z = data.z_row(i);
            let a = data.a()[i];
            let y = data.y()[i];
            xm[(0, r)] = a;
            xm[(1, r)] = 1.0;
            xv[(0, r)] = 1.0;
            for (j, &zj) in z.iter().enumerate() {
                xm[(2 + j, r)] = zj;
                xv[(1 + j, r)] = zj;
            }
            let lin = theta.beta * a + baseline_mean(theta, z);
            let log_v = theta.eta0 + crate::model::dot(&theta.etaz, z);
            if log_v > crate::model::MAX_LOG_VARIANCE || log_v.is_nan() {
                return Err(Error::VarianceOverflow { row: i });
            }
            let v = log_v.exp();
            for j in 0..k {
                let s = steps[j];
                let (up, down) = if j == 1 {
                    (weights_at(y, a, lin, v, base[1] + s), weights_at(y, a, lin, v, base[1] - s))
                } else if j < e0 {
                    let x = match j {
                        0 => a,
                        2 => 1.0,
                        _ => z[j - 3],
                    };
                    let coef = |t: f64| lin + (t - base[j]) * x;
                    (
                        weights_at(y, a, coef(base[j] + s), v, theta.gamma),
                        weights_at(y, a, coef(base[j] - s), v, theta.gamma),
                    )
                } else {
                    let x = if j == e0 { 1.0 } else { z[j - e0 - 1] };
                    let coef = |t: f64| log_v + (t - base[j]) * x;
                    (
                        score_weights(y, a, lin, coef(base[j] + s), theta.gamma, i)?,
                        score_weights(y, a, lin, coef(base[j] - s), theta.gamma, i)?,
                    )
                };
                for c in 0..3 {
                    d[c][(j, r)] = (up[c] - down[c]) / denom[j];
                }
            }
        }
        let mean_rows = &xm * d[0].transpose();
        let gamma_row = xm.row(0) * d[1].transpose();
        let var_rows = &xv * d[2].transpose();
        let mut h = DMatrix::zeros(k, k);
        h.row_mut(0).copy_from(&mean_rows.row(0));
        h.row_mut(1).copy_from(&gamma_row.row(0));
        for q in 1..p + 2 {
            h.row_mut(1 + q).copy_from(&mean_rows.row(q));
        }
        for q in 0..p + 1 {
            h.row_mut(e0 + q).copy_from(&var_rows.row(q));
        }
        Ok(h)
    };
    chunked_reduce(data.n(), chunk, |a, b| match (a, b) {
        (Ok(a), Ok(b)) => Ok(a + b),
        (Err(e), _) | (_, Err(e)) => Err(e),
    })
    .unwrap_or_else(|| Ok(DMatrix::zeros(k, k)))
}

/// Second derivative of [`loglik`], symmetrized as `(H + H')/2`.
pub fn hessian(theta: &Theta, data: &Dataset) -> Result<DMatrix<f64>> {
    let h = hessian_unsymmetrized(theta, data)?;
    Ok((&h + h.transpose()) * 0.5)
}

/// `lambda_min(-H) / k`, with a warning flag when below the guideline.
pub fn kappa_hat(hessian_at_estimate: &DMatrix<f64>, k: usize) -> Result<Kappa> {
    if k == 0 {
        return Err(Error::DiagnosticUnavailable("k must be positive".into()));
    }
    let neg = -hessian_at_estimate;
    let eig = symmetric_eigenvalues(&neg)?;
    let min_eigenvalue = eig[0];
    let kappa = min_eigenvalue / k as f64;
    Ok(Kappa { kappa, k, min_eigenvalue, warning: !(kappa >= KAPPA_WARN_THRESHOLD) })
}

/// Score-type test for outcome heteroscedasticity in the instruments.
///
/// Squared stage-1 residuals are regressed on `(1, Z)`; the statistic is
/// `n R^2`, referred to a chi-square with `p` degrees of freedom.
pub fn het_test(data: &Dataset) -> Result<(f64, f64)> {
    let n = data.n();
    let p = data.p();
    if n <= 2 * p + 4 {
        return Err(Error::InsufficientData(format!("need more than {} rows, got {n}", 2 * p + 4)));
    }
    let stage1 = crate::estimators::stage1_fit(data)?;
    let e2: Vec<f64> = stage1.residuals.iter().map(|r| r * r).collect();
    let x = Design::from_fn(n, p + 1, |i, row| {
        row.push(1.0);
        row.extend_from_slice(data.z_row(i));
    });
    let fit = least_squares(&x, &e2, None, "instruments collinear")?;
    let mean = sum_rows(n, |i| e2[i]) / n as f64;
    let tss = sum_rows(n, |i| (e2[i] - mean).powi(2));
    let rss = sum_rows(n, |i| fit.residuals[i].powi(2));
    // Residuals that are numerically zero everywhere carry no variance signal.
    let scale = sum_rows(n, |i| data.y()[i].powi(2)).max(1.0);
    let r2 = if tss <= 1e-24 * scale * scale { 0.0 } else { (1.0 - rss / tss).clamp(0.0, 1.0) };
    let stat = n as f64 * r2;
    let chi = ChiSquared::new(p as f64).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let pvalue = if stat == 0.0 { 1.0 } else { chi.sf(stat) };
    Ok((stat, pvalue))
}
