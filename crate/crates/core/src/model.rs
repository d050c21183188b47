//! The location-scale outcome model shared by every estimator.
//!
//! Given instruments `z`, the outcome variance is log-linear,
//! `sigma2(z) = exp(eta0 + eta_z . z)`, and the outcome mean is
//! `mu(a, z) = beta*a + gamma*a*sigma2(z) + theta0 + theta_z . z`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest exponent accepted by the variance link before reporting overflow.
pub const MAX_LOG_VARIANCE: f64 = 700.0;

/// Observed outcome, treatment and instruments for `n` units.
///
/// Instruments are stored row-major so that per-observation work touches
/// contiguous memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    a: Vec<f64>,
    z: Vec<f64>,
    p: usize,
    centered: bool,
}

impl Dataset {
    /// Builds a dataset from an outcome vector, a treatment vector and a
    /// row-major `n x p` instrument buffer.
    pub fn new(y: Vec<f64>, a: Vec<f64>, z: Vec<f64>, p: usize) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::InvalidData("empty dataset".into()));
        }
        if a.len() != n {
            return Err(Error::InvalidData(format!(
                "treatment has length {} but outcome has length {n}",
                a.len()
            )));
        }
        if p == 0 {
            return Err(Error::InvalidData("at least one instrument is required".into()));
        }
        if z.len() != n * p {
            return Err(Error::InvalidData(format!(
                "instrument buffer has {} values, expected {n} x {p}",
                z.len()
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite outcome at row {i}")));
        }
        if let Some(i) = a.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite treatment at row {i}")));
        }
        if let Some(idx) = z.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite instrument at row {} column {}",
                idx / p,
                idx % p
            )));
        }
        for j in 0..p {
            let first = z[j];
            if (1..n).all(|i| z[i * p + j] == first) {
                return Err(Error::InvalidData(format!("instrument column {j} is constant")));
            }
        }
        Ok(Self { y, a, z, p, centered: false })
    }

    /// Convenience constructor from instrument rows.
    pub fn from_rows(y: Vec<f64>, a: Vec<f64>, z_rows: &[Vec<f64>]) -> Result<Self> {
        let p = z_rows.first().map_or(0, Vec::len);
        if z_rows.iter().any(|r| r.len() != p) {
            return Err(Error::InvalidData("ragged instrument rows".into()));
        }
        Self::new(y, a, z_rows.concat(), p)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    /// Row-major instrument buffer.
    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn z_row(&self, i: usize) -> &[f64] {
        &self.z[i * self.p..(i + 1) * self.p]
    }

    pub fn z_column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.z.iter().skip(j).step_by(self.p).copied()
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    /// Same treatment and instruments with a new outcome vector.
    pub fn with_outcome(&self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.n() {
            return Err(Error::InvalidData("outcome length mismatch".into()));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite outcome at row {i}")));
        }
        Ok(Self { y, ..self.clone() })
    }

    /// Rows selected by `idx` (with repetition), as used by the bootstrap.
    /// Returns an error when a resample leaves an instrument column constant.
    pub fn resample(&self, idx: &[usize]) -> Result<Self> {
        let y = idx.iter().map(|&i| self.y[i]).collect();
        let a = idx.iter().map(|&i| self.a[i]).collect();
        let mut z = Vec::with_capacity(idx.len() * self.p);
        for &i in idx {
            z.extend_from_slice(self.z_row(i));
        }
        let mut out = Self::new(y, a, z, self.p)?;
        out.centered = false;
        Ok(out)
    }

    /// Keeps only the instrument columns listed in `cols`, in that order.
    pub fn select_instruments(&self, cols: &[usize]) -> Result<Self> {
        if cols.iter().any(|&j| j >= self.p) {
            return Err(Error::InvalidData("instrument index out of range".into()));
        }
        let mut z = Vec::with_capacity(self.n() * cols.len());
        for i in 0..self.n() {
            let row = self.z_row(i);
            z.extend(cols.iter().map(|&j| row[j]));
        }
        let mut out = Self::new(self.y.clone(), self.a.clone(), z, cols.len())?;
        out.centered = self.centered;
        Ok(out)
    }
}

/// Full parameter vector of the normal location-scale model.
///
/// The canonical flattened order is
/// `(beta, gamma, theta0, theta_z[..p], eta0, eta_z[..p])`, length `4 + 2p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub beta: f64,
    pub gamma: f64,
    pub theta0: f64,
    pub thetaz: Vec<f64>,
    pub eta0: f64,
    pub etaz: Vec<f64>,
}

impl Theta {
    pub fn zeros(p: usize) -> Self {
        Self {
            beta: 0.0,
            gamma: 0.0,
            theta0: 0.0,
            thetaz: vec![0.0; p],
            eta0: 0.0,
            etaz: vec![0.0; p],
        }
    }

    pub fn p(&self) -> usize {
        self.thetaz.len()
    }

    /// Number of free parameters, `4 + 2p`.
    pub fn k(&self) -> usize {
        4 + 2 * self.p()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.k());
        v.push(self.beta);
        v.push(self.gamma);
        v.push(self.theta0);
        v.extend_from_slice(&self.thetaz);
        v.push(self.eta0);
        v.extend_from_slice(&self.etaz);
        v
    }

    pub fn from_slice(v: &[f64], p: usize) -> Result<Self> {
        if v.len() != 4 + 2 * p {
            return Err(Error::InvalidArgument(format!(
                "parameter vector has length {}, expected {}",
                v.len(),
                4 + 2 * p
            )));
        }
        Ok(Self {
            beta: v[0],
            gamma: v[1],
            theta0: v[2],
            thetaz: v[3..3 + p].to_vec(),
            eta0: v[3 + p],
            etaz: v[4 + p..].to_vec(),
        })
    }

    /// Index of `eta0` in the flattened vector.
    pub fn eta0_index(p: usize) -> usize {
        3 + p
    }

    /// Human-readable names in canonical order.
    pub fn names(p: usize) -> Vec<String> {
        let mut names = vec!["beta".to_string(), "gamma".into(), "theta0".into()];
        names.extend((1..=p).map(|j| format!("theta_z{j}")));
        names.push("eta0".into());
        names.extend((1..=p).map(|j| format!("eta_z{j}")));
        names
    }

    fn check_p(&self, z_row: &[f64]) -> Result<()> {
        if self.thetaz.len() != z_row.len() || self.etaz.len() != z_row.len() {
            return Err(Error::InvalidArgument(format!(
                "parameter dimension {} does not match instrument dimension {}",
                self.thetaz.len(),
                z_row.len()
            )));
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn log_sigma2(eta0: f64, etaz: &[f64], z_row: &[f64]) -> f64 {
    eta0 + dot(etaz, z_row)
}

/// Variance at row `row`, or `VarianceOverflow` carrying that row.
#[inline]
pub(crate) fn sigma2_at(eta0: f64, etaz: &[f64], z_row: &[f64], row: usize) -> Result<f64> {
    let e = log_sigma2(eta0, etaz, z_row);
    if e > MAX_LOG_VARIANCE || e.is_nan() {
        return Err(Error::VarianceOverflow { row });
    }
    Ok(e.exp())
}

/// `exp(eta0 + eta_z . z)`.
pub fn sigma2_eval(eta0: f64, etaz: &[f64], z_row: &[f64]) -> Result<f64> {
    if etaz.len() != z_row.len() {
        return Err(Error::InvalidArgument("eta_z and z have different lengths".into()));
    }
    sigma2_at(eta0, etaz, z_row, 0)
}

/// Treatment-free mean `theta0 + theta_z . z`.
#[inline]
pub(crate) fn baseline_mean(theta: &Theta, z_row: &[f64]) -> f64 {
    theta.theta0 + dot(&theta.thetaz, z_row)
}

/// `beta*a + gamma*a*sigma2(z) + theta0 + theta_z . z`.
pub fn mu_eval(theta: &Theta, a: f64, z_row: &[f64]) -> Result<f64> {
    theta.check_p(z_row)?;
    let v = sigma2_eval(theta.eta0, &theta.etaz, z_row)?;
    Ok(theta.beta * a + theta.gamma * a * v + baseline_mean(theta, z_row))
}

/// Mean and variance at row `i` of `data`.
#[inline]
pub(crate) fn mean_var_at(theta: &Theta, data: &Dataset, i: usize) -> Result<(f64, f64)> {
    let z = data.z_row(i);
    let v = sigma2_at(theta.eta0, &theta.etaz, z, i)?;
    let a = data.a()[i];
    Ok((theta.beta * a + theta.gamma * a * v + baseline_mean(theta, z), v))
}

/// `(y_i - mu_i) / sigma_i` for every row.
pub fn standardized_residuals(theta: &Theta, data: &Dataset) -> Result<Vec<f64>> {
    if theta.p() != data.p() {
        return Err(Error::InvalidArgument("parameter and data dimensions differ".into()));
    }
    (0..data.n())
        .map(|i| {
            let (mu, v) = mean_var_at(theta, data, i)?;
            Ok((data.y()[i] - mu) / v.sqrt())
        })
        .collect()
}

/// Inverse of [`standardized_residuals`]: `mu_i + sigma_i * eps_i`.
pub fn unstandardize(theta: &Theta, data: &Dataset, eps: &[f64]) -> Result<Vec<f64>> {
    if eps.len() != data.n() {
        return Err(Error::InvalidArgument("residual length mismatch".into()));
    }
    (0..data.n())
        .map(|i| {
            let (mu, v) = mean_var_at(theta, data, i)?;
            Ok(mu + v.sqrt() * eps[i])
        })
        .collect()
}

/// Subtracts the sample mean of the treatment. Returns the centered dataset
/// and the subtracted offset; the input is left untouched.
pub fn center_treatment(data: &Dataset) -> (Dataset, f64) {
    let n = data.n() as f64;
    let offset = crate::reduce::sum_rows(data.n(), |i| data.a[i]) / n;
    let mut out = data.clone();
    out.a.iter_mut().for_each(|v| *v -= offset);
    // Residual drift from the subtraction itself.
    let drift = crate::reduce::sum_rows(out.n(), |i| out.a[i]) / n;
    out.a.iter_mut().for_each(|v| *v -= drift);
    out.centered = true;
    (out, offset + drift)
}
