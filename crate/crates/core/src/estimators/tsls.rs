//! Conventional two-stage least squares, valid only when the instruments
//! satisfy the exclusion restriction. Used as a comparison baseline.

use crate::error::{Error, Result};
use crate::linalg::{least_squares, Design};
use crate::model::{dot, Dataset, Theta};

use super::{EstimateResult, Method};

/// First-stage F statistic below which the instruments are treated as
/// irrelevant.
const MIN_FIRST_STAGE_F: f64 = 1e-6;

/// TSLS of `Y` on `(1, A)` with instruments `(1, Z)` and heteroskedasticity
/// robust (HC0) standard errors. Only `beta` and `theta0` are estimated; all
/// other components are NaN.
pub fn tsls_baseline(data: &Dataset) -> Result<EstimateResult> {
    let n = data.n();
    let p = data.p();
    let zdesign = Design::from_fn(n, 1 + p, |i, row| {
        row.push(1.0);
        row.extend_from_slice(data.z_row(i));
    });
    let first = least_squares(&zdesign, data.a(), None, "collinear instruments")?;
    let rss_u: f64 = first.residuals.iter().map(|r| r * r).sum();
    let abar = data.a().iter().sum::<f64>() / n as f64;
    let rss_r: f64 = data.a().iter().map(|a| (a - abar).powi(2)).sum();
    let df = n as f64 - p as f64 - 1.0;
    if !(df > 0.0) {
        return Err(Error::InsufficientData("too few observations for TSLS".into()));
    }
    let f_stat = if rss_u > 0.0 { ((rss_r - rss_u) / p as f64) / (rss_u / df) } else { f64::INFINITY };
    if !(f_stat >= MIN_FIRST_STAGE_F) {
        return Err(Error::WeakFirstStage(f_stat));
    }

    let ahat: Vec<f64> = (0..n).map(|i| data.a()[i] - first.residuals[i]).collect();
    let xhat = Design::from_fn(n, 2, |i, row| {
        row.push(1.0);
        row.push(ahat[i]);
    });
    let second = least_squares(&xhat, data.y(), None, "collinear second stage")
        .map_err(|_| Error::WeakFirstStage(f_stat))?;
    let coef = second.coef;

    // HC0 sandwich with structural residuals, which use the observed A.
    let mut meat = [[0.0; 2]; 2];
    for i in 0..n {
        let e = data.y()[i] - dot(&coef, &[1.0, data.a()[i]]);
        let x = [1.0, ahat[i]];
        for r in 0..2 {
            for c in 0..2 {
                meat[r][c] += x[r] * x[c] * e * e;
            }
        }
    }
    let bread = &second.xtx_inv;
    let mut cov = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            let mut s = 0.0;
            for u in 0..2 {
                for v in 0..2 {
                    s += bread[(r, u)] * meat[u][v] * bread[(v, c)];
                }
            }
            cov[r][c] = s;
        }
    }

    let theta = Theta {
        beta: coef[1],
        gamma: f64::NAN,
        theta0: coef[0],
        thetaz: vec![f64::NAN; p],
        eta0: f64::NAN,
        etaz: vec![f64::NAN; p],
    };
    let mut se = vec![f64::NAN; theta.k()];
    se[0] = cov[1][1].sqrt();
    se[2] = cov[0][0].sqrt();
    let mut out = EstimateResult::new(theta, se, Method::Tsls, 0.0)?;
    if f_stat < 10.0 {
        out.warnings.push(format!("first-stage F = {f_stat:.3} is below 10: weak instruments"));
    }
    Ok(out)
}
