//! The three-stage estimator: a saturated-in-treatment mean fit, a log-link
//! variance fit on squared residuals, and a linear fit that separates the
//! causal effect from the variance-scaled selection bias.

use crate::error::{Error, Result};
use crate::linalg::{least_squares, Design};
use crate::model::{center_treatment, sigma2_at, Dataset, Theta};
use crate::reduce::{sum_rows, sum_vec_rows};

use super::{bootstrap_se, Bootstrap, EstimateResult, Method};

const STAGE2_MAX_ITER: usize = 100;
const STAGE2_TOL: f64 = 1e-8;

/// Stage-1 regression of `Y` on `(1, A, Z, A*Z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOneFit {
    pub theta0_hat: f64,
    pub theta_a_hat: f64,
    pub thetaz_hat: Vec<f64>,
    pub theta_az_hat: Vec<f64>,
    pub residuals: Vec<f64>,
}

/// How stage 2 models the outcome variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceModel {
    /// `log sigma2(z) = eta0 + eta_z . z`, fit by log-link moment equations.
    #[default]
    LogLinear,
    /// One variance per level of a single binary instrument: the stage-1
    /// residual sum of squares in the stratum over `n_z - 2`.
    Saturated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThreeStageOptions {
    pub variance: VarianceModel,
    /// Refit stage 1 once by weighted least squares with weights
    /// `1 / sigma2_hat`, then redo stage 2.
    pub reweight_stage1: bool,
    pub bootstrap: Bootstrap,
}

impl Default for ThreeStageOptions {
    fn default() -> Self {
        Self {
            variance: VarianceModel::LogLinear,
            reweight_stage1: false,
            bootstrap: Bootstrap::new(100, crate::DEFAULT_SEED),
        }
    }
}

fn stage1_design(data: &Dataset) -> Design {
    let p = data.p();
    Design::from_fn(data.n(), 2 + 2 * p, |i, row| {
        let a = data.a()[i];
        let z = data.z_row(i);
        row.push(1.0);
        row.push(a);
        row.extend_from_slice(z);
        row.extend(z.iter().map(|v| a * v));
    })
}

fn stage1_from_coef(coef: &[f64], p: usize, residuals: Vec<f64>) -> StageOneFit {
    StageOneFit {
        theta0_hat: coef[0],
        theta_a_hat: coef[1],
        thetaz_hat: coef[2..2 + p].to_vec(),
        theta_az_hat: coef[2 + p..].to_vec(),
        residuals,
    }
}

/// Ordinary least squares of `Y` on `(1, A, Z, A*Z)`.
pub fn stage1_fit(data: &Dataset) -> Result<StageOneFit> {
    let fit = least_squares(&stage1_design(data), data.y(), None, "collinear stage-1 design")?;
    Ok(stage1_from_coef(&fit.coef, data.p(), fit.residuals))
}

/// Weighted variant of [`stage1_fit`].
pub fn stage1_fit_weighted(data: &Dataset, weights: &[f64]) -> Result<StageOneFit> {
    if weights.len() != data.n() || weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(Error::InvalidArgument("stage-1 weights must be positive and finite".into()));
    }
    let fit = least_squares(&stage1_design(data), data.y(), Some(weights), "collinear stage-1 design")?;
    Ok(stage1_from_coef(&fit.coef, data.p(), fit.residuals))
}

/// Solves `sum_i (target_i - exp(x_i' eta)) x_i = 0` by Newton iterations
/// with step halving on the concave objective
/// `sum_i target_i x_i' eta - exp(x_i' eta)`.
///
/// The first design column must be the intercept.
pub(crate) fn log_link_moment_fit(target: &[f64], x: &Design) -> Result<Vec<f64>> {
    let n = x.nrow();
    let total = sum_rows(n, |i| target[i]);
    if !(total > 0.0) {
        return Err(Error::InvalidData("squared residuals are all zero".into()));
    }
    let mut eta = vec![0.0; x.ncol()];
    eta[0] = (total / n as f64).ln();

    let objective = |eta: &[f64]| -> f64 {
        let v = sum_rows(n, |i| {
            let lin = crate::model::dot(x.row(i), eta);
            if lin > crate::model::MAX_LOG_VARIANCE {
                f64::NEG_INFINITY
            } else {
                target[i] * lin - lin.exp()
            }
        });
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };

    let mut obj = objective(&eta);
    for _ in 0..STAGE2_MAX_ITER {
        let mu: Vec<f64> = (0..n).map(|i| crate::model::dot(x.row(i), &eta).exp()).collect();
        let grad = sum_vec_rows(n, x.ncol(), |i, g| {
            let r = target[i] - mu[i];
            g.iter_mut().zip(x.row(i)).for_each(|(g, xv)| *g += r * xv);
            Ok::<(), Error>(())
        })?;
        let worst = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if worst < STAGE2_TOL * total {
            return Ok(eta);
        }
        let work: Vec<f64> = (0..n).map(|i| (target[i] - mu[i]) / mu[i]).collect();
        let step = least_squares(x, &work, Some(&mu), "collinear variance design")?.coef;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = eta.iter().zip(&step).map(|(e, s)| e + t * s).collect();
            let c = objective(&cand);
            if c >= obj {
                eta = cand;
                obj = c;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Err(Error::Divergence("stage-2 divergence".into()))
}

/// Log-link fit of squared residuals on `(1, Z)`; `z` is row-major `n x p`.
pub fn stage2_fit(residuals: &[f64], z: &[f64], p: usize) -> Result<(f64, Vec<f64>)> {
    let n = residuals.len();
    if p == 0 || z.len() != n * p {
        return Err(Error::InvalidArgument("instrument matrix does not match residuals".into()));
    }
    let target: Vec<f64> = residuals.iter().map(|r| r * r).collect();
    let x = Design::from_fn(n, p + 1, |i, row| {
        row.push(1.0);
        row.extend_from_slice(&z[i * p..(i + 1) * p]);
    });
    let eta = log_link_moment_fit(&target, &x)?;
    Ok((eta[0], eta[1..].to_vec()))
}

/// Saturated two-level variance of a single binary instrument.
fn saturated_variance(residuals: &[f64], data: &Dataset) -> Result<(f64, Vec<f64>)> {
    if data.p() != 1 {
        return Err(Error::ShapeMismatch("saturated variance needs a single instrument".into()));
    }
    let mut levels: Vec<f64> = data.z().to_vec();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    if levels.len() != 2 {
        return Err(Error::ShapeMismatch("saturated variance needs a binary instrument".into()));
    }
    let mut s2 = [0.0; 2];
    for (l, lev) in levels.iter().enumerate() {
        let (ss, cnt) = data
            .z()
            .iter()
            .zip(residuals)
            .filter(|(z, _)| *z == lev)
            .fold((0.0, 0usize), |(s, c), (_, r)| (s + r * r, c + 1));
        if cnt <= 2 {
            return Err(Error::InsufficientData(format!("instrument level {lev} has {cnt} rows")));
        }
        s2[l] = ss / (cnt - 2) as f64;
        if !(s2[l] > 0.0) {
            return Err(Error::InvalidData("squared residuals are all zero".into()));
        }
    }
    let etaz = (s2[1].ln() - s2[0].ln()) / (levels[1] - levels[0]);
    Ok((s2[0].ln() - etaz * levels[0], vec![etaz]))
}

/// Linear fit of `Y` on `(A, A*sigma2_hat, 1, Z)`, returning
/// `(beta, gamma, theta0, theta_z)`.
pub fn stage3_fit(data: &Dataset, sigma2_hat: &[f64]) -> Result<(f64, f64, f64, Vec<f64>)> {
    let n = data.n();
    let p = data.p();
    if sigma2_hat.len() != n {
        return Err(Error::InvalidArgument("variance vector length mismatch".into()));
    }
    let (lo, hi) = sigma2_hat
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
    if !(hi - lo > 1e-12 * hi.abs()) {
        return Err(Error::NotIdentified(
            "outcome variance does not vary with the instruments (stage 3)".into(),
        ));
    }
    let x = Design::from_fn(n, 3 + p, |i, row| {
        let a = data.a()[i];
        row.push(a);
        row.push(a * sigma2_hat[i]);
        row.push(1.0);
        row.extend_from_slice(data.z_row(i));
    });
    let fit = least_squares(&x, data.y(), None, "stage 3").map_err(|e| match e {
        Error::Collinear(_) => Error::NotIdentified(
            "treatment and variance-scaled treatment are collinear (stage 3)".into(),
        ),
        other => other,
    })?;
    Ok((fit.coef[0], fit.coef[1], fit.coef[2], fit.coef[3..].to_vec()))
}

fn fitted_variances(data: &Dataset, eta0: f64, etaz: &[f64]) -> Result<Vec<f64>> {
    (0..data.n()).map(|i| sigma2_at(eta0, etaz, data.z_row(i), i)).collect()
}

fn variance_fit(residuals: &[f64], data: &Dataset, model: VarianceModel) -> Result<(f64, Vec<f64>)> {
    match model {
        VarianceModel::LogLinear => stage2_fit(residuals, data.z(), data.p()),
        VarianceModel::Saturated => saturated_variance(residuals, data),
    }
}

/// Three-stage point estimate on `data` as given (no centering).
pub fn three_stage_point(data: &Dataset, opts: &ThreeStageOptions) -> Result<Theta> {
    let mut s1 = stage1_fit(data)?;
    let (mut eta0, mut etaz) = variance_fit(&s1.residuals, data, opts.variance)?;
    if opts.reweight_stage1 {
        let v = fitted_variances(data, eta0, &etaz)?;
        let w: Vec<f64> = v.iter().map(|v| 1.0 / v).collect();
        s1 = stage1_fit_weighted(data, &w)?;
        (eta0, etaz) = variance_fit(&s1.residuals, data, opts.variance)?;
    }
    let v = fitted_variances(data, eta0, &etaz)?;
    let (beta, gamma, theta0, thetaz) = stage3_fit(data, &v)?;
    Ok(Theta { beta, gamma, theta0, thetaz, eta0, etaz })
}

/// Three-stage estimator with bootstrap standard errors. The treatment is
/// centered first; resamples are re-centered.
pub fn three_stage(data: &Dataset, opts: &ThreeStageOptions) -> Result<EstimateResult> {
    let (centered, offset) = center_treatment(data);
    let theta = three_stage_point(&centered, opts)?;
    let k = theta.k();
    let boot = bootstrap_se(data, opts.bootstrap, k, |d| {
        let (c, _) = center_treatment(d);
        three_stage_point(&c, opts).map(|t| t.to_vec())
    })?;
    let mut out = EstimateResult::new(theta, boot.se, Method::ThreeStage, offset)?;
    if boot.failed > 0 {
        out.warnings.push(format!("{} bootstrap resamples failed", boot.failed));
    }
    if opts.bootstrap.resamples == 0 {
        out.warnings.push("standard errors not computed (bootstrap disabled)".into());
    }
    Ok(out)
}
