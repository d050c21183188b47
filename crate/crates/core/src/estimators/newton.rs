//! Likelihood-based estimators: the one-step Newton update from a
//! preliminary estimate and the fully iterated conditional MLE.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::likelihood::{hessian, kappa_hat, loglik, score};
use crate::linalg::{solve_general, symmetric_inverse};
use crate::model::{center_treatment, Dataset, Theta};

use super::{three_stage_point, Bootstrap, EstimateResult, Method, ThreeStageOptions};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub max_iter: usize,
    /// Converged when the score sup-norm drops below this.
    pub score_tol: f64,
    /// Stop when an accepted step has sup-norm below this.
    pub step_tol: f64,
    pub max_halvings: usize,
    /// Consecutive singular-Hessian steps tolerated before giving up.
    pub max_singular: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { max_iter: 100, score_tol: 1e-8, step_tol: 1e-10, max_halvings: 30, max_singular: 10 }
    }
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn centered(data: &Dataset) -> (Dataset, f64) {
    if data.is_centered() {
        (data.clone(), 0.0)
    } else {
        center_treatment(data)
    }
}

/// Standard errors from `-H^{-1}` and the kappa diagnostic, attached to a
/// fresh result.
fn finish(theta: Theta, h: &DMatrix<f64>, method: Method, offset: f64) -> Result<EstimateResult> {
    let k = theta.k();
    let mut warnings = Vec::new();
    let se: Vec<f64> = match symmetric_inverse(&(-h)) {
        Some(cov) => (0..k)
            .map(|j| {
                let v = cov[(j, j)];
                if v >= 0.0 {
                    v.sqrt()
                } else {
                    f64::NAN
                }
            })
            .collect(),
        None => vec![f64::NAN; k],
    };
    if se.iter().any(|s| s.is_nan()) {
        warnings.push("negative Hessian is not positive definite at the estimate".to_string());
    }
    let mut out = EstimateResult::new(theta, se, method, offset)?;
    out.warnings.extend(warnings);
    match kappa_hat(h, k) {
        Ok(kappa) => out.attach_kappa(kappa),
        Err(e) => out.warnings.push(e.to_string()),
    }
    Ok(out)
}

/// `theta0 - H(theta0)^{-1} S(theta0)` on `data` as given, with standard
/// errors from the negative inverse Hessian at the updated point.
pub fn one_step_update(theta0: &Theta, data: &Dataset) -> Result<EstimateResult> {
    let s = score(theta0, data)?;
    let h = hessian(theta0, data)?;
    let updated = if s.iter().all(|&v| v == 0.0) {
        theta0.clone()
    } else {
        let step = solve_general(&h, &s).ok_or(Error::SingularInformation)?;
        let v: Vec<f64> = theta0.to_vec().iter().zip(&step).map(|(t, d)| t - d).collect();
        Theta::from_slice(&v, theta0.p())?
    };
    let h_new = hessian(&updated, data)?;
    let mut out = finish(updated, &h_new, Method::OneStep, 0.0)?;
    out.iterations = 1;
    Ok(out)
}

/// One-step estimator started from the three-stage point estimate.
pub fn one_step_estimate(data: &Dataset) -> Result<EstimateResult> {
    let (c, offset) = centered(data);
    let init = three_stage_point(&c, &ThreeStageOptions { bootstrap: Bootstrap::disabled(), ..Default::default() })?;
    let mut out = one_step_update(&init, &c)?;
    out.centering_offset = offset;
    Ok(out)
}

/// Conditional maximum likelihood by safeguarded Newton iterations.
///
/// Each Newton step is halved until the log-likelihood does not decrease.
/// When the Hessian is singular or the Newton direction is not an ascent
/// direction, a diagonally scaled gradient step is taken instead.
///
/// The treatment is centered unless it already is; `init` must refer to the
/// centered parametrization.
pub fn cmle_fit(data: &Dataset, init: Option<&Theta>, opts: &NewtonOptions) -> Result<EstimateResult> {
    let (data, offset) = centered(data);
    let mut theta = match init {
        Some(t) => t.clone(),
        None => three_stage_point(
            &data,
            &ThreeStageOptions { bootstrap: Bootstrap::disabled(), ..Default::default() },
        )?,
    };
    let p = theta.p();
    let mut x = theta.to_vec();
    let mut ll = loglik(&theta, &data)?;
    let mut s = score(&theta, &data)?;
    let mut h: Option<DMatrix<f64>> = None;
    let mut singular_run = 0usize;
    let mut iterations = 0usize;
    let mut stalled = false;

    while iterations < opts.max_iter && sup_norm(&s) >= opts.score_tol {
        iterations += 1;
        let hm = hessian(&theta, &data)?;
        let newton = solve_general(&hm, &s).map(|d| d.iter().map(|v| -v).collect::<Vec<f64>>());
        let ascent = |d: &Vec<f64>| d.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>() > 0.0;
        let dir = match newton {
            Some(d) if ascent(&d) => {
                singular_run = 0;
                d
            }
            other => {
                if other.is_none() {
                    singular_run += 1;
                    if singular_run >= opts.max_singular {
                        return Err(Error::SingularInformation);
                    }
                }
                (0..s.len()).map(|j| s[j] / hm[(j, j)].abs().max(1.0)).collect()
            }
        };
        h = Some(hm);

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let cand: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
            let ct = Theta::from_slice(&cand, p)?;
            if let Ok(cl) = loglik(&ct, &data) {
                if cl >= ll - 1e-12 * ll.abs().max(1.0) {
                    accepted = Some((cand, ct, cl));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((cand, ct, cl)) = accepted else {
            stalled = true;
            break;
        };
        let step_norm = sup_norm(&dir) * t;
        x = cand;
        theta = ct;
        ll = cl;
        s = score(&theta, &data)?;
        h = None;
        if step_norm < opts.step_tol {
            break;
        }
    }

    let converged = sup_norm(&s) < opts.score_tol;
    let hm = match h {
        Some(hm) => hm,
        None => hessian(&theta, &data)?,
    };
    let mut out = finish(theta, &hm, Method::Cmle, offset)?;
    out.iterations = iterations;
    out.converged = converged;
    if !converged {
        out.warnings.push(format!(
            "Newton iterations stopped without convergence (score sup-norm {:.3e}{})",
            sup_norm(&s),
            if stalled { ", line search failed" } else { "" }
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Data whose score is exactly zero at `t`: mirrored residual pairs with
    /// squared standardized residual equal to one.
    pub(crate) fn zero_score_data(t: &Theta) -> Dataset {
        let mut y = Vec::new();
        let mut a = Vec::new();
        let mut z = Vec::new();
        for i in 0..30 {
            let ai = (i as f64 * 0.37).sin() * 1.5;
            let zi = (i % 3) as f64;
            let mu = crate::model::mu_eval(t, ai, &[zi]).unwrap();
            let sd = crate::model::sigma2_eval(t.eta0, &t.etaz, &[zi]).unwrap().sqrt();
            for sign in [1.0, -1.0] {
                y.push(mu + sign * sd);
                a.push(ai);
                z.push(zi);
            }
        }
        let mut d = Dataset::new(y, a, z, 1).unwrap();
        // Mark as centered so the estimator works on these exact values.
        d = crate::model::center_treatment(&d).0;
        d
    }

    fn theta() -> Theta {
        Theta { beta: 0.8, gamma: 0.2, theta0: 1.0, thetaz: vec![0.3], eta0: 0.1, etaz: vec![0.2] }
    }

    #[test]
    fn one_step_fixed_point_at_zero_score() {
        let d = zero_score_data(&theta());
        // Re-centering moved `a` slightly, so build the zero-score point on the
        // centered data directly.
        let d = zero_score_data_on(&d, &theta());
        let s = score(&theta(), &d).unwrap();
        assert!(sup_norm(&s) < 1e-12, "{s:?}");
        let r = one_step_update(&theta(), &d).unwrap();
        for (a, b) in r.theta_hat.to_vec().iter().zip(theta().to_vec()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn zero_score_data_on(d: &Dataset, t: &Theta) -> Dataset {
        let mut y = d.y().to_vec();
        for pair in 0..d.n() / 2 {
            let i = 2 * pair;
            let mu = crate::model::mu_eval(t, d.a()[i], d.z_row(i)).unwrap();
            let sd = crate::model::sigma2_eval(t.eta0, &t.etaz, d.z_row(i)).unwrap().sqrt();
            y[i] = mu + sd;
            y[i + 1] = mu - sd;
        }
        d.with_outcome(y).unwrap()
    }

    #[test]
    fn cmle_from_exact_optimum_stays() {
        let d = zero_score_data(&theta());
        let d = zero_score_data_on(&d, &theta());
        let r = cmle_fit(&d, Some(&theta()), &NewtonOptions::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 0);
        assert!(r.se.iter().all(|s| s.is_finite() && *s > 0.0));
        assert!(r.kappa.is_some());
    }
}
