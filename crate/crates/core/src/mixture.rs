//! Gaussian-mixture errors for the location-scale model.
//!
//! With `Y = E(Y | A, Z) + sigma(Z) eps` and `eps` a constrained mixture
//! `sum_k pi_k N(mu_k, delta_k^2)` (mean zero, unit variance), the selection
//! term in the conditional mean becomes an exponentially tilted mixture
//! moment. Estimation alternates between a constrained EM fit of the mixture
//! to standardized residuals and a least-squares update of the mean and
//! variance parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    bootstrap_se, cmle_fit, stage2_fit, three_stage_point, Bootstrap, EstimateResult, Method,
    NewtonOptions, ThreeStageOptions,
};
use crate::linalg::{least_squares, Design};
use crate::model::{baseline_mean, center_treatment, sigma2_at, Dataset, Theta, MAX_LOG_VARIANCE};
use crate::reduce::sum_vec_rows;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
const CONSTRAINT_TOL: f64 = 1e-8;
const COLLAPSE_SD: f64 = 1e-4;
const EM_MAX_ITER: usize = 500;
/// EM stops when the per-observation log-likelihood gain drops below this.
const EM_TOL: f64 = 1e-8;

/// Mixture weights, component means and component standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub pi: Vec<f64>,
    pub mu: Vec<f64>,
    pub delta: Vec<f64>,
}

impl MixtureParams {
    /// Validates shape, positivity and the three moment constraints.
    pub fn new(pi: Vec<f64>, mu: Vec<f64>, delta: Vec<f64>) -> Result<Self> {
        let m = Self { pi, mu, delta };
        m.validate()?;
        Ok(m)
    }

    pub fn standard_normal() -> Self {
        Self { pi: vec![1.0], mu: vec![0.0], delta: vec![1.0] }
    }

    /// Two-component skewed error used in the mixture simulation design:
    /// `pi = (0.4, 0.6)`, `mu = (-0.6, 0.4)`, `delta = (0.5, sqrt(1.1))`.
    /// The second standard deviation is the value that makes the variance
    /// exactly one (1.049 rounded).
    pub fn skewed_two_component() -> Self {
        Self { pi: vec![0.4, 0.6], mu: vec![-0.6, 0.4], delta: vec![0.5, 1.1f64.sqrt()] }
    }

    pub fn k(&self) -> usize {
        self.pi.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.pi.len();
        if k == 0 || self.mu.len() != k || self.delta.len() != k {
            return Err(Error::InvalidArgument("mixture parameter vectors must share a nonzero length".into()));
        }
        if self.pi.iter().any(|p| !(*p > 0.0)) || self.delta.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::InvalidArgument("mixture weights and standard deviations must be positive".into()));
        }
        let (s, m, v) = self.moments();
        if (s - 1.0).abs() > CONSTRAINT_TOL {
            return Err(Error::InvalidArgument(format!("mixture weights sum to {s}")));
        }
        if m.abs() > CONSTRAINT_TOL {
            return Err(Error::InvalidArgument(format!("mixture mean is {m}, expected 0")));
        }
        if (v - 1.0).abs() > CONSTRAINT_TOL {
            return Err(Error::InvalidArgument(format!("mixture variance is {v}, expected 1")));
        }
        Ok(())
    }

    /// `(sum pi, sum pi mu, sum pi (delta^2 + mu^2))`.
    pub fn moments(&self) -> (f64, f64, f64) {
        let mut s = 0.0;
        let mut m = 0.0;
        let mut v = 0.0;
        for k in 0..self.k() {
            s += self.pi[k];
            m += self.pi[k] * self.mu[k];
            v += self.pi[k] * (self.delta[k].powi(2) + self.mu[k].powi(2));
        }
        (s, m, v)
    }

    /// Renormalizes the weights, recenters the means and rescales means and
    /// standard deviations to unit total variance.
    fn project(&mut self) {
        let s: f64 = self.pi.iter().sum();
        self.pi.iter_mut().for_each(|p| *p /= s);
        let m: f64 = self.pi.iter().zip(&self.mu).map(|(p, m)| p * m).sum();
        self.mu.iter_mut().for_each(|v| *v -= m);
        let var: f64 = (0..self.k()).map(|k| self.pi[k] * (self.delta[k].powi(2) + self.mu[k].powi(2))).sum();
        let scale = var.sqrt();
        self.mu.iter_mut().for_each(|v| *v /= scale);
        self.delta.iter_mut().for_each(|v| *v /= scale);
    }

    /// Same mixture with components reordered by `order`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            pi: order.iter().map(|&k| self.pi[k]).collect(),
            mu: order.iter().map(|&k| self.mu[k]).collect(),
            delta: order.iter().map(|&k| self.delta[k]).collect(),
        }
    }

    /// Log density of the mixture at `eps`.
    pub fn log_density(&self, eps: f64) -> f64 {
        let mut terms = [0.0f64; 8];
        let mut buf;
        let l: &mut [f64] = if self.k() <= terms.len() {
            &mut terms[..self.k()]
        } else {
            buf = vec![0.0; self.k()];
            &mut buf
        };
        for k in 0..self.k() {
            let u = (eps - self.mu[k]) / self.delta[k];
            l[k] = self.pi[k].ln() - self.delta[k].ln() - 0.5 * u * u;
        }
        log_sum_exp(l) - HALF_LN_2PI
    }
}

fn log_sum_exp(l: &[f64]) -> f64 {
    let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + l.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Tilt weights `omega_k = exp(t mu_k + delta_k^2 t^2 / 2)` with
/// `t = gamma * a * sigma`.
pub fn mixture_weights(gamma: f64, a: f64, sigma: f64, mix: &MixtureParams) -> Result<Vec<f64>> {
    let t = gamma * a * sigma;
    (0..mix.k())
        .map(|k| {
            let e = t * mix.mu[k] + 0.5 * (mix.delta[k] * t).powi(2);
            if e > MAX_LOG_VARIANCE || e.is_nan() {
                Err(Error::VarianceOverflow { row: 0 })
            } else {
                Ok(e.exp())
            }
        })
        .collect()
}

/// Tilted moments `(sum w mu, sum w delta^2)` with `w ∝ pi omega`, computed
/// in log space.
fn tilted_moments(t: f64, mix: &MixtureParams) -> Result<(f64, f64)> {
    let k = mix.k();
    let mut lmax = f64::NEG_INFINITY;
    let mut logs = [0.0f64; 8];
    let mut heap;
    let l: &mut [f64] = if k <= logs.len() {
        &mut logs[..k]
    } else {
        heap = vec![0.0; k];
        &mut heap
    };
    for j in 0..k {
        l[j] = mix.pi[j].ln() + t * mix.mu[j] + 0.5 * (mix.delta[j] * t).powi(2);
        lmax = lmax.max(l[j]);
    }
    if !lmax.is_finite() {
        return Err(Error::VarianceOverflow { row: 0 });
    }
    let mut s = 0.0;
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for j in 0..k {
        let w = (l[j] - lmax).exp();
        s += w;
        m1 += w * mix.mu[j];
        m2 += w * mix.delta[j].powi(2);
    }
    Ok((m1 / s, m2 / s))
}

/// Mean and variance at row `i` under the mixture model.
fn mixture_mean_var_at(theta: &Theta, mix: &MixtureParams, data: &Dataset, i: usize) -> Result<(f64, f64)> {
    let z = data.z_row(i);
    let v = sigma2_at(theta.eta0, &theta.etaz, z, i)?;
    let a = data.a()[i];
    let s = v.sqrt();
    let (m1, m2) = tilted_moments(theta.gamma * a * s, mix).map_err(|_| Error::VarianceOverflow { row: i })?;
    Ok((theta.beta * a + baseline_mean(theta, z) + s * m1 + theta.gamma * a * m2 * v, v))
}

/// `E(Y | A=a, Z=z)` under mixture errors.
pub fn mixture_conditional_mean(theta: &Theta, mix: &MixtureParams, a: f64, z_row: &[f64]) -> Result<f64> {
    if theta.p() != z_row.len() {
        return Err(Error::InvalidArgument("parameter and instrument dimensions differ".into()));
    }
    let v = sigma2_at(theta.eta0, &theta.etaz, z_row, 0)?;
    let s = v.sqrt();
    let (m1, m2) = tilted_moments(theta.gamma * a * s, mix)?;
    Ok(theta.beta * a + baseline_mean(theta, z_row) + s * m1 + theta.gamma * a * m2 * v)
}

/// Standardized residuals `(y - E(Y | A, Z)) / sigma(Z)` under mixture errors.
pub fn mixture_residuals(theta: &Theta, mix: &MixtureParams, data: &Dataset) -> Result<Vec<f64>> {
    (0..data.n())
        .map(|i| {
            let (m, v) = mixture_mean_var_at(theta, mix, data, i)?;
            Ok((data.y()[i] - m) / v.sqrt())
        })
        .collect()
}

/// Log-likelihood of the mixture location-scale model, including the
/// `-log(2 pi)/2` constants and the `-log sigma^2 / 2` Jacobian terms.
pub fn mixture_loglik(theta: &Theta, mix: &MixtureParams, data: &Dataset) -> Result<f64> {
    if theta.p() != data.p() {
        return Err(Error::InvalidArgument("parameter and data dimensions differ".into()));
    }
    mix.validate()?;
    let v = sum_vec_rows(data.n(), 1, |i, acc| {
        let (m, v) = mixture_mean_var_at(theta, mix, data, i)?;
        let eps = (data.y()[i] - m) / v.sqrt();
        acc[0] += mix.log_density(eps) - 0.5 * v.ln();
        Ok::<(), Error>(())
    })?;
    Ok(v[0])
}

fn quantile_init(eps: &[f64], k: usize, perturb: bool) -> MixtureParams {
    let mut sorted = eps.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let (mut pi, mut mu, mut delta) = (Vec::new(), Vec::new(), Vec::new());
    for g in 0..k {
        let group = &sorted[g * n / k..(g + 1) * n / k];
        let m = group.iter().sum::<f64>() / group.len() as f64;
        let var = group.iter().map(|v| (v - m).powi(2)).sum::<f64>() / group.len() as f64;
        pi.push(group.len() as f64 / n as f64);
        mu.push(if perturb { 0.5 * m } else { m });
        delta.push(if perturb { var.sqrt().max(0.1) * 2.0 } else { var.sqrt().max(0.05) });
    }
    let mut m = MixtureParams { pi, mu, delta };
    m.project();
    m
}

enum EmFailure {
    Collapse,
    Numeric(Error),
}

/// Log-likelihood and sufficient statistics `(sum r, sum r e, sum r e^2)` per
/// component at `mix`.
fn e_step(eps: &[f64], mix: &MixtureParams) -> std::result::Result<(f64, Vec<f64>), EmFailure> {
    let k = mix.k();
    let log_pi: Vec<f64> = mix.pi.iter().map(|p| p.ln()).collect();
    let log_delta: Vec<f64> = mix.delta.iter().map(|d| d.ln()).collect();
    let scale: Vec<f64> = (0..k).map(|j| mix.pi[j] / mix.delta[j]).collect();
    let mut stats = sum_vec_rows(eps.len(), 3 * k + 1, |i, acc| {
        let e = eps[i];
        let mut l = [0.0f64; 16];
        let mut heap;
        let l: &mut [f64] = if k <= l.len() {
            &mut l[..k]
        } else {
            heap = vec![0.0; k];
            &mut heap
        };
        let mut total = 0.0;
        for j in 0..k {
            let u = (e - mix.mu[j]) / mix.delta[j];
            l[j] = scale[j] * (-0.5 * u * u).exp();
            total += l[j];
        }
        let lse = if total > 1e-280 {
            for w in l.iter_mut() {
                *w /= total;
            }
            total.ln()
        } else {
            // Far tail: redo in log space.
            for j in 0..k {
                let u = (e - mix.mu[j]) / mix.delta[j];
                l[j] = log_pi[j] - log_delta[j] - 0.5 * u * u;
            }
            let lse = log_sum_exp(l);
            if !lse.is_finite() {
                return Err(Error::Divergence("mixture density underflow".into()));
            }
            for w in l.iter_mut() {
                *w = (*w - lse).exp();
            }
            lse
        };
        for j in 0..k {
            let r = l[j];
            acc[3 * j] += r;
            acc[3 * j + 1] += r * e;
            acc[3 * j + 2] += r * e * e;
        }
        acc[3 * k] += lse - HALF_LN_2PI;
        Ok(())
    })
    .map_err(EmFailure::Numeric)?;
    let ll = stats.pop().unwrap_or(f64::NAN);
    Ok((ll, stats))
}

fn is_degenerate(mix: &MixtureParams) -> bool {
    mix.delta.iter().any(|d| !(*d >= COLLAPSE_SD)) || mix.pi.iter().any(|p| !(*p > 0.0))
}

fn m_step(stats: &[f64], n: usize) -> std::result::Result<MixtureParams, EmFailure> {
    let k = stats.len() / 3;
    let mut next = MixtureParams { pi: vec![0.0; k], mu: vec![0.0; k], delta: vec![0.0; k] };
    for j in 0..k {
        let s0 = stats[3 * j];
        if !(s0 > 0.0) {
            return Err(EmFailure::Collapse);
        }
        let m = stats[3 * j + 1] / s0;
        let var = stats[3 * j + 2] / s0 - m * m;
        next.pi[j] = s0 / n as f64;
        next.mu[j] = m;
        next.delta[j] = var.max(0.0).sqrt();
    }
    next.project();
    if is_degenerate(&next) {
        return Err(EmFailure::Collapse);
    }
    Ok(next)
}

fn flatten(mix: &MixtureParams) -> Vec<f64> {
    mix.pi.iter().chain(&mix.mu).chain(&mix.delta).copied().collect()
}

/// Squared-extrapolation step from three successive EM iterates. `None` when
/// the iterates have stopped moving or the extrapolated point leaves the
/// parameter space.
fn extrapolate(x0: &MixtureParams, x1: &MixtureParams, x2: &MixtureParams) -> Option<MixtureParams> {
    let (f0, f1, f2) = (flatten(x0), flatten(x1), flatten(x2));
    let r: Vec<f64> = f1.iter().zip(&f0).map(|(a, b)| a - b).collect();
    let v: Vec<f64> = (0..f0.len()).map(|i| f2[i] - 2.0 * f1[i] + f0[i]).collect();
    let rr: f64 = r.iter().map(|x| x * x).sum();
    let vv: f64 = v.iter().map(|x| x * x).sum();
    if !(vv > 0.0) || !(rr > 0.0) {
        return None;
    }
    let alpha = -(rr / vv).sqrt().max(1.0);
    let x: Vec<f64> = (0..f0.len()).map(|i| f0[i] - 2.0 * alpha * r[i] + alpha * alpha * v[i]).collect();
    let k = x0.k();
    let mut out =
        MixtureParams { pi: x[..k].to_vec(), mu: x[k..2 * k].to_vec(), delta: x[2 * k..].to_vec() };
    if out.pi.iter().any(|p| !(*p > 0.0)) || out.delta.iter().any(|d| !(*d > 0.0)) {
        return None;
    }
    out.project();
    if is_degenerate(&out) || !flatten(&out).iter().all(|x| x.is_finite()) {
        return None;
    }
    Some(out)
}

/// EM with squared extrapolation. Each cycle takes two plain EM steps and
/// keeps the extrapolated point only when it beats the second of them, so the
/// likelihood never decreases.
fn em(eps: &[f64], mix: MixtureParams) -> std::result::Result<MixtureParams, EmFailure> {
    let n = eps.len();
    let mut x0 = mix;
    let (mut ll0, mut st0) = e_step(eps, &x0)?;
    let mut evals = 1;
    while evals < EM_MAX_ITER {
        let x1 = m_step(&st0, n)?;
        let (ll1, st1) = e_step(eps, &x1)?;
        let x2 = m_step(&st1, n)?;
        let (ll2, st2) = e_step(eps, &x2)?;
        evals += 2;
        let (mut x, mut ll, mut st) = (x2, ll2, st2);
        if let Some(xe) = extrapolate(&x0, &x1, &x) {
            if let Ok((lle, ste)) = e_step(eps, &xe) {
                evals += 1;
                if lle > ll {
                    (x, ll, st) = (xe, lle, ste);
                }
            }
        }
        // Projection can cost a little likelihood; never move downhill.
        if ll1 > ll {
            return Ok(if ll1 > ll0 { x1 } else { x0 });
        }
        if (ll - ll0) / (n as f64) < EM_TOL {
            return Ok(if ll > ll0 { x } else { x0 });
        }
        (x0, ll0, st0) = (x, ll, st);
    }
    Ok(x0)
}

/// Constrained maximum likelihood fit of a `k`-component mixture to
/// standardized residuals, by EM with projection onto the constraint set
/// after every M-step.
pub fn fit_mixture_residuals(eps: &[f64], k: usize) -> Result<MixtureParams> {
    fit_mixture_from(eps, k, None)
}

/// As [`fit_mixture_residuals`], starting from `init` when it has `k`
/// components.
pub fn fit_mixture_from(eps: &[f64], k: usize, init: Option<&MixtureParams>) -> Result<MixtureParams> {
    if k == 0 {
        return Err(Error::InvalidArgument("mixture needs at least one component".into()));
    }
    if eps.len() <= 5 * k {
        return Err(Error::InvalidArgument(format!(
            "{} residuals are too few for a {k}-component mixture",
            eps.len()
        )));
    }
    if eps.iter().any(|e| !e.is_finite()) {
        return Err(Error::InvalidData("non-finite standardized residual".into()));
    }
    if k == 1 {
        return Ok(MixtureParams::standard_normal());
    }
    let start = match init {
        Some(m) if m.k() == k => m.clone(),
        _ => quantile_init(eps, k, false),
    };
    match em(eps, start) {
        Ok(m) => return m.validate().map(|_| m),
        Err(EmFailure::Numeric(e)) => return Err(e),
        Err(EmFailure::Collapse) => {}
    }
    match em(eps, quantile_init(eps, k, true)) {
        Ok(m) => m.validate().map(|_| m),
        Err(EmFailure::Numeric(e)) => Err(e),
        Err(EmFailure::Collapse) => Err(Error::DegenerateComponent(format!(
            "a component standard deviation fell below {COLLAPSE_SD}"
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureOptions {
    pub k: usize,
    pub max_outer: usize,
    /// Relative log-likelihood change that ends the outer loop.
    pub rel_tol: f64,
    pub bootstrap: Bootstrap,
}

impl Default for MixtureOptions {
    fn default() -> Self {
        Self { k: 2, max_outer: 50, rel_tol: 1e-3, bootstrap: Bootstrap::new(100, crate::DEFAULT_SEED) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureFit {
    pub theta: Theta,
    pub mix: MixtureParams,
    /// Mixture log-likelihood after each accepted outer iteration.
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Least-squares update of `(beta, gamma, theta)` with the tilt evaluated at
/// the current `(gamma, eta, mix)`, then a log-link refit of `eta` on the
/// squared residuals.
fn mean_variance_update(theta: &Theta, mix: &MixtureParams, data: &Dataset) -> Result<Theta> {
    let n = data.n();
    let p = data.p();
    let mut offset = Vec::with_capacity(n);
    let mut vt = Vec::with_capacity(n);
    for i in 0..n {
        let v = sigma2_at(theta.eta0, &theta.etaz, data.z_row(i), i)?;
        let s = v.sqrt();
        let a = data.a()[i];
        let (m1, m2) = tilted_moments(theta.gamma * a * s, mix).map_err(|_| Error::VarianceOverflow { row: i })?;
        offset.push(s * m1);
        vt.push(a * m2 * v);
    }
    let x = Design::from_fn(n, 3 + p, |i, row| {
        row.push(data.a()[i]);
        row.push(vt[i]);
        row.push(1.0);
        row.extend_from_slice(data.z_row(i));
    });
    let target: Vec<f64> = (0..n).map(|i| data.y()[i] - offset[i]).collect();
    let fit = least_squares(&x, &target, None, "mixture mean update").map_err(|e| match e {
        Error::Collinear(_) => Error::NotIdentified("treatment and tilted variance term are collinear".into()),
        other => other,
    })?;
    let (eta0, etaz) = stage2_fit(&fit.residuals, data.z(), p)?;
    Ok(Theta {
        beta: fit.coef[0],
        gamma: fit.coef[1],
        theta0: fit.coef[2],
        thetaz: fit.coef[3..].to_vec(),
        eta0,
        etaz,
    })
}

fn alternate(
    data: &Dataset,
    opts: &MixtureOptions,
    mut theta: Theta,
    mut mix_prev: Option<MixtureParams>,
) -> Result<MixtureFit> {
    let mut eps = match &mix_prev {
        Some(m) => mixture_residuals(&theta, m, data)?,
        None => crate::model::standardized_residuals(&theta, data)?,
    };
    let mut trace: Vec<f64> = Vec::new();
    let mut accepted: Option<(Theta, MixtureParams)> = None;
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..opts.max_outer {
        iterations += 1;
        let mix = fit_mixture_from(&eps, opts.k, mix_prev.as_ref())?;
        let ll = mixture_loglik(&theta, &mix, data)?;
        if let Some(&last) = trace.last() {
            let rel = (ll - last).abs() / last.abs();
            if ll < last - 1e-10 {
                // Keep the trace monotone: fall back to the previous state.
                converged = rel < opts.rel_tol;
                break;
            }
            trace.push(ll);
            accepted = Some((theta.clone(), mix.clone()));
            if rel < opts.rel_tol {
                converged = true;
                break;
            }
        } else {
            trace.push(ll);
            accepted = Some((theta.clone(), mix.clone()));
        }
        theta = mean_variance_update(&theta, &mix, data)?;
        eps = mixture_residuals(&theta, &mix, data)?;
        mix_prev = Some(mix);
    }
    let (theta, mix) = accepted.expect("at least one outer iteration");
    Ok(MixtureFit { theta, mix, loglik_trace: trace, converged, iterations })
}

/// Alternating estimation on `data` as given: a normal-model CMLE started
/// from the three-stage estimate, then mixture and mean/variance updates
/// until the relative log-likelihood change falls below `opts.rel_tol`.
pub fn alternating_fit(data: &Dataset, opts: &MixtureOptions) -> Result<MixtureFit> {
    let init = three_stage_point(data, &ThreeStageOptions { bootstrap: Bootstrap::disabled(), ..Default::default() })?;
    let normal = cmle_fit(data, Some(&init), &NewtonOptions::default())?;
    alternate(data, opts, normal.theta_hat, None)
}

/// Alternating estimation started from a previous fit instead of the
/// normal-model CMLE.
pub fn alternating_fit_from(data: &Dataset, opts: &MixtureOptions, start: &MixtureFit) -> Result<MixtureFit> {
    alternate(data, opts, start.theta.clone(), Some(start.mix.clone()))
}

/// Mixture estimator with bootstrap standard errors. The treatment is
/// centered. Each resample reruns the full fit from its own starting values:
/// with the loose outer tolerance, a warm start at the point estimate barely
/// moves and the standard errors come out far too small.
pub fn mixture_estimate(data: &Dataset, opts: &MixtureOptions) -> Result<(EstimateResult, MixtureFit)> {
    let (centered, offset) = center_treatment(data);
    let fit = alternating_fit(&centered, opts)?;
    let k = fit.theta.k();
    let boot = bootstrap_se(data, opts.bootstrap, k, |d| {
        let (c, _) = center_treatment(d);
        alternating_fit(&c, opts).map(|f| f.theta.to_vec())
    })?;
    let mut out = EstimateResult::new(fit.theta.clone(), boot.se, Method::Mixture, offset)?;
    out.converged = fit.converged;
    out.iterations = fit.iterations;
    if !fit.converged {
        out.warnings.push("mixture alternating fit did not converge".into());
    }
    if boot.failed > 0 {
        out.warnings.push(format!("{} bootstrap resamples failed", boot.failed));
    }
    if opts.bootstrap.resamples == 0 {
        out.warnings.push("standard errors not computed (bootstrap disabled)".into());
    }
    Ok((out, fit))
}
