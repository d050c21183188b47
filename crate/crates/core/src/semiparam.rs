//! Semiparametric three-stage estimation that leaves the distribution of the
//! standardized error unrestricted.
//!
//! The selection term is the exponentially tilted mean of the standardized
//! residuals, `g_i(gamma) = sum_j e_j exp(t_i e_j) / sum_j exp(t_i e_j)` with
//! `t_i = gamma * A_i * sigma_i`, and `(beta, gamma)` minimize
//! `sum_i (Y_i - beta A_i - mu(0, Z_i) - sigma_i g_i(gamma))^2`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{bootstrap_se, Bootstrap, EstimateResult, Method};
use crate::linalg::{least_squares, Design};
use crate::model::{center_treatment, dot, Dataset, Theta};

/// Polynomial degree of the treatment basis.
const DEGREE: usize = 3;
const GAMMA_RANGE: (f64, f64) = (-2.0, 2.0);
const GRID_POINTS: usize = 41;
const GOLDEN_TOL: f64 = 1e-6;
/// Above this many observations the tilted mean is read from a cubic
/// Hermite table instead of summing over all residuals for every unit.
const EXACT_LIMIT: usize = 2000;
const TABLE_SPACING: f64 = 0.05;

/// Which powers of each instrument column enter the bases.
#[derive(Debug, Clone, PartialEq)]
struct InstrumentBasis {
    squared: Vec<bool>,
}

impl InstrumentBasis {
    fn from_data(data: &Dataset) -> Result<Self> {
        let mut squared = Vec::with_capacity(data.p());
        for j in 0..data.p() {
            let mut levels: Vec<f64> = Vec::new();
            for v in data.z_column(j) {
                if !levels.contains(&v) {
                    if levels.len() == 3 {
                        return Err(Error::ContinuousInstrument(j));
                    }
                    levels.push(v);
                }
            }
            squared.push(levels.len() == 3);
        }
        Ok(Self { squared })
    }

    /// `z_j` and, for three-level columns, `z_j^2`.
    fn push_terms(&self, z: &[f64], row: &mut Vec<f64>) {
        for (j, &zj) in z.iter().enumerate() {
            row.push(zj);
            if self.squared[j] {
                row.push(zj * zj);
            }
        }
    }

    fn width(&self) -> usize {
        self.squared.iter().map(|&s| if s { 2 } else { 1 }).sum()
    }
}

/// Fitted mean surface `mu(a, z)`: a cubic in `a`, saturated in each
/// finite-support instrument, with treatment-by-instrument interactions.
/// Every instrument term vanishes at `z = 0` and every interaction at `a = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanSurface {
    coef: Vec<f64>,
    basis: InstrumentBasis,
}

impl MeanSurface {
    fn row(basis: &InstrumentBasis, a: f64, z: &[f64], row: &mut Vec<f64>) {
        row.push(1.0);
        let mut ad = 1.0;
        for _ in 0..DEGREE {
            ad *= a;
            row.push(ad);
        }
        basis.push_terms(z, row);
        let start = row.len() - basis.width();
        let mut ad = 1.0;
        for _ in 0..DEGREE {
            ad *= a;
            for c in 0..basis.width() {
                let v = row[start + c];
                row.push(v * ad);
            }
        }
    }

    fn ncol(basis: &InstrumentBasis) -> usize {
        1 + DEGREE + (1 + DEGREE) * basis.width()
    }

    pub fn eval(&self, a: f64, z: &[f64]) -> f64 {
        let mut row = Vec::with_capacity(self.coef.len());
        Self::row(&self.basis, a, z, &mut row);
        dot(&row, &self.coef)
    }

    /// `mu(0, z)`.
    pub fn eval_untreated(&self, z: &[f64]) -> f64 {
        self.eval(0.0, z)
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coef
    }
}

/// Fitted variance surface `sigma2(z) = exp(b0 + sum_j (b_j z_j + c_j z_j^2))`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceSurface {
    coef: Vec<f64>,
    basis: InstrumentBasis,
}

impl VarianceSurface {
    pub fn eval(&self, z: &[f64]) -> f64 {
        let mut row = Vec::with_capacity(self.coef.len());
        row.push(1.0);
        self.basis.push_terms(z, &mut row);
        dot(&row, &self.coef).exp()
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coef
    }
}

/// Least-squares fit of the mean surface. Instruments must take at most
/// three distinct values per column.
pub fn fit_np_mean(data: &Dataset) -> Result<MeanSurface> {
    let basis = InstrumentBasis::from_data(data)?;
    let x = Design::from_fn(data.n(), MeanSurface::ncol(&basis), |i, row| {
        MeanSurface::row(&basis, data.a()[i], data.z_row(i), row)
    });
    let fit = least_squares(&x, data.y(), None, "collinear mean-surface basis")?;
    Ok(MeanSurface { coef: fit.coef, basis })
}

/// Log-link moment fit of squared residuals on `(1, z, z^2)` per column.
pub fn fit_np_variance(residuals: &[f64], data: &Dataset) -> Result<VarianceSurface> {
    if residuals.len() != data.n() {
        return Err(Error::InvalidArgument("residual length mismatch".into()));
    }
    let basis = InstrumentBasis::from_data(data)?;
    let x = Design::from_fn(data.n(), 1 + basis.width(), |i, row| {
        row.push(1.0);
        basis.push_terms(data.z_row(i), row);
    });
    let sq: Vec<f64> = residuals.iter().map(|r| r * r).collect();
    let coef = crate::estimators::log_link_moment_fit(&sq, &x).map_err(|e| match e {
        Error::Collinear(_) => Error::Collinear("instruments collinear".into()),
        other => other,
    })?;
    Ok(VarianceSurface { coef, basis })
}

/// Tilted moments `(sum e w, sum e^2 w) / sum w` with `w = exp(t e)`.
fn tilt(t: f64, eps: &[f64], lo: f64, hi: f64) -> Result<(f64, f64)> {
    if !t.is_finite() {
        return Err(Error::GammaOutOfRange);
    }
    let shift = if t >= 0.0 { t * hi } else { t * lo };
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for &e in eps {
        let w = (t * e - shift).exp();
        s0 += w;
        s1 += w * e;
        s2 += w * e * e;
    }
    if !(s0 > 0.0) || !s1.is_finite() || !s2.is_finite() {
        return Err(Error::GammaOutOfRange);
    }
    Ok((s1 / s0, s2 / s0))
}

fn range(eps: &[f64]) -> (f64, f64) {
    eps.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &e| (l.min(e), h.max(e)))
}

/// Tilted mean of `eps_hat` at tilt `gamma * a_i * sigma_i`.
pub fn ghat_eval(gamma: f64, a_i: f64, sigma_i: f64, eps_hat: &[f64]) -> Result<f64> {
    if eps_hat.is_empty() {
        return Err(Error::InvalidArgument("empty residual vector".into()));
    }
    let (lo, hi) = range(eps_hat);
    tilt(gamma * a_i * sigma_i, eps_hat, lo, hi).map(|m| m.0)
}

/// Tilted-mean function `G(t)`, either exact or from a cubic Hermite table
/// built from exact values and slopes (`G'(t)` is the tilted variance).
enum TiltedMean<'a> {
    Exact { eps: &'a [f64], lo: f64, hi: f64 },
    Table { t0: f64, h: f64, g: Vec<f64>, dg: Vec<f64> },
}

impl<'a> TiltedMean<'a> {
    fn new(eps: &'a [f64], t_max: f64) -> Result<Self> {
        let (lo, hi) = range(eps);
        if eps.len() <= EXACT_LIMIT || !(t_max > 0.0) {
            return Ok(Self::Exact { eps, lo, hi });
        }
        let m = (2.0 * t_max / TABLE_SPACING).ceil() as usize;
        let h = 2.0 * t_max / m as f64;
        let nodes: Vec<(f64, f64)> = (0..=m)
            .into_par_iter()
            .map(|j| {
                let (m1, m2) = tilt(-t_max + j as f64 * h, eps, lo, hi)?;
                Ok((m1, (m2 - m1 * m1).max(0.0)))
            })
            .collect::<Result<_>>()?;
        Ok(Self::Table {
            t0: -t_max,
            h,
            g: nodes.iter().map(|v| v.0).collect(),
            dg: nodes.iter().map(|v| v.1).collect(),
        })
    }

    fn eval(&self, t: f64) -> Result<f64> {
        match self {
            Self::Exact { eps, lo, hi } => tilt(t, eps, *lo, *hi).map(|m| m.0),
            Self::Table { t0, h, g, dg } => {
                let x = (t - t0) / h;
                let last = g.len() - 1;
                if !(x >= -1e-9 && x <= last as f64 + 1e-9) {
                    return Err(Error::GammaOutOfRange);
                }
                let j = (x.floor().max(0.0) as usize).min(last - 1);
                let u = x - j as f64;
                let (h00, h10, h01, h11) = (
                    (1.0 + 2.0 * u) * (1.0 - u).powi(2),
                    u * (1.0 - u).powi(2),
                    u * u * (3.0 - 2.0 * u),
                    u * u * (u - 1.0),
                );
                Ok(h00 * g[j] + h10 * h * dg[j] + h01 * g[j + 1] + h11 * h * dg[j + 1])
            }
        }
    }
}

/// Profiled least-squares problem in `gamma`.
struct Profile<'a> {
    a: &'a [f64],
    target: Vec<f64>,
    sigma: Vec<f64>,
    tilted: TiltedMean<'a>,
    saa: f64,
}

impl Profile<'_> {
    /// `(rss, beta)` at `gamma`, with `beta` solved in closed form.
    fn at(&self, gamma: f64) -> Result<(f64, f64)> {
        let n = self.a.len();
        let mut h = Vec::with_capacity(n);
        for i in 0..n {
            h.push(self.sigma[i] * self.tilted.eval(gamma * self.a[i] * self.sigma[i])?);
        }
        let beta = (0..n).map(|i| self.a[i] * (self.target[i] - h[i])).sum::<f64>() / self.saa;
        let rss = (0..n).map(|i| (self.target[i] - beta * self.a[i] - h[i]).powi(2)).sum();
        Ok((rss, beta))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemiparamFit {
    pub beta: f64,
    pub gamma: f64,
    /// Residual sum of squares at the optimum.
    pub objective: f64,
    /// Bootstrap standard errors of `(beta, gamma)`; NaN when not computed.
    pub se: [f64; 2],
    /// True when the minimizing `gamma` sits on the search boundary.
    pub at_boundary: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemiparamOptions {
    pub bootstrap: Bootstrap,
}

impl Default for SemiparamOptions {
    fn default() -> Self {
        Self { bootstrap: Bootstrap::new(100, crate::DEFAULT_SEED) }
    }
}

fn golden_section<F: Fn(f64) -> Result<f64>>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64> {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2)?;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Point estimate on `data` as given (no centering).
fn semiparam_point(data: &Dataset) -> Result<SemiparamFit> {
    let n = data.n();
    let mean = fit_np_mean(data)?;
    let resid: Vec<f64> = (0..n).map(|i| data.y()[i] - mean.eval(data.a()[i], data.z_row(i))).collect();
    let var = fit_np_variance(&resid, data)?;
    let sigma: Vec<f64> = (0..n).map(|i| var.eval(data.z_row(i)).sqrt()).collect();
    let eps: Vec<f64> = (0..n).map(|i| resid[i] / sigma[i]).collect();
    let target: Vec<f64> = (0..n).map(|i| data.y()[i] - mean.eval_untreated(data.z_row(i))).collect();
    let saa: f64 = data.a().iter().map(|a| a * a).sum();
    if !(saa > 0.0) {
        return Err(Error::InvalidData("treatment is identically zero".into()));
    }
    let t_max = GAMMA_RANGE.0.abs().max(GAMMA_RANGE.1.abs())
        * (0..n).map(|i| (data.a()[i] * sigma[i]).abs()).fold(0.0, f64::max);
    let profile = Profile { a: data.a(), target, sigma, tilted: TiltedMean::new(&eps, t_max)?, saa };

    let step = (GAMMA_RANGE.1 - GAMMA_RANGE.0) / (GRID_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..GRID_POINTS).map(|j| GAMMA_RANGE.0 + j as f64 * step).collect();
    let values: Vec<f64> = grid.iter().map(|&g| profile.at(g).map(|v| v.0)).collect::<Result<_>>()?;
    let best = (0..GRID_POINTS).min_by(|&i, &j| values[i].total_cmp(&values[j])).expect("non-empty grid");
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(GRID_POINTS - 1)];
    let gamma = golden_section(|g| profile.at(g).map(|v| v.0), lo, hi, GOLDEN_TOL)?;
    let (rss, beta) = profile.at(gamma)?;

    let d = 1e-3;
    let curv = (profile.at((gamma + d).min(GAMMA_RANGE.1))?.0 - 2.0 * rss
        + profile.at((gamma - d).max(GAMMA_RANGE.0))?.0)
        / (d * d);
    if !(curv > 1e-10 * rss.max(f64::MIN_POSITIVE)) {
        return Err(Error::GammaWeaklyIdentified);
    }
    let at_boundary = (gamma - GAMMA_RANGE.0).abs() < 1e-4 || (gamma - GAMMA_RANGE.1).abs() < 1e-4;
    Ok(SemiparamFit { beta, gamma, objective: rss.max(0.0), se: [f64::NAN; 2], at_boundary })
}

/// Semiparametric estimate of `(beta, gamma)` with bootstrap standard errors.
/// The treatment is centered first.
pub fn semiparam_fit(data: &Dataset, opts: &SemiparamOptions) -> Result<SemiparamFit> {
    let (c, _) = center_treatment(data);
    let mut fit = semiparam_point(&c)?;
    if opts.bootstrap.resamples > 0 {
        let boot = bootstrap_se(data, opts.bootstrap, 2, |d| {
            let (c, _) = center_treatment(d);
            semiparam_point(&c).map(|f| vec![f.beta, f.gamma])
        })?;
        fit.se = [boot.se[0], boot.se[1]];
    }
    Ok(fit)
}

/// [`semiparam_fit`] as an [`EstimateResult`]; only `beta` and `gamma` are
/// estimated, every other component is NaN.
pub fn semiparam_estimate(data: &Dataset, opts: &SemiparamOptions) -> Result<EstimateResult> {
    let offset = center_treatment(data).1;
    let fit = semiparam_fit(data, opts)?;
    let p = data.p();
    let theta = Theta {
        beta: fit.beta,
        gamma: fit.gamma,
        theta0: f64::NAN,
        thetaz: vec![f64::NAN; p],
        eta0: f64::NAN,
        etaz: vec![f64::NAN; p],
    };
    let mut se = vec![f64::NAN; theta.k()];
    se[0] = fit.se[0];
    se[1] = fit.se[1];
    let mut out = EstimateResult::new(theta, se, Method::Semiparam, offset)?;
    if fit.at_boundary {
        out.warnings.push("gamma estimate is on the boundary of the search interval".into());
    }
    if opts.bootstrap.resamples == 0 {
        out.warnings.push("standard errors not computed (bootstrap disabled)".into());
    }
    Ok(out)
}
