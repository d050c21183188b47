//! Data generators for the simulation designs and a Monte Carlo harness.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{estimate, EstimatorConfig};
use crate::estimators::{EstimateResult, Method};
use crate::mixture::{mixture_conditional_mean, MixtureParams};
use crate::model::{mu_eval, sigma2_eval, Dataset, Theta};

/// Share of failed replicates above which a summary is flagged.
const FAILURE_FLAG_RATE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    /// One instrument, normal errors, `theta0 = 1`, `theta_z = 0.3`.
    Table1Normal,
    /// Many weak instruments, `theta0 = -0.5`, `theta_z = 0.5` each.
    Table2WeakMany,
    /// As `Table1Normal` with two-component mixture errors.
    Table3Mixture,
    /// As `Table1Normal` with `beta = gamma = 0`.
    NullEffect,
    /// As `Table1Normal` with constant outcome variance.
    Homoscedastic,
    /// Instruments shift the treatment only; an unmeasured confounder drives
    /// both treatment and outcome. TSLS is consistent here.
    ValidIv,
}

impl DesignKind {
    pub const ALL: [DesignKind; 6] = [
        DesignKind::Table1Normal,
        DesignKind::Table2WeakMany,
        DesignKind::Table3Mixture,
        DesignKind::NullEffect,
        DesignKind::Homoscedastic,
        DesignKind::ValidIv,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DesignKind::Table1Normal => "table1_normal",
            DesignKind::Table2WeakMany => "table2_weak_many",
            DesignKind::Table3Mixture => "table3_mixture",
            DesignKind::NullEffect => "null_effect",
            DesignKind::Homoscedastic => "homoscedastic",
            DesignKind::ValidIv => "valid_iv",
        }
    }
}

impl fmt::Display for DesignKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DesignKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        let short = match norm.as_str() {
            "table1" => Some(DesignKind::Table1Normal),
            "table2" => Some(DesignKind::Table2WeakMany),
            "table3" => Some(DesignKind::Table3Mixture),
            "null" => Some(DesignKind::NullEffect),
            _ => None,
        };
        short
            .or_else(|| DesignKind::ALL.into_iter().find(|d| d.as_str() == norm))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scenario '{s}'")))
    }
}

/// One simulation setting. `seed` is the base seed; replicate `r` uses
/// `seed + r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub design: DesignKind,
    pub n: usize,
    pub p: usize,
    pub eta_z: f64,
    pub beta_true: f64,
    pub gamma_true: f64,
    pub maf: f64,
    pub mixture: Option<MixtureParams>,
    pub seed: u64,
}

impl Scenario {
    fn base(design: DesignKind, n: usize, p: usize, eta_z: f64, seed: u64) -> Self {
        Self { design, n, p, eta_z, beta_true: 0.8, gamma_true: 0.2, maf: 0.3, mixture: None, seed }
    }

    pub fn table1(n: usize, eta_z: f64, seed: u64) -> Self {
        Self::base(DesignKind::Table1Normal, n, 1, eta_z, seed)
    }

    pub fn table2(n: usize, p: usize, seed: u64) -> Self {
        Self::base(DesignKind::Table2WeakMany, n, p, 0.05, seed)
    }

    pub fn table3(n: usize, eta_z: f64, seed: u64) -> Self {
        Self {
            mixture: Some(MixtureParams::skewed_two_component()),
            ..Self::base(DesignKind::Table3Mixture, n, 1, eta_z, seed)
        }
    }

    pub fn null_effect(n: usize, seed: u64) -> Self {
        Self { beta_true: 0.0, gamma_true: 0.0, ..Self::base(DesignKind::NullEffect, n, 1, 0.2, seed) }
    }

    pub fn homoscedastic(n: usize, seed: u64) -> Self {
        Self::base(DesignKind::Homoscedastic, n, 1, 0.0, seed)
    }

    pub fn valid_iv(n: usize, seed: u64) -> Self {
        Self { gamma_true: 0.0, ..Self::base(DesignKind::ValidIv, n, 1, 0.0, seed) }
    }

    /// Default scenario of a design.
    pub fn for_design(design: DesignKind, n: usize, seed: u64) -> Self {
        match design {
            DesignKind::Table1Normal => Self::table1(n, 0.2, seed),
            DesignKind::Table2WeakMany => Self::table2(n, 20, seed),
            DesignKind::Table3Mixture => Self::table3(n, 0.5, seed),
            DesignKind::NullEffect => Self::null_effect(n, seed),
            DesignKind::Homoscedastic => Self::homoscedastic(n, seed),
            DesignKind::ValidIv => Self::valid_iv(n, seed),
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 100 {
            return Err(Error::InvalidArgument(format!("n = {} is below 100", self.n)));
        }
        if self.p == 0 {
            return Err(Error::InvalidArgument("p must be at least 1".into()));
        }
        if !(self.maf > 0.0 && self.maf <= 0.5) {
            return Err(Error::InvalidArgument(format!("maf = {} not in (0, 0.5]", self.maf)));
        }
        if !self.eta_z.is_finite() || !self.beta_true.is_finite() || !self.gamma_true.is_finite() {
            return Err(Error::InvalidArgument("scenario parameters must be finite".into()));
        }
        if self.design == DesignKind::Homoscedastic && self.eta_z != 0.0 {
            return Err(Error::InvalidArgument("homoscedastic design needs eta_z = 0".into()));
        }
        if let Some(m) = &self.mixture {
            m.validate()?;
        }
        Ok(())
    }

    /// Data-generating parameters. For the valid-IV design only `beta` and
    /// `theta0` are meaningful.
    pub fn true_theta(&self) -> Theta {
        let p = self.p;
        let (theta0, thetaz) = match self.design {
            DesignKind::Table2WeakMany => (-0.5, 0.5),
            _ => (1.0, 0.3),
        };
        Theta {
            beta: self.beta_true,
            gamma: self.gamma_true,
            theta0,
            thetaz: vec![thetaz; p],
            eta0: 0.1,
            etaz: vec![self.eta_z; p],
        }
    }

    fn error_mixture(&self) -> Option<&MixtureParams> {
        match self.design {
            DesignKind::Table3Mixture => self.mixture.as_ref(),
            _ => None,
        }
    }
}

fn draw_mixture(rng: &mut ChaCha8Rng, mix: &MixtureParams) -> f64 {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut k = mix.k() - 1;
    for (j, p) in mix.pi.iter().enumerate() {
        acc += p;
        if u < acc {
            k = j;
            break;
        }
    }
    let e: f64 = rng.sample(StandardNormal);
    mix.mu[k] + mix.delta[k] * e
}

/// Draws a dataset. Instruments are Binomial(2, maf) per column, the
/// treatment is standard normal and `y = E(Y | A, Z) + sigma(Z) eps`.
pub fn generate(s: &Scenario) -> Result<Dataset> {
    s.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let theta = s.true_theta();
    let (n, p) = (s.n, s.p);
    let mut y = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n * p);
    let mut row = vec![0.0; p];
    for _ in 0..n {
        for v in row.iter_mut() {
            *v = (rng.gen_bool(s.maf) as u8 + rng.gen_bool(s.maf) as u8) as f64;
        }
        let (ai, yi) = if s.design == DesignKind::ValidIv {
            let u: f64 = rng.sample(StandardNormal);
            let ea: f64 = rng.sample(StandardNormal);
            let ey: f64 = rng.sample(StandardNormal);
            let ai = 0.5 * row.iter().sum::<f64>() + u + ea;
            (ai, theta.beta * ai + theta.theta0 + u + ey)
        } else {
            let ai: f64 = rng.sample(StandardNormal);
            let sd = sigma2_eval(theta.eta0, &theta.etaz, &row)?.sqrt();
            match s.error_mixture() {
                Some(mix) => {
                    let eps = draw_mixture(&mut rng, mix);
                    (ai, mixture_conditional_mean(&theta, mix, ai, &row)? + sd * eps)
                }
                None => {
                    let eps: f64 = rng.sample(StandardNormal);
                    (ai, mu_eval(&theta, ai, &row)? + sd * eps)
                }
            }
        };
        y.push(yi);
        a.push(ai);
        z.extend_from_slice(&row);
    }
    Dataset::new(y, a, z, p)
}

/// Outcome of one Monte Carlo replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub rep: usize,
    pub seed: u64,
    pub beta: f64,
    pub gamma: f64,
    pub se_beta: f64,
    pub se_gamma: f64,
    pub cover_beta: bool,
    pub cover_gamma: bool,
    pub kappa: Option<f64>,
    pub kappa_warning: bool,
    pub converged: bool,
    pub error: Option<String>,
}

impl ReplicateRecord {
    fn from_result(rep: usize, seed: u64, s: &Scenario, r: &EstimateResult) -> Self {
        Self {
            rep,
            seed,
            beta: r.beta(),
            gamma: r.gamma(),
            se_beta: r.se_beta(),
            se_gamma: r.se_gamma(),
            cover_beta: r.ci_low[0] <= s.beta_true && s.beta_true <= r.ci_high[0],
            cover_gamma: r.ci_low[1] <= s.gamma_true && s.gamma_true <= r.ci_high[1],
            kappa: r.kappa.as_ref().map(|k| k.kappa),
            kappa_warning: r.kappa.as_ref().is_some_and(|k| k.warning),
            converged: r.converged,
            error: None,
        }
    }

    fn failed(rep: usize, seed: u64, e: &Error) -> Self {
        Self {
            rep,
            seed,
            beta: f64::NAN,
            gamma: f64::NAN,
            se_beta: f64::NAN,
            se_gamma: f64::NAN,
            cover_beta: false,
            cover_gamma: false,
            kappa: None,
            kappa_warning: false,
            converged: false,
            error: Some(e.to_string()),
        }
    }

    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

/// Runs `reps` replicates in parallel. Replicate `r` generates data with
/// seed `scenario.seed + r` and, for bootstrap methods, resamples with the
/// same seed.
pub fn run_replicates(s: &Scenario, method: Method, reps: usize, cfg: &EstimatorConfig) -> Result<Vec<ReplicateRecord>> {
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be at least 1".into()));
    }
    s.validate()?;
    Ok((0..reps)
        .into_par_iter()
        .map(|r| {
            let seed = s.seed.wrapping_add(r as u64);
            let cfg = EstimatorConfig { seed, ..*cfg };
            match generate(&s.with_seed(seed)).and_then(|d| estimate(&d, method, &cfg)) {
                Ok(res) => ReplicateRecord::from_result(r, seed, s, &res),
                Err(e) => ReplicateRecord::failed(r, seed, &e),
            }
        })
        .collect())
}

/// Five summary statistics of one parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub mean: f64,
    /// `100 (mean - truth) / truth`; NaN when the truth is zero.
    pub bias_pct: f64,
    /// Mean reported standard error.
    pub se_avg: f64,
    /// Sample standard deviation of the estimates; absent with one replicate.
    pub sd: Option<f64>,
    pub coverage: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_sd(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let m = mean(v);
    Some((v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt())
}

impl ParamSummary {
    fn new(est: &[f64], se: &[f64], cover: &[bool], truth: f64) -> Self {
        let m = mean(est);
        Self {
            mean: m,
            bias_pct: if truth == 0.0 { f64::NAN } else { 100.0 * (m - truth) / truth },
            se_avg: mean(se),
            sd: sample_sd(est),
            coverage: cover.iter().filter(|c| **c).count() as f64 / cover.len() as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub method: Method,
    pub reps: usize,
    pub failures: usize,
    /// True when more than 5% of replicates failed.
    pub flagged: bool,
    pub beta: ParamSummary,
    pub gamma: ParamSummary,
    pub mean_kappa: Option<f64>,
}

/// Aggregates successful replicates; failures are counted and excluded.
pub fn summarize(s: &Scenario, method: Method, records: &[ReplicateRecord]) -> Result<MonteCarloSummary> {
    let ok: Vec<&ReplicateRecord> = records.iter().filter(|r| r.ok()).collect();
    let failures = records.len() - ok.len();
    if ok.is_empty() {
        return Err(Error::Divergence(format!(
            "all {} replicates failed; first error: {}",
            records.len(),
            records.first().and_then(|r| r.error.clone()).unwrap_or_default()
        )));
    }
    let col = |f: fn(&ReplicateRecord) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<f64>>();
    let kappas: Vec<f64> = ok.iter().filter_map(|r| r.kappa).collect();
    Ok(MonteCarloSummary {
        method,
        reps: records.len(),
        failures,
        flagged: failures as f64 > FAILURE_FLAG_RATE * records.len() as f64,
        beta: ParamSummary::new(
            &col(|r| r.beta),
            &col(|r| r.se_beta),
            &ok.iter().map(|r| r.cover_beta).collect::<Vec<_>>(),
            s.beta_true,
        ),
        gamma: ParamSummary::new(
            &col(|r| r.gamma),
            &col(|r| r.se_gamma),
            &ok.iter().map(|r| r.cover_gamma).collect::<Vec<_>>(),
            s.gamma_true,
        ),
        mean_kappa: if kappas.is_empty() { None } else { Some(mean(&kappas)) },
    })
}

/// Replicates and their summary with default estimator settings.
pub fn run_monte_carlo(s: &Scenario, method: Method, reps: usize) -> Result<MonteCarloSummary> {
    let records = run_replicates(s, method, reps, &EstimatorConfig::default())?;
    summarize(s, method, &records)
}

/// Paired `(kappa, beta)` draws from CMLE replicates, with the band
/// `beta_true +/- 2 * mean(SE)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaSweep {
    pub kappa: Vec<f64>,
    pub beta: Vec<f64>,
    pub band_low: f64,
    pub band_high: f64,
    pub failures: usize,
}

impl KappaSweep {
    pub fn from_records(s: &Scenario, records: &[ReplicateRecord]) -> Result<Self> {
        let ok: Vec<&ReplicateRecord> = records.iter().filter(|r| r.ok() && r.kappa.is_some()).collect();
        if ok.is_empty() {
            return Err(Error::Divergence("no replicate produced a kappa value".into()));
        }
        let se = mean(&ok.iter().map(|r| r.se_beta).collect::<Vec<_>>());
        Ok(Self {
            kappa: ok.iter().map(|r| r.kappa.unwrap_or(f64::NAN)).collect(),
            beta: ok.iter().map(|r| r.beta).collect(),
            band_low: s.beta_true - 2.0 * se,
            band_high: s.beta_true + 2.0 * se,
            failures: records.len() - ok.len(),
        })
    }

    pub fn share_kappa_above(&self, threshold: f64) -> f64 {
        self.kappa.iter().filter(|k| **k > threshold).count() as f64 / self.kappa.len() as f64
    }

    pub fn share_in_band(&self) -> f64 {
        self.beta.iter().filter(|b| **b >= self.band_low && **b <= self.band_high).count() as f64
            / self.beta.len() as f64
    }
}

pub fn kappa_sweep(s: &Scenario, reps: usize) -> Result<KappaSweep> {
    let records = run_replicates(s, Method::Cmle, reps, &EstimatorConfig::default())?;
    KappaSweep::from_records(s, &records)
}
