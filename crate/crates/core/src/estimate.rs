//! Uniform entry point over all estimation methods.

use crate::error::Result;
use crate::estimators::{
    closed_form_binary, cmle_fit, one_step_estimate, three_stage, tsls_baseline, BetaWeighting, Bootstrap,
    ClosedFormOptions, EstimateResult, Method, NewtonOptions, ThreeStageOptions,
};
use crate::likelihood::{het_test, DiagnosticsReport};
use crate::mixture::{mixture_estimate, MixtureOptions};
use crate::model::Dataset;
use crate::semiparam::{semiparam_estimate, SemiparamOptions};

/// Settings shared by every method. `bootstrap = None` keeps each method's
/// default resample count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    pub bootstrap: Option<usize>,
    pub seed: u64,
    pub mixture_k: usize,
    pub reweight_stage1: bool,
    pub weighting: BetaWeighting,
    pub newton: NewtonOptions,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            bootstrap: None,
            seed: crate::DEFAULT_SEED,
            mixture_k: 2,
            reweight_stage1: false,
            weighting: BetaWeighting::InverseVariance,
            newton: NewtonOptions::default(),
        }
    }
}

impl EstimatorConfig {
    fn bootstrap_or(&self, default: usize) -> Bootstrap {
        Bootstrap::new(self.bootstrap.unwrap_or(default), self.seed)
    }
}

/// Runs `method` on `data`.
pub fn estimate(data: &Dataset, method: Method, cfg: &EstimatorConfig) -> Result<EstimateResult> {
    match method {
        Method::ClosedForm => closed_form_binary(
            data,
            &ClosedFormOptions { weighting: cfg.weighting, bootstrap: cfg.bootstrap_or(500) },
        ),
        Method::ThreeStage => three_stage(
            data,
            &ThreeStageOptions {
                reweight_stage1: cfg.reweight_stage1,
                bootstrap: cfg.bootstrap_or(100),
                ..Default::default()
            },
        ),
        Method::OneStep => one_step_estimate(data),
        Method::Cmle => cmle_fit(data, None, &cfg.newton),
        Method::Tsls => tsls_baseline(data),
        Method::Mixture => mixture_estimate(
            data,
            &MixtureOptions { k: cfg.mixture_k, bootstrap: cfg.bootstrap_or(100), ..Default::default() },
        )
        .map(|(r, _)| r),
        Method::Semiparam => semiparam_estimate(data, &SemiparamOptions { bootstrap: cfg.bootstrap_or(100) }),
    }
}

/// Heteroskedasticity test plus the kappa diagnostic from a CMLE fit.
pub fn diagnose(data: &Dataset, cfg: &EstimatorConfig) -> Result<DiagnosticsReport> {
    let (het_test_stat, het_test_pvalue) = het_test(data)?;
    let fit = cmle_fit(data, None, &cfg.newton)?;
    let kappa = fit.kappa.ok_or_else(|| {
        crate::error::Error::DiagnosticUnavailable(
            fit.warnings.last().cloned().unwrap_or_else(|| "kappa not computed".into()),
        )
    })?;
    Ok(DiagnosticsReport {
        kappa_hat: kappa.kappa,
        k: kappa.k,
        min_eigenvalue: kappa.min_eigenvalue,
        het_test_stat,
        het_test_pvalue,
    })
}
