//! Point estimators and inference for the causal effect `beta` and the
//! selection bias `gamma`.

mod closed_form;
mod inference;
mod newton;
mod stages;
mod tsls;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::Kappa;
use crate::model::Theta;

pub use closed_form::{
    closed_form_binary, closed_form_from_moments, BetaWeighting, ClosedFormInput, ClosedFormOptions,
    StratumMoments,
};
pub use inference::{
    bootstrap_se, normal_quantile, two_sided_pvalue, wald_ci, Bootstrap, BootstrapSummary,
};
pub use newton::{cmle_fit, one_step_estimate, one_step_update, NewtonOptions};
pub use stages::{
    stage1_fit, stage1_fit_weighted, stage2_fit, stage3_fit, three_stage, three_stage_point,
    StageOneFit, ThreeStageOptions, VarianceModel,
};
pub(crate) use stages::log_link_moment_fit;
pub use tsls::tsls_baseline;

/// Estimation method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    ThreeStage,
    OneStep,
    Cmle,
    Tsls,
    Mixture,
    Semiparam,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::ClosedForm,
        Method::ThreeStage,
        Method::OneStep,
        Method::Cmle,
        Method::Tsls,
        Method::Mixture,
        Method::Semiparam,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::ClosedForm => "closed_form",
            Method::ThreeStage => "three_stage",
            Method::OneStep => "one_step",
            Method::Cmle => "cmle",
            Method::Tsls => "tsls",
            Method::Mixture => "mixture",
            Method::Semiparam => "semiparam",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == norm || (norm == "3stage" && *m == Method::ThreeStage))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method '{s}'")))
    }
}

/// Point estimates with standard errors and 95% Wald intervals.
///
/// Components a method does not estimate are NaN in `theta_hat`, `se` and
/// the interval bounds (for example `gamma` under TSLS).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub theta_hat: Theta,
    pub se: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub method: Method,
    pub kappa: Option<Kappa>,
    pub converged: bool,
    pub iterations: usize,
    pub centering_offset: f64,
    pub warnings: Vec<String>,
}

impl EstimateResult {
    pub(crate) fn new(
        theta_hat: Theta,
        se: Vec<f64>,
        method: Method,
        centering_offset: f64,
    ) -> Result<Self> {
        let (ci_low, ci_high) = wald_ci(&theta_hat.to_vec(), &se, 0.95)?;
        Ok(Self {
            theta_hat,
            se,
            ci_low,
            ci_high,
            method,
            kappa: None,
            converged: true,
            iterations: 0,
            centering_offset,
            warnings: Vec::new(),
        })
    }

    pub fn beta(&self) -> f64 {
        self.theta_hat.beta
    }

    pub fn gamma(&self) -> f64 {
        self.theta_hat.gamma
    }

    pub fn se_beta(&self) -> f64 {
        self.se[0]
    }

    pub fn se_gamma(&self) -> f64 {
        self.se[1]
    }

    pub(crate) fn attach_kappa(&mut self, kappa: Kappa) {
        if kappa.warning {
            self.warnings.push(format!(
                "kappa = {:.3} is below {}: weak identification, inference may be unreliable",
                kappa.kappa,
                crate::likelihood::KAPPA_WARN_THRESHOLD
            ));
        }
        self.kappa = Some(kappa);
    }
}
