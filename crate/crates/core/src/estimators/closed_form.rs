//! Closed-form identification with a binary treatment and a binary
//! instrument. Within each instrument stratum the exposed-minus-unexposed
//! outcome difference is `D(z) = beta + gamma * sigma2(z)`; two strata give
//! two equations in `(beta, gamma)`.

use crate::error::{Error, Result};
use crate::model::{Dataset, Theta};

use super::{bootstrap_se, Bootstrap, EstimateResult, Method};

/// Stratum summaries entering the closed form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedFormInput {
    /// `E(Y | A=1, Z=0) - E(Y | A=0, Z=0)`.
    pub d0: f64,
    /// `E(Y | A=1, Z=1) - E(Y | A=0, Z=1)`.
    pub d1: f64,
    /// Outcome variance given `(A, Z=0)`.
    pub s0: f64,
    /// Outcome variance given `(A, Z=1)`.
    pub s1: f64,
}

/// How the two per-stratum effect estimates are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BetaWeighting {
    #[default]
    InverseVariance,
    Unweighted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedFormOptions {
    pub weighting: BetaWeighting,
    pub bootstrap: Bootstrap,
}

impl Default for ClosedFormOptions {
    fn default() -> Self {
        Self { weighting: BetaWeighting::InverseVariance, bootstrap: Bootstrap::new(500, crate::DEFAULT_SEED) }
    }
}

/// Sample moments of one `(A, Z)` cell layout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StratumMoments {
    /// Cell means indexed `[z][a]`.
    pub mean: [[f64; 2]; 2],
    /// Cell counts indexed `[z][a]`.
    pub count: [[usize; 2]; 2],
    /// Pooled within-cell variance for each instrument level.
    pub pooled_var: [f64; 2],
}

impl StratumMoments {
    pub fn from_data(data: &Dataset) -> Result<Self> {
        check_binary_shape(data)?;
        let mut sum = [[0.0; 2]; 2];
        let mut count = [[0usize; 2]; 2];
        for i in 0..data.n() {
            let (z, a) = (data.z()[i] as usize, data.a()[i] as usize);
            sum[z][a] += data.y()[i];
            count[z][a] += 1;
        }
        for z in 0..2 {
            for a in 0..2 {
                if count[z][a] < 2 {
                    return Err(Error::InsufficientData(format!(
                        "cell (A={a}, Z={z}) has {} observations",
                        count[z][a]
                    )));
                }
            }
        }
        let mean = [
            [sum[0][0] / count[0][0] as f64, sum[0][1] / count[0][1] as f64],
            [sum[1][0] / count[1][0] as f64, sum[1][1] / count[1][1] as f64],
        ];
        let mut ss = [0.0; 2];
        for i in 0..data.n() {
            let (z, a) = (data.z()[i] as usize, data.a()[i] as usize);
            ss[z] += (data.y()[i] - mean[z][a]).powi(2);
        }
        let pooled_var = [
            ss[0] / (count[0][0] + count[0][1] - 2) as f64,
            ss[1] / (count[1][0] + count[1][1] - 2) as f64,
        ];
        Ok(Self { mean, count, pooled_var })
    }

    pub fn input(&self) -> ClosedFormInput {
        ClosedFormInput {
            d0: self.mean[0][1] - self.mean[0][0],
            d1: self.mean[1][1] - self.mean[1][0],
            s0: self.pooled_var[0],
            s1: self.pooled_var[1],
        }
    }

    /// Inverse sampling variances of `D(0)` and `D(1)`.
    fn precision(&self) -> [f64; 2] {
        let prec = |z: usize| {
            let v = self.pooled_var[z]
                * (1.0 / self.count[z][0] as f64 + 1.0 / self.count[z][1] as f64);
            1.0 / v
        };
        [prec(0), prec(1)]
    }
}

fn check_binary_shape(data: &Dataset) -> Result<()> {
    if data.p() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "closed form needs exactly one instrument, got {}",
            data.p()
        )));
    }
    if data.a().iter().any(|&a| a != 0.0 && a != 1.0) {
        return Err(Error::ShapeMismatch("closed form needs a binary 0/1 treatment".into()));
    }
    if data.z().iter().any(|&z| z != 0.0 && z != 1.0) {
        return Err(Error::ShapeMismatch("closed form needs a binary 0/1 instrument".into()));
    }
    Ok(())
}

/// `(beta, gamma)` from stratum summaries. `weights` combines the two
/// per-stratum effect estimates; `None` averages them unweighted.
pub fn closed_form_from_moments(input: &ClosedFormInput, weights: Option<[f64; 2]>) -> Result<(f64, f64)> {
    if !(input.s0 > 0.0 && input.s1 > 0.0) {
        return Err(Error::InvalidArgument("stratum variances must be positive".into()));
    }
    let ds = input.s1 - input.s0;
    if ds.abs() < 1e-8 * (input.s1 + input.s0) {
        return Err(Error::NotIdentified(
            "variance not identified: outcome variance is equal across instrument levels".into(),
        ));
    }
    let gamma = (input.d1 - input.d0) / ds;
    let b0 = input.d0 - gamma * input.s0;
    let b1 = input.d1 - gamma * input.s1;
    let [w0, w1] = weights.unwrap_or([1.0, 1.0]);
    Ok(((w0 * b0 + w1 * b1) / (w0 + w1), gamma))
}

fn point(data: &Dataset, weighting: BetaWeighting) -> Result<Theta> {
    let m = StratumMoments::from_data(data)?;
    let weights = match weighting {
        BetaWeighting::InverseVariance => Some(m.precision()),
        BetaWeighting::Unweighted => None,
    };
    let (beta, gamma) = closed_form_from_moments(&m.input(), weights)?;
    let eta0 = m.pooled_var[0].ln();
    Ok(Theta {
        beta,
        gamma,
        theta0: m.mean[0][0],
        thetaz: vec![m.mean[1][0] - m.mean[0][0]],
        eta0,
        etaz: vec![m.pooled_var[1].ln() - eta0],
    })
}

/// Closed-form estimate on binary `(A, Z)` data with bootstrap standard
/// errors. The treatment is used as coded (0 = unexposed).
pub fn closed_form_binary(data: &Dataset, opts: &ClosedFormOptions) -> Result<EstimateResult> {
    let theta = point(data, opts.weighting)?;
    let k = theta.k();
    let boot = bootstrap_se(data, opts.bootstrap, k, |d| point(d, opts.weighting).map(|t| t.to_vec()))?;
    let mut out = EstimateResult::new(theta, boot.se, Method::ClosedForm, 0.0)?;
    if boot.failed > 0 {
        out.warnings.push(format!("{} bootstrap resamples failed", boot.failed));
    }
    Ok(out)
}
