use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::Dataset;

/// Standard normal quantile.
pub fn normal_quantile(prob: f64) -> f64 {
    Normal::standard().inverse_cdf(prob)
}

/// Two-sided p-value of a Wald z statistic.
pub fn two_sided_pvalue(est: f64, se: f64) -> f64 {
    if !(se > 0.0) || !est.is_finite() {
        return f64::NAN;
    }
    2.0 * Normal::standard().sf((est / se).abs())
}

/// Symmetric Wald interval `theta +/- q * se` at the given level.
pub fn wald_ci(theta_hat: &[f64], se: &[f64], level: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("confidence level {level} not in (0, 1)")));
    }
    if theta_hat.len() != se.len() {
        return Err(Error::InvalidArgument("estimate and standard error lengths differ".into()));
    }
    let q = normal_quantile(0.5 + level / 2.0);
    let low = theta_hat.iter().zip(se).map(|(t, s)| t - q * s).collect();
    let high = theta_hat.iter().zip(se).map(|(t, s)| t + q * s).collect();
    Ok((low, high))
}

/// Nonparametric bootstrap settings. Resample `b` draws its indices from
/// stream `b` of a ChaCha generator keyed by `seed`, so results do not depend
/// on scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bootstrap {
    pub resamples: usize,
    pub seed: u64,
}

impl Bootstrap {
    pub const fn new(resamples: usize, seed: u64) -> Self {
        Self { resamples, seed }
    }

    pub const fn disabled() -> Self {
        Self { resamples: 0, seed: 0 }
    }
}

/// Outcome of a bootstrap run.
#[derive(Debug, Clone)]
pub struct BootstrapSummary {
    pub se: Vec<f64>,
    pub succeeded: usize,
    pub failed: usize,
}

pub(crate) fn resample_indices(n: usize, seed: u64, stream: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

/// Bootstrap standard errors of `estimate`, which maps a dataset to a fixed
/// length vector. Resamples whose fit fails are skipped and counted.
pub fn bootstrap_se<F>(data: &Dataset, cfg: Bootstrap, len: usize, estimate: F) -> Result<BootstrapSummary>
where
    F: Fn(&Dataset) -> Result<Vec<f64>> + Sync + Send,
{
    if cfg.resamples == 0 {
        return Ok(BootstrapSummary { se: vec![f64::NAN; len], succeeded: 0, failed: 0 });
    }
    let draws: Vec<Option<Vec<f64>>> = (0..cfg.resamples)
        .into_par_iter()
        .map(|b| {
            let idx = resample_indices(data.n(), cfg.seed, b as u64);
            data.resample(&idx)
                .and_then(|d| estimate(&d))
                .ok()
                .filter(|v| v.len() == len && v.iter().all(|x| x.is_finite()))
        })
        .collect();
    let ok: Vec<&Vec<f64>> = draws.iter().flatten().collect();
    let failed = cfg.resamples - ok.len();
    if ok.len() < 2 || failed * 2 > cfg.resamples {
        return Err(Error::Divergence(format!(
            "bootstrap failed: {failed} of {} resamples could not be fit",
            cfg.resamples
        )));
    }
    let m = ok.len() as f64;
    let se = (0..len)
        .map(|j| {
            let mean = ok.iter().map(|v| v[j]).sum::<f64>() / m;
            (ok.iter().map(|v| (v[j] - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
        })
        .collect();
    Ok(BootstrapSummary { se, succeeded: ok.len(), failed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn wald_examples() {
        let (lo, hi) = wald_ci(&[0.8], &[0.092], 0.95).unwrap();
        assert_relative_eq!(lo[0], 0.8 - 1.959964 * 0.092, epsilon = 1e-6);
        assert_relative_eq!(lo[0], 0.6197, epsilon = 1e-4);
        assert_relative_eq!(hi[0], 0.9803, epsilon = 1e-4);
        let (lo, hi) = wald_ci(&[0.3], &[0.0], 0.95).unwrap();
        assert_eq!((lo[0], hi[0]), (0.3, 0.3));
        assert_relative_eq!(normal_quantile(0.75), 0.674490, epsilon = 1e-6);
        let (lo, _) = wald_ci(&[0.0], &[1.0], 0.5).unwrap();
        assert_relative_eq!(lo[0], -0.674490, epsilon = 1e-6);
        assert!(wald_ci(&[0.0], &[1.0], 1.0).is_err());
        assert!(wald_ci(&[0.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn pvalue() {
        assert_relative_eq!(two_sided_pvalue(1.959964, 1.0), 0.05, epsilon = 1e-6);
        assert!(two_sided_pvalue(1.0, 0.0).is_nan());
    }

    #[test]
    fn resampling_is_reproducible() {
        assert_eq!(resample_indices(100, 7, 3), resample_indices(100, 7, 3));
        assert_ne!(resample_indices(100, 7, 3), resample_indices(100, 7, 4));
    }

    #[test]
    fn bootstrap_of_mean_matches_theory() {
        let n = 2000;
        let y: Vec<f64> = (0..n).map(|i| ((i * 7919) % 1000) as f64 / 1000.0).collect();
        let z: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let d = Dataset::new(y.clone(), vec![0.0; n], z, 1).unwrap();
        let s = bootstrap_se(&d, Bootstrap::new(400, 1), 1, |d| {
            Ok(vec![d.y().iter().sum::<f64>() / d.n() as f64])
        })
        .unwrap();
        let mean = y.iter().sum::<f64>() / n as f64;
        let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let expected = sd / (n as f64).sqrt();
        assert!((s.se[0] / expected - 1.0).abs() < 0.15, "{} vs {}", s.se[0], expected);
        assert_eq!(s.failed, 0);
    }
}
