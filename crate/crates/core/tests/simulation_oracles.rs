use misteri::estimate::EstimatorConfig;
use misteri::estimators::{tsls_baseline, Method};
use misteri::model::{mu_eval, sigma2_eval};
use misteri::semiparam::{semiparam_estimate, SemiparamOptions};
use misteri::estimators::Bootstrap;
use misteri::simulation::{generate, run_replicates, summarize, DesignKind, Scenario};

/// Per-stratum mean and variance of the true-mean residuals, compared with
/// zero and `sigma2(z)` within five standard errors.
fn check_strata(s: &Scenario) {
    let d = generate(s).unwrap();
    let t = s.true_theta();
    let mut groups: std::collections::BTreeMap<i64, Vec<f64>> = Default::default();
    for i in 0..d.n() {
        let z = d.z_row(i);
        let r = d.y()[i] - mu_eval(&t, d.a()[i], z).unwrap();
        let v = sigma2_eval(t.eta0, &t.etaz, z).unwrap();
        // Key by the variance index so equal-variance rows pool together.
        groups.entry((v.ln() * 1e6).round() as i64).or_default().push(r / v.sqrt());
    }
    for (key, r) in groups {
        let n = r.len() as f64;
        if n < 1000.0 {
            continue;
        }
        let m = r.iter().sum::<f64>() / n;
        let var = r.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(m.abs() < 5.0 / n.sqrt(), "{:?} stratum {key}: mean {m}", s.design);
        assert!((var - 1.0).abs() < 5.0 * (2.0 / n).sqrt(), "{:?} stratum {key}: var {var}", s.design);
    }
}

#[test]
fn generator_moments_by_stratum() {
    check_strata(&Scenario::table1(1_000_000, 0.2, 5));
    check_strata(&Scenario::table2(200_000, 20, 6));
    check_strata(&Scenario::null_effect(500_000, 7));
    check_strata(&Scenario::homoscedastic(500_000, 8));
}

#[test]
fn table1_variance_in_z1_stratum() {
    let s = Scenario::table1(1_000_000, 0.2, 12);
    let d = generate(&s).unwrap();
    let t = s.true_theta();
    let r: Vec<f64> = (0..d.n())
        .filter(|&i| d.z_row(i)[0] == 1.0)
        .map(|i| d.y()[i] - mu_eval(&t, d.a()[i], d.z_row(i)).unwrap())
        .collect();
    let n = r.len() as f64;
    let m = r.iter().sum::<f64>() / n;
    let var = r.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((var - 0.3f64.exp()).abs() < 0.02, "{var}");
}

#[test]
fn instruments_follow_binomial_coding() {
    let d = generate(&Scenario::table2(100_000, 3, 2)).unwrap();
    for j in 0..3 {
        let col: Vec<f64> = d.z_column(j).collect();
        assert!(col.iter().all(|v| [0.0, 1.0, 2.0].contains(v)));
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        // Binomial(2, 0.3): mean 0.6, variance 0.42.
        assert!((mean - 0.6).abs() < 5.0 * (0.42f64 / 1e5).sqrt(), "{mean}");
    }
}

#[test]
fn valid_iv_design_favors_tsls() {
    let d = generate(&Scenario::valid_iv(50_000, 3)).unwrap();
    let r = tsls_baseline(&d).unwrap();
    assert!((r.beta() - 0.8).abs() < 4.0 * r.se_beta(), "{} ({})", r.beta(), r.se_beta());
    // Ordinary least squares is confounded by the shared disturbance.
    let n = d.n() as f64;
    let (ma, my) = (d.a().iter().sum::<f64>() / n, d.y().iter().sum::<f64>() / n);
    let cov: f64 = (0..d.n()).map(|i| (d.a()[i] - ma) * (d.y()[i] - my)).sum();
    let var: f64 = d.a().iter().map(|a| (a - ma).powi(2)).sum();
    assert!(cov / var - 0.8 > 0.1);
}

#[test]
fn harness_is_deterministic_and_handles_one_replicate() {
    let s = Scenario::table1(2000, 0.5, 100);
    let cfg = EstimatorConfig::default();
    let a = run_replicates(&s, Method::OneStep, 6, &cfg).unwrap();
    let b = run_replicates(&s, Method::OneStep, 6, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(summarize(&s, Method::OneStep, &a).unwrap(), summarize(&s, Method::OneStep, &b).unwrap());
    assert!(a.iter().enumerate().all(|(r, rec)| rec.seed == 100 + r as u64));

    let one = summarize(&s, Method::OneStep, &a[..1]).unwrap();
    assert!(one.beta.sd.is_none() && one.gamma.sd.is_none());
    assert_eq!(one.reps, 1);
    assert!(run_replicates(&s, Method::OneStep, 0, &cfg).is_err());
}

#[test]
fn failures_are_counted_and_flagged() {
    // Closed form cannot run on a continuous treatment: every replicate fails.
    let s = Scenario::table1(500, 0.2, 1);
    let recs = run_replicates(&s, Method::ClosedForm, 3, &EstimatorConfig::default()).unwrap();
    assert!(recs.iter().all(|r| !r.ok()));
    assert!(summarize(&s, Method::ClosedForm, &recs).is_err());
}

#[test]
fn homoscedastic_design_triggers_kappa_warning() {
    let s = Scenario::homoscedastic(5000, 30);
    let recs = run_replicates(&s, Method::Cmle, 20, &EstimatorConfig::default()).unwrap();
    let flagged = recs.iter().filter(|r| !r.ok() || r.kappa_warning).count();
    assert!(flagged >= 18, "{flagged} of 20");
}

#[test]
fn design_names_parse() {
    for d in DesignKind::ALL {
        assert_eq!(d.as_str().parse::<DesignKind>().unwrap(), d);
    }
    assert_eq!("table1".parse::<DesignKind>().unwrap(), DesignKind::Table1Normal);
}

#[test]
fn semiparam_recovers_effect() {
    let d = generate(&Scenario::table1(20_000, 0.5, 4)).unwrap();
    let r = semiparam_estimate(&d, &SemiparamOptions { bootstrap: Bootstrap::new(30, 4) }).unwrap();
    assert!((r.beta() - 0.8).abs() < 4.0 * r.se_beta(), "{} ({})", r.beta(), r.se_beta());
    assert!((r.gamma() - 0.2).abs() < 4.0 * r.se_gamma(), "{} ({})", r.gamma(), r.se_gamma());
    assert!(r.theta_hat.theta0.is_nan());
}
