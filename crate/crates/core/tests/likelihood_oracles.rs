use misteri::estimators::{cmle_fit, one_step_estimate, one_step_update, NewtonOptions};
use misteri::likelihood::{hessian, loglik, score};
use misteri::simulation::{generate, Scenario};
use misteri::{Dataset, Theta};
use proptest::prelude::*;

mod common;
use common::{fd_gradient, max_rel_err, oracle_loglik, random_instance, zero_score_instance};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn loglik_matches_direct_formula(seed in any::<u64>(), p in 1usize..4) {
        let (t, d) = random_instance(seed, 50, p);
        let a = loglik(&t, &d).unwrap();
        let b = oracle_loglik(&t.to_vec(), &d);
        prop_assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn score_matches_finite_differences(seed in any::<u64>(), p in 1usize..4) {
        let (t, d) = random_instance(seed, 50, p);
        let g = score(&t, &d).unwrap();
        let fd = fd_gradient(&t.to_vec(), &d);
        prop_assert!(max_rel_err(&g, &fd) < 1e-5, "{g:?} vs {fd:?}");
    }

    #[test]
    fn loglik_ignores_row_order(seed in any::<u64>()) {
        let (t, d) = random_instance(seed, 60, 2);
        let idx: Vec<usize> = (0..d.n()).rev().collect();
        let r = d.resample(&idx).unwrap();
        let (a, b) = (loglik(&t, &d).unwrap(), loglik(&t, &r).unwrap());
        prop_assert!((a - b).abs() <= 1e-11 * a.abs());
        prop_assert!(max_rel_err(&score(&t, &d).unwrap(), &score(&t, &r).unwrap()) < 1e-11);
    }
}

#[test]
fn hessian_is_symmetric_and_matches_score_differences() {
    let (t, d) = random_instance(5, 200, 2);
    let h = hessian(&t, &d).unwrap();
    let v = t.to_vec();
    for j in 0..v.len() {
        let step = 1e-5 * v[j].abs().max(1.0);
        let mut up = v.clone();
        let mut dn = v.clone();
        up[j] += step;
        dn[j] -= step;
        let su = score(&Theta::from_slice(&up, 2).unwrap(), &d).unwrap();
        let sd = score(&Theta::from_slice(&dn, 2).unwrap(), &d).unwrap();
        for i in 0..v.len() {
            let fd = (su[i] - sd[i]) / (2.0 * step);
            assert!((h[(i, j)] - fd).abs() < 1e-5 * fd.abs().max(1.0), "({i},{j}) {} vs {fd}", h[(i, j)]);
            assert_eq!(h[(i, j)], h[(j, i)]);
        }
    }
}

#[test]
fn one_step_is_identity_at_zero_score() {
    for seed in 0..20 {
        let (t, d) = zero_score_instance(seed);
        let g = score(&t, &d).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-11), "{g:?}");
        let r = one_step_update(&t, &d).unwrap();
        let diff = max_rel_err(&r.theta_hat.to_vec(), &t.to_vec());
        assert!(diff <= 1e-12, "seed {seed}: moved by {diff}");
    }
}

#[test]
fn cmle_invariances() {
    let d = generate(&Scenario::table2(4000, 2, 11)).unwrap();
    let base = cmle_fit(&d, None, &NewtonOptions::default()).unwrap();
    assert!(base.converged);

    // Row order.
    let idx: Vec<usize> = (0..d.n()).rev().collect();
    let r = cmle_fit(&d.resample(&idx).unwrap(), None, &NewtonOptions::default()).unwrap();
    assert!(max_rel_err(&r.theta_hat.to_vec(), &base.theta_hat.to_vec()) < 1e-7);

    // Instrument relabeling permutes the instrument coefficients.
    let swapped = d.select_instruments(&[1, 0]).unwrap();
    let s = cmle_fit(&swapped, None, &NewtonOptions::default()).unwrap();
    let (t0, t1) = (&base.theta_hat, &s.theta_hat);
    for (x, y) in [
        (t0.beta, t1.beta),
        (t0.gamma, t1.gamma),
        (t0.thetaz[0], t1.thetaz[1]),
        (t0.thetaz[1], t1.thetaz[0]),
        (t0.etaz[0], t1.etaz[1]),
        (t0.eta0, t1.eta0),
    ] {
        assert!((x - y).abs() < 1e-7, "{x} vs {y}");
    }

    // Shifting the treatment moves only the centering offset.
    let shifted = Dataset::new(
        d.y().to_vec(),
        d.a().iter().map(|a| a + 3.0).collect(),
        d.z().to_vec(),
        d.p(),
    )
    .unwrap();
    let s = cmle_fit(&shifted, None, &NewtonOptions::default()).unwrap();
    assert!(max_rel_err(&s.theta_hat.to_vec(), &base.theta_hat.to_vec()) < 1e-7);
    assert!((s.centering_offset - base.centering_offset - 3.0).abs() < 1e-12);

    // Shifting the outcome moves only the intercept.
    let s = cmle_fit(&d.with_outcome(d.y().iter().map(|y| y - 2.0).collect()).unwrap(), None, &NewtonOptions::default())
        .unwrap();
    let mut expect = base.theta_hat.clone();
    expect.theta0 -= 2.0;
    assert!(max_rel_err(&s.theta_hat.to_vec(), &expect.to_vec()) < 1e-7);
}

#[test]
fn one_step_tracks_cmle_at_large_n() {
    let d = generate(&Scenario::table1(100_000, 0.2, 3)).unwrap();
    let os = one_step_estimate(&d).unwrap();
    let ml = cmle_fit(&d, None, &NewtonOptions::default()).unwrap();
    assert!((os.beta() - ml.beta()).abs() < 0.1 * ml.se_beta(), "{} vs {}", os.beta(), ml.beta());
    assert!((os.gamma() - ml.gamma()).abs() < 0.1 * ml.se_gamma());
    assert!((os.se_beta() / ml.se_beta() - 1.0).abs() < 0.05);
}
