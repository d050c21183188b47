use misteri::estimators::{
    closed_form_binary, three_stage_point, BetaWeighting, Bootstrap, ClosedFormOptions, ThreeStageOptions,
    VarianceModel,
};
use proptest::prelude::*;

mod common;
use common::{binary_dataset, close, closed_form_oracle as oracle};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn closed_form_matches_direct_computation(seed in any::<u64>(), eta in 0.3f64..1.0, beta in -1.0f64..1.0, gamma in -0.5f64..0.5) {
        let d = binary_dataset(seed, 5000, eta, beta, gamma);
        let (ob, og) = oracle(&d);
        for weighting in [BetaWeighting::InverseVariance, BetaWeighting::Unweighted] {
            let opts = ClosedFormOptions { weighting, bootstrap: Bootstrap::disabled() };
            let r = closed_form_binary(&d, &opts).unwrap();
            prop_assert!(close(r.beta(), ob, 1e-10), "{} vs {ob}", r.beta());
            prop_assert!(close(r.gamma(), og, 1e-10), "{} vs {og}", r.gamma());
        }
        let opts = ThreeStageOptions { variance: VarianceModel::Saturated, bootstrap: Bootstrap::disabled(), ..Default::default() };
        let t = three_stage_point(&d, &opts).unwrap();
        prop_assert!(close(t.beta, ob, 1e-8), "{} vs {ob}", t.beta);
        prop_assert!(close(t.gamma, og, 1e-8), "{} vs {og}", t.gamma);
    }
}

#[test]
fn closed_form_is_consistent() {
    let d = binary_dataset(1, 400_000, 0.7, 0.8, 0.2);
    let r = closed_form_binary(&d, &ClosedFormOptions { bootstrap: Bootstrap::new(50, 3), ..Default::default() }).unwrap();
    assert!((r.beta() - 0.8).abs() < 4.0 * r.se_beta(), "{} (se {})", r.beta(), r.se_beta());
    assert!((r.gamma() - 0.2).abs() < 4.0 * r.se_gamma(), "{} (se {})", r.gamma(), r.se_gamma());
}
