mod common;

use common::{Objective, TinyCase, ALL_OBJECTIVES, FD_REL_TOL};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn tape_gradients_match_central_differences(seed in any::<u64>()) {
        let case = TinyCase::random(seed);
        for obj in ALL_OBJECTIVES {
            let worst = case.worst_fd_error(obj);
            prop_assert!(worst < FD_REL_TOL, "{obj:?}: worst relative error {worst:e}");
        }
    }
}

#[test]
fn fairness_gradient_reaches_the_decoder_only_through_decodings() {
    // With a one-step path, the decoder receives gradient from the fairness term;
    // the frozen attribute model is a tape constant, so it never receives any.
    let mut case = TinyCase::random(3);
    case.shared = decnn::objectives::PathSpec::new(vec![1], case.bundle.arch.blocks).unwrap();
    let g = case.graph(&case.bundle, &case.x, Objective::Fairness, false).unwrap();
    let grads = g.param_grads().unwrap();
    let decoder_norm: f64 = grads.iter().rev().take(4).map(|t| t.data().iter().map(|v| v * v).sum::<f64>()).sum();
    assert!(decoder_norm > 0.0);
    assert_eq!(grads.len(), case.bundle.params().len());
}

