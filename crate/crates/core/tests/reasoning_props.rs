//! Confidence aggregation and chain parsing properties.

use proptest::prelude::*;
use xvqa_core::reasoning::{
    aggregate_confidence, default_step_weights, parse_chain, Flow, StepWeights, DEFAULT_STEP_CONFIDENCE,
    STEP_COUNT,
};

fn confidences() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.01f64..=1.0, STEP_COUNT)
}

fn weights() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.01f64..1.0, STEP_COUNT).prop_map(|w| {
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    })
}

proptest! {
    #[test]
    fn equal_confidences_are_returned(c in 0.01f64..=1.0, w in weights()) {
        let got = aggregate_confidence(&[c; STEP_COUNT], &w).unwrap();
        prop_assert!((got - c).abs() < 1e-12);
    }

    #[test]
    fn bounded_by_extremes(c in confidences(), w in weights()) {
        let got = aggregate_confidence(&c, &w).unwrap();
        let lo = c.iter().cloned().fold(f64::MAX, f64::min);
        let hi = c.iter().cloned().fold(f64::MIN, f64::max);
        prop_assert!(lo <= got && got <= hi);
        // harmonic mean never exceeds the arithmetic one
        let arith: f64 = c.iter().zip(&w).map(|(a, b)| a * b).sum();
        prop_assert!(got <= arith + 1e-12);
    }

    #[test]
    fn raising_one_step_never_lowers_the_total(c in confidences(), w in weights(), i in 0..STEP_COUNT, bump in 0.0f64..0.5) {
        let base = aggregate_confidence(&c, &w).unwrap();
        let mut up = c.clone();
        up[i] = (up[i] + bump).min(1.0);
        prop_assert!(aggregate_confidence(&up, &w).unwrap() >= base - 1e-12);
    }

    #[test]
    fn any_reply_parses_to_six_steps(reply in ".{0,400}") {
        let chain = parse_chain(&reply, Flow::AttentionGuided, default_step_weights());
        prop_assert_eq!(chain.steps.len(), STEP_COUNT);
        prop_assert!(chain.steps.iter().all(|s| s.confidence > 0.0 && s.confidence <= 1.0));
        prop_assert!(chain.overall_confidence > 0.0 && chain.overall_confidence <= 1.0);
    }
}

#[test]
fn reference_examples() {
    let w = default_step_weights();
    assert!((aggregate_confidence(&[0.85; 6], w.as_slice()).unwrap() - 0.85).abs() < 1e-12);
    assert_eq!(w.as_slice(), &[0.15, 0.15, 0.15, 0.15, 0.15, 0.25]);
    assert!(StepWeights::new([0.2; 6]).is_err());
    assert!(StepWeights::new([0.5, 0.5, 0.0, 0.0, 0.0, 0.0]).is_err());
    let empty = parse_chain("", Flow::Comparative, w);
    assert!(empty.steps.iter().all(|s| s.defaulted && s.confidence == DEFAULT_STEP_CONFIDENCE));
}
