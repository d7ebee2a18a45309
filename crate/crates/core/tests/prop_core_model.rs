mod common;

use common::{close, study_strategy};
use paircal::model::{arm_mean_and_variance, crude_summaries, ArmRole};
use paircal::stats::{jackknife_se, mean};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn swapping_labels_negates_delta(study in study_strategy(1..=6), mask in any::<u32>()) {
        let flip: Vec<bool> = (0..study.n_pairs()).map(|p| mask >> p & 1 == 1).collect();
        let before = crude_summaries(&study);
        let after = crude_summaries(&study.with_swapped(&flip));
        for ((b, a), f) in before.iter().zip(&after).zip(&flip) {
            let expected = if *f { -b.delta } else { b.delta };
            prop_assert_eq!(a.delta, expected);
            prop_assert!(close(a.variance, b.variance, 1e-14));
        }
    }

    #[test]
    fn location_and_scale_of_outcomes(study in study_strategy(1..=5), c in -50.0f64..50.0, a in 0.1f64..10.0) {
        let base = crude_summaries(&study);
        let shifted = crude_summaries(&study.map_outcomes(|y| y + c).unwrap());
        let scaled = crude_summaries(&study.map_outcomes(|y| a * y).unwrap());
        for ((b, s), m) in base.iter().zip(&shifted).zip(&scaled) {
            prop_assert!((s.delta - b.delta).abs() <= 1e-10 * (1.0 + c.abs()));
            prop_assert!(close(s.variance, b.variance, 1e-8));
            prop_assert!(close(m.delta, a * b.delta, 1e-10));
            prop_assert!(close(m.variance, a * a * b.variance, 1e-10));
        }
    }

    #[test]
    fn mean_variance_is_jackknife_variance(study in study_strategy(1..=3)) {
        for pair in study.pairs() {
            for role in ArmRole::BOTH {
                let arm = pair.arm(role);
                let y: Vec<f64> = arm.outcomes().collect();
                let (_, v) = arm_mean_and_variance(arm);
                let jk = jackknife_se(&y, mean).powi(2);
                prop_assert!((v - jk).abs() <= 1e-10 * v, "{} vs {}", v, jk);
            }
        }
    }
}
