mod common;

use common::{is_symmetric, min_relative_eigenvalue, study_strategy};
use paircal::calibration::{calibrate_study, pooled_distribution};
use paircal::glm::{fit, fit_study, study_outcomes, DesignOptions, FitOptions};
use paircal::model::ArmRole;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn calibrated_means_stay_within_fitted_values(study in study_strategy(2..=5)) {
        let (design, f) = fit_study(&study, DesignOptions::default(), FitOptions::default()).unwrap();
        let cal = calibrate_study(&study, &design, &f).unwrap();
        for (p, pair) in study.pairs().iter().enumerate() {
            let pooled = pooled_distribution(pair, study.schema());
            for role in ArmRole::BOTH {
                let fitted: Vec<f64> = pooled.encoded.iter().map(|x| design.row_for(p, role, x).dot(&f.theta)).collect();
                let lo = fitted.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = fitted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let m = cal.mu[(p, role.index())];
                let slack = 1e-10 * (1.0 + hi.abs().max(lo.abs()));
                prop_assert!(m >= lo - slack && m <= hi + slack);
            }
        }
    }

    #[test]
    fn swapping_a_pair_negates_its_difference(study in study_strategy(2..=5), pick in any::<prop::sample::Index>()) {
        let n = study.n_pairs();
        let target = pick.index(n);
        let flip: Vec<bool> = (0..n).map(|p| p == target).collect();
        let run = |s: &paircal::model::Study| {
            let (d, f) = fit_study(s, DesignOptions::default(), FitOptions::default()).unwrap();
            calibrate_study(s, &d, &f).unwrap()
        };
        let a = run(&study);
        let b = run(&study.with_swapped(&flip));
        for p in 0..n {
            let expected = if p == target { -a.deltas[p].delta } else { a.deltas[p].delta };
            prop_assert!((b.deltas[p].delta - expected).abs() <= 1e-10 * (1.0 + expected.abs()));
        }
    }

    #[test]
    fn covariances_are_symmetric_psd(study in study_strategy(2..=5), slopes in prop::bool::ANY) {
        let (d, f) = fit_study(&study, DesignOptions { arm_specific_slopes: slopes }, FitOptions::default()).unwrap();
        let cal = calibrate_study(&study, &d, &f).unwrap();
        for m in [&cal.covariance, &cal.delta_covariance] {
            prop_assert!(is_symmetric(m, 1e-12));
            prop_assert!(min_relative_eigenvalue(m) >= -1e-8);
        }
    }

    #[test]
    fn outcome_shift_leaves_differences(study in study_strategy(2..=5), b in -100.0f64..100.0) {
        let run = |s: &paircal::model::Study| {
            let (d, f) = fit_study(s, DesignOptions::default(), FitOptions::default()).unwrap();
            calibrate_study(s, &d, &f).unwrap()
        };
        let a = run(&study);
        let moved = run(&study.map_outcomes(|y| y + b).unwrap());
        for (x, y) in a.deltas.iter().zip(&moved.deltas) {
            prop_assert!((x.delta - y.delta).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn zero_slopes_give_sandwich_cell_variances(study in study_strategy(2..=5)) {
        let (full, _) = fit_study(&study, DesignOptions::default(), FitOptions::default()).unwrap();
        let design = full.intercepts_only();
        let f = fit(&design, &study_outcomes(&study), FitOptions::default()).unwrap();
        let cal = calibrate_study(&study, &design, &f).unwrap();
        for (p, pair) in study.pairs().iter().enumerate() {
            // HC0 variance of a cell mean: Σ e² / n².
            let oracle: f64 = ArmRole::BOTH
                .iter()
                .map(|&r| {
                    let y: Vec<f64> = pair.arm(r).outcomes().collect();
                    let n = y.len() as f64;
                    let m = y.iter().sum::<f64>() / n;
                    y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n * n)
                })
                .sum();
            let got = cal.delta_covariance[(p, p)];
            prop_assert!((got - oracle).abs() <= 1e-9 * oracle, "{} vs {}", got, oracle);
            let crude = paircal::model::crude_pair_summary(pair);
            prop_assert!((cal.deltas[p].delta - crude.delta).abs() <= 1e-10 * (1.0 + crude.delta.abs()));
        }
    }
}
