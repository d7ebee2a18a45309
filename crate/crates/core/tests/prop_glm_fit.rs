mod common;

use common::{close, study_strategy};
use paircal::glm::{fit_study, study_outcomes, DesignOptions, FitOptions, RobustUnit, SandwichFlavor};
use paircal::model::validate_study;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn flavors() -> impl Strategy<Value = FitOptions> {
    (prop::bool::ANY, prop::bool::ANY).prop_map(|(hc1, practice)| FitOptions {
        sandwich: if hc1 { SandwichFlavor::HC1 } else { SandwichFlavor::HC0 },
        robust_unit: if practice { RobustUnit::Practice } else { RobustUnit::Patient },
        ..Default::default()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn residuals_are_orthogonal_to_columns(study in study_strategy(2..=5), slopes in prop::bool::ANY) {
        let (design, fit) = fit_study(&study, DesignOptions { arm_specific_slopes: slopes }, FitOptions::default()).unwrap();
        let y = study_outcomes(&study);
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let score = design.matrix().transpose() * &fit.residuals;
        prop_assert!(score.amax() < 1e-8 * norm, "{}", score.amax());
    }

    #[test]
    fn sandwich_ignores_row_order(study in study_strategy(2..=4), opts in flavors(), seed in any::<u64>()) {
        let (_, base) = fit_study(&study, DesignOptions::default(), opts).unwrap();
        let mut raw = study.to_raw();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        raw.arms.shuffle(&mut rng);
        for arm in &mut raw.arms {
            arm.records.shuffle(&mut rng);
        }
        let (_, shuffled) = fit_study(&validate_study(raw).unwrap(), DesignOptions::default(), opts).unwrap();
        let scale = base.covariance.amax();
        prop_assert!((&base.covariance - &shuffled.covariance).amax() <= 1e-9 * scale);
        prop_assert!((&base.theta - &shuffled.theta).amax() <= 1e-9 * (1.0 + base.theta.amax()));
    }

    #[test]
    fn affine_outcomes_map_coefficients(study in study_strategy(2..=4), a in 0.2f64..5.0, b in -20.0f64..20.0, opts in flavors()) {
        let (_, base) = fit_study(&study, DesignOptions::default(), opts).unwrap();
        let (_, moved) = fit_study(&study.map_outcomes(|y| a * y + b).unwrap(), DesignOptions::default(), opts).unwrap();
        let cells = base.n_cells();
        for j in 0..base.theta.len() {
            let expected = if j < cells { a * base.theta[j] + b } else { a * base.theta[j] };
            prop_assert!(close(moved.theta[j], expected, 1e-8), "{}: {} vs {}", j, moved.theta[j], expected);
        }
        let scaled = &base.covariance * (a * a);
        prop_assert!((&moved.covariance - &scaled).amax() <= 1e-7 * scaled.amax());
    }
}
