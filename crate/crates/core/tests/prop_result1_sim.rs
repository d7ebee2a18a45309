mod common;

use paircal::result1::{plim_mle, simulate_mle, Result1Config};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn unit_variance_ratio_has_zero_limit(n in 1u32..100_000, v in 0.01f64..100.0) {
        prop_assert_eq!(plim_mle(&Result1Config { sigma2: 1.0, n_per_arm: n, var_delta: v, ..Default::default() }), 0.0);
    }

    #[test]
    fn limit_sign_follows_variance_ratio(sigma2 in 0.01f64..50.0, n in 1u32..1000) {
        prop_assume!((sigma2 - 1.0).abs() > 1e-6);
        let p = plim_mle(&Result1Config { sigma2, n_per_arm: n, ..Default::default() });
        prop_assert_eq!(p.signum(), (1.0 - sigma2).signum());
    }

    #[test]
    fn doubling_pairs_shrinks_mc_se_by_root_two(sigma2 in 0.25f64..9.0, n in 2u32..50, seed in any::<u32>()) {
        // Average over a few seeds so the jackknife noise in each se is small.
        let mut small = 0.0;
        let mut large = 0.0;
        for k in 0..8u64 {
            let cfg = Result1Config { sigma2, n_per_arm: n, num_pairs: 5_000, seed: u64::from(seed) * 16 + k, ..Default::default() };
            small += simulate_mle(&cfg).unwrap().mc_se;
            large += simulate_mle(&Result1Config { num_pairs: 10_000, ..cfg }).unwrap().mc_se;
        }
        let ratio = large / small;
        let target = std::f64::consts::FRAC_1_SQRT_2;
        prop_assert!((ratio / target - 1.0).abs() < 0.2, "ratio {}", ratio);
    }

    #[test]
    fn unweighted_mean_is_centred(sigma2 in 0.25f64..9.0, n in 2u32..50, seed in any::<u64>()) {
        let s = simulate_mle(&Result1Config { sigma2, n_per_arm: n, num_pairs: 20_000, seed, ..Default::default() }).unwrap();
        // 4 SEs keeps the per-case false-alarm rate near 6e-5.
        prop_assert!(s.unweighted_mean.abs() < 4.0 * s.unweighted_se, "{} ± {}", s.unweighted_mean, s.unweighted_se);
    }
}
