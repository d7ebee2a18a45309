mod common;

use common::{close, summaries_strategy};
use paircal::effects::{
    bayes_uniform_shrinkage, first_level_mle, profile_mle, two_level_mle, BayesConfig, EffectEstimate, MarginalModel,
};
use paircal::model::PairSummary;
use paircal::stats::{jackknife_se, mean, sample_variance};
use proptest::prelude::*;

type Estimator = fn(&[PairSummary]) -> EffectEstimate;

fn estimators() -> [(&'static str, Estimator); 4] {
    [
        ("first level", |s| first_level_mle(s).unwrap()),
        ("two level", |s| two_level_mle(s, None).unwrap()),
        ("profile", |s| profile_mle(s, None).unwrap()),
        ("bayes", |s| bayes_uniform_shrinkage(s, None, BayesConfig::default()).unwrap()),
    ]
}

fn transformed(s: &[PairSummary], a: f64) -> Vec<PairSummary> {
    s.iter().map(|x| PairSummary { delta: a * x.delta, variance: a * a * x.variance, ..x.clone() }).collect()
}

fn p_close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => (a - b).abs() <= 1e-6,
        (None, None) => true,
        _ => false,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn scale_equivariance(s in summaries_strategy(3..=9), a in 0.1f64..10.0) {
        let t = transformed(&s, a);
        for (name, est) in estimators() {
            let (x, y) = (est(&s), est(&t));
            prop_assert!(close(y.point, a * x.point, 1e-6), "{}: {} vs {}", name, y.point, a * x.point);
            prop_assert!(close(y.ci95.0, a * x.ci95.0, 1e-6), "{} lower", name);
            prop_assert!(close(y.ci95.1, a * x.ci95.1, 1e-6), "{} upper", name);
            prop_assert!(p_close(x.p_value, y.p_value), "{} p", name);
        }
    }

    #[test]
    fn sign_equivariance(s in summaries_strategy(3..=9)) {
        let t = transformed(&s, -1.0);
        for (name, est) in estimators() {
            let (x, y) = (est(&s), est(&t));
            prop_assert!(close(y.point, -x.point, 1e-7), "{}: {} vs {}", name, y.point, -x.point);
            prop_assert!(close(y.ci95.0, -x.ci95.1, 1e-6), "{} lower", name);
            prop_assert!(close(y.ci95.1, -x.ci95.0, 1e-6), "{} upper", name);
            prop_assert!(p_close(x.p_value, y.p_value), "{} p", name);
        }
    }

    #[test]
    fn point_is_weighted_mean_at_fitted_tau2(s in summaries_strategy(2..=10)) {
        let e = two_level_mle(&s, None).unwrap();
        let tau2 = e.tau2.unwrap();
        let w: Vec<f64> = s.iter().map(|x| 1.0 / (x.variance + tau2)).collect();
        let ivw = s.iter().zip(&w).map(|(x, w)| x.delta * w).sum::<f64>() / w.iter().sum::<f64>();
        prop_assert!((e.point - ivw).abs() <= 1e-8 * (1.0 + ivw.abs()));
    }

    #[test]
    fn profile_and_two_level_points_agree(s in summaries_strategy(2..=10)) {
        let a = two_level_mle(&s, None).unwrap().point;
        let b = profile_mle(&s, None).unwrap().point;
        prop_assert!((a - b).abs() <= 1e-8 * (1.0 + a.abs()));
    }

    #[test]
    fn jackknife_se_of_mean(d in prop::collection::vec(-100.0f64..100.0, 2..40)) {
        let se = jackknife_se(&d, mean);
        let direct = (sample_variance(&d) / d.len() as f64).sqrt();
        prop_assert!((se - direct).abs() <= 1e-10 * direct.max(1e-300));
    }

    #[test]
    fn optimum_dominates_grid(s in summaries_strategy(2..=8)) {
        let model = MarginalModel::new(&s, None).unwrap();
        let (delta, tau2) = model.mle();
        let best = model.loglik(delta, tau2);
        let d: Vec<f64> = s.iter().map(|x| x.delta).collect();
        let (lo, hi) = d.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
        let t_hi = 10.0 * sample_variance(&d).max(tau2) + 1e-9;
        for i in 0..=200 {
            let dd = lo + (hi - lo) * i as f64 / 200.0;
            for j in 0..=200 {
                let tt = t_hi * j as f64 / 200.0;
                let l = model.loglik(dd, tt);
                prop_assert!(best >= l - 1e-9 * (1.0 + l.abs()), "grid ({}, {}) beats optimum: {} > {}", dd, tt, l, best);
            }
        }
    }
}
