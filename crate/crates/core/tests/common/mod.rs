#![allow(dead_code)]

use paircal::model::{
    validate_study, ArmRole, ClusterArm, CovariateKind, CovariateSchema, CovariateSpec, CovariateVector, PairId,
    PairSummary, PatientRecord, RawStudy, Study, SummaryKind,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const CRUDE: [f64; 7] = [-0.8, -0.1, 0.3, 3.8, 4.5, -2.6, -1.3];
pub const CRUDE_SD: [f64; 7] = [2.7, 2.6, 2.0, 2.7, 2.1, 2.6, 2.2];
pub const CALIBR: [f64; 7] = [0.9, 3.0, 0.1, 1.9, 2.3, 0.5, 0.8];
pub const CALIBR_SD: [f64; 7] = [2.1, 2.4, 1.5, 2.0, 1.7, 2.2, 1.7];

pub fn summaries(deltas: &[f64], sds: &[f64], kind: SummaryKind) -> Vec<PairSummary> {
    deltas
        .iter()
        .zip(sds)
        .enumerate()
        .map(|(i, (&delta, &sd))| PairSummary {
            pair_id: PairId::new((i + 1).to_string()),
            delta,
            variance: sd * sd,
            kind,
        })
        .collect()
}

pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// `|a − b| ≤ tol·(1 + |b|)`.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + b.abs())
}

/// Random per-pair summaries with positive variances.
pub fn summaries_strategy(pairs: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<PairSummary>> {
    prop::collection::vec((-5.0f64..5.0, 0.3f64..3.0), pairs).prop_map(|rows| {
        let (d, s): (Vec<f64>, Vec<f64>) = rows.into_iter().unzip();
        summaries(&d, &s, SummaryKind::Crude)
    })
}

/// Shape of a generated patient-level study.
#[derive(Debug, Clone)]
pub struct StudySpec {
    pub seed: u64,
    pub n_pairs: usize,
    pub min_arm: usize,
    pub max_arm: usize,
    /// Slope of the outcome on the continuous covariate.
    pub beta_x: f64,
    /// Shift of the outcome for categorical level "b".
    pub beta_g: f64,
    /// Treatment effect added to control outcomes.
    pub effect: f64,
    /// Mean shift of the covariate in control arms (imbalance).
    pub imbalance: f64,
    pub with_covariates: bool,
}

impl Default for StudySpec {
    fn default() -> Self {
        StudySpec {
            seed: 0,
            n_pairs: 3,
            min_arm: 6,
            max_arm: 12,
            beta_x: 1.0,
            beta_g: 2.0,
            effect: 0.0,
            imbalance: 0.0,
            with_covariates: true,
        }
    }
}

pub fn schema_xg() -> CovariateSchema {
    CovariateSchema::new(vec![
        CovariateSpec { name: "x".into(), kind: CovariateKind::Continuous },
        CovariateSpec { name: "g".into(), kind: CovariateKind::Categorical { levels: vec!["a".into(), "b".into()] } },
    ])
}

/// Simulated study with a continuous covariate `x`, a two-level covariate
/// `g`, pair effects and normal noise.
pub fn make_study(spec: &StudySpec) -> Study {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut arms = Vec::new();
    for p in 0..spec.n_pairs {
        let pair_effect: f64 = 2.0 * rng.sample::<f64, _>(StandardNormal);
        for role in ArmRole::BOTH {
            let n = rng.random_range(spec.min_arm..=spec.max_arm);
            let id = PairId::new((p + 1).to_string());
            let records = (0..n)
                .map(|k| {
                    let shift = if role == ArmRole::Control { spec.imbalance } else { 0.0 };
                    let x = shift + rng.sample::<f64, _>(StandardNormal);
                    let g = if k % 3 == 1 || rng.random_bool(0.3) { "b" } else { "a" };
                    let noise: f64 = rng.sample(StandardNormal);
                    let mut y = 10.0 + pair_effect + noise;
                    if role == ArmRole::Control {
                        y += spec.effect;
                    }
                    let covariates = if spec.with_covariates {
                        y += spec.beta_x * x + if g == "b" { spec.beta_g } else { 0.0 };
                        CovariateVector { continuous: vec![x], categorical: vec![g.into()] }
                    } else {
                        CovariateVector::default()
                    };
                    PatientRecord::new(id.clone(), role, y, covariates)
                })
                .collect();
            let n_served = n as u64 * rng.random_range(1..=20);
            arms.push(ClusterArm { pair_id: id, role, n_served, records });
        }
    }
    let schema = if spec.with_covariates { schema_xg() } else { CovariateSchema::default() };
    validate_study(RawStudy { schema, arms }).expect("generated study is valid")
}

pub fn study_strategy(n_pairs: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Study> {
    (any::<u64>(), n_pairs).prop_map(|(seed, n_pairs)| make_study(&StudySpec { seed, n_pairs, ..Default::default() }))
}

/// Smallest eigenvalue of a symmetric matrix relative to its largest.
pub fn min_relative_eigenvalue(m: &nalgebra::DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, v| a.min(*v));
    if max == 0.0 {
        0.0
    } else {
        min / max
    }
}

pub fn is_symmetric(m: &nalgebra::DMatrix<f64>, tol: f64) -> bool {
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    (m - m.transpose()).iter().all(|v| v.abs() <= tol * scale)
}
