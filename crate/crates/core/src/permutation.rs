//! Randomization tests that re-assign treatment labels within pairs.
//!
//! Swapping the labels of pair `p` negates its difference and leaves its
//! variance unchanged, so for summary-level inputs a permutation is a sign
//! vector `ε ∈ {−1, +1}^N`. The refit variants instead swap the arms of a
//! patient-level study and recompute the calibrated differences.
//!
//! Monte Carlo draws are generated in fixed-size shards; shard `k` uses the
//! ChaCha8 stream `k` of the user seed, so results do not depend on the
//! number of worker threads.

use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::calibrate_study;
use crate::effects::MarginalModel;
use crate::error::{Error, Result};
use crate::glm::{fit_study, DesignOptions, FitOptions};
use crate::model::{PairSummary, Study};
use crate::stats;

/// Largest number of pairs enumerated exactly (2^25 ≈ 3.4·10⁷ evaluations).
pub const MAX_EXACT_PAIRS: usize = 25;
pub const MIN_MC_DRAWS: u64 = 1000;
const SHARD: u64 = 4096;
const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum StatisticSpec {
    UnweightedMean,
    /// Point estimate of the two-level MLE, refitted for every arrangement.
    TwoLevelMle {
        variances: Vec<f64>,
        full_cov: Option<DMatrix<f64>>,
    },
    /// Mean of calibrated differences; sign flips are the label-swap images.
    FirstLevelCalibratedMean,
}

impl StatisticSpec {
    pub fn two_level(summaries: &[PairSummary]) -> Self {
        StatisticSpec::TwoLevelMle { variances: summaries.iter().map(|s| s.variance).collect(), full_cov: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PermutationMode {
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub p_value: f64,
    pub n_permutations: u64,
    /// Arrangements with `|statistic| ≥ |observed|`, observed included in exact mode.
    pub exceedances: u64,
    pub mode: PermutationMode,
    pub statistic_observed: f64,
    pub statistic_distribution: Option<Vec<f64>>,
}

/// Evaluates a statistic on sign-flipped differences.
struct Evaluator<'a> {
    deltas: &'a [f64],
    model: Option<MarginalModel>,
}

impl<'a> Evaluator<'a> {
    fn new(deltas: &'a [f64], spec: &StatisticSpec) -> Result<Self> {
        let model = match spec {
            StatisticSpec::TwoLevelMle { variances, full_cov } => {
                if variances.len() != deltas.len() {
                    return Err(Error::Dimension(format!(
                        "{} variances for {} differences",
                        variances.len(),
                        deltas.len()
                    )));
                }
                let summaries: Vec<PairSummary> = deltas
                    .iter()
                    .zip(variances)
                    .enumerate()
                    .map(|(i, (&delta, &variance))| PairSummary {
                        pair_id: crate::model::PairId(i.to_string()),
                        delta,
                        variance,
                        kind: crate::model::SummaryKind::Crude,
                    })
                    .collect();
                Some(MarginalModel::new(&summaries, full_cov.as_ref())?)
            }
            _ => None,
        };
        Ok(Evaluator { deltas, model })
    }

    fn eval(&self, signs: &[f64]) -> f64 {
        match &self.model {
            None => self.deltas.iter().zip(signs).map(|(d, s)| d * s).sum::<f64>() / self.deltas.len() as f64,
            Some(m) => m.sign_flipped(signs).mle().0,
        }
    }
}

fn signs_from_bits(bits: u64, n: usize, out: &mut [f64]) {
    for (i, s) in out.iter_mut().enumerate().take(n) {
        *s = if bits >> i & 1 == 1 { -1.0 } else { 1.0 };
    }
}

fn exceeds(t: f64, observed: f64) -> bool {
    t.abs() >= observed.abs() * (1.0 - TIE_TOLERANCE) - f64::MIN_POSITIVE
}

/// Enumerates all `2^N` sign assignments.
pub fn permute_exact(deltas: &[f64], statistic: &StatisticSpec, keep_distribution: bool) -> Result<PermutationResult> {
    let n = deltas.len();
    if n == 0 {
        return Err(Error::TooFewPairs { needed: 1, got: 0 });
    }
    if n > MAX_EXACT_PAIRS {
        return Err(Error::TooManyPairs { n, max: MAX_EXACT_PAIRS });
    }
    let eval = Evaluator::new(deltas, statistic)?;
    let observed = eval.eval(&vec![1.0; n]);
    let total = 1u64 << n;

    let chunks: Vec<(u64, Vec<f64>)> = (0..total.div_ceil(SHARD))
        .into_par_iter()
        .map(|chunk| {
            let mut signs = vec![1.0; n];
            let mut count = 0;
            let mut dist = Vec::new();
            for bits in chunk * SHARD..((chunk + 1) * SHARD).min(total) {
                signs_from_bits(bits, n, &mut signs);
                let t = eval.eval(&signs);
                if exceeds(t, observed) {
                    count += 1;
                }
                if keep_distribution {
                    dist.push(t);
                }
            }
            (count, dist)
        })
        .collect();

    let exceedances: u64 = chunks.iter().map(|c| c.0).sum();
    let distribution = keep_distribution.then(|| chunks.into_iter().flat_map(|c| c.1).collect());
    Ok(PermutationResult {
        p_value: exceedances as f64 / total as f64,
        n_permutations: total,
        exceedances,
        mode: PermutationMode::Exact,
        statistic_observed: observed,
        statistic_distribution: distribution,
    })
}

fn shard_rng(seed: u64, shard: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(shard);
    rng
}

fn draw_signs(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    for block in out.chunks_mut(64) {
        let bits = rng.next_u64();
        let len = block.len();
        signs_from_bits(bits, len, block);
    }
}

/// Samples `n_draws` uniform sign vectors; `p = (b + 1) / (m + 1)`.
pub fn permute_monte_carlo(
    deltas: &[f64],
    statistic: &StatisticSpec,
    n_draws: u64,
    seed: u64,
) -> Result<PermutationResult> {
    let n = deltas.len();
    if n == 0 {
        return Err(Error::TooFewPairs { needed: 1, got: 0 });
    }
    if n_draws < MIN_MC_DRAWS {
        return Err(Error::Config(format!("Monte Carlo permutation needs at least {MIN_MC_DRAWS} draws")));
    }
    let eval = Evaluator::new(deltas, statistic)?;
    let observed = eval.eval(&vec![1.0; n]);
    let exceedances: u64 = (0..n_draws.div_ceil(SHARD))
        .into_par_iter()
        .map(|shard| {
            let mut rng = shard_rng(seed, shard);
            let mut signs = vec![1.0; n];
            let draws = SHARD.min(n_draws - shard * SHARD);
            (0..draws)
                .filter(|_| {
                    draw_signs(&mut rng, &mut signs);
                    exceeds(eval.eval(&signs), observed)
                })
                .count() as u64
        })
        .sum();
    Ok(PermutationResult {
        p_value: (exceedances + 1) as f64 / (n_draws + 1) as f64,
        n_permutations: n_draws,
        exceedances,
        mode: PermutationMode::MonteCarlo,
        statistic_observed: observed,
        statistic_distribution: None,
    })
}

/// How the refit test enumerates arrangements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefitMode {
    Exact,
    MonteCarlo { draws: u64, seed: u64 },
}

/// Mean calibrated difference of the study with the flagged pairs' labels
/// swapped, refitting the outcome model.
pub fn refit_statistic(study: &Study, flip: &[bool], design: DesignOptions, fit: FitOptions) -> Result<f64> {
    let swapped = study.with_swapped(flip);
    let (d, f) = fit_study(&swapped, design, fit)?;
    let cal = calibrate_study(&swapped, &d, &f)?;
    let deltas: Vec<f64> = cal.deltas.iter().map(|s| s.delta).collect();
    Ok(stats::mean(&deltas))
}

/// Permutation test of the first-level calibrated mean with a full
/// label-swap, refit and recalibration per arrangement.
pub fn permute_refit(
    study: &Study,
    design: DesignOptions,
    fit: FitOptions,
    mode: RefitMode,
) -> Result<PermutationResult> {
    let n = study.n_pairs();
    let observed = refit_statistic(study, &vec![false; n], design, fit)?;
    let flags = |signs: &[f64]| signs.iter().map(|s| *s < 0.0).collect::<Vec<_>>();

    match mode {
        RefitMode::Exact => {
            if n > MAX_EXACT_PAIRS {
                return Err(Error::TooManyPairs { n, max: MAX_EXACT_PAIRS });
            }
            let total = 1u64 << n;
            let stats: Vec<f64> = (0..total)
                .into_par_iter()
                .map(|bits| {
                    let mut signs = vec![1.0; n];
                    signs_from_bits(bits, n, &mut signs);
                    refit_statistic(study, &flags(&signs), design, fit)
                })
                .collect::<Result<_>>()?;
            let exceedances = stats.iter().filter(|t| exceeds(**t, observed)).count() as u64;
            Ok(PermutationResult {
                p_value: exceedances as f64 / total as f64,
                n_permutations: total,
                exceedances,
                mode: PermutationMode::Exact,
                statistic_observed: observed,
                statistic_distribution: Some(stats),
            })
        }
        RefitMode::MonteCarlo { draws, seed } => {
            if draws < MIN_MC_DRAWS {
                return Err(Error::Config(format!("Monte Carlo permutation needs at least {MIN_MC_DRAWS} draws")));
            }
            let counts: Vec<u64> = (0..draws.div_ceil(SHARD))
                .into_par_iter()
                .map(|shard| -> Result<u64> {
                    let mut rng = shard_rng(seed, shard);
                    let mut signs = vec![1.0; n];
                    let mut c = 0;
                    for _ in 0..SHARD.min(draws - shard * SHARD) {
                        draw_signs(&mut rng, &mut signs);
                        if exceeds(refit_statistic(study, &flags(&signs), design, fit)?, observed) {
                            c += 1;
                        }
                    }
                    Ok(c)
                })
                .collect::<Result<_>>()?;
            let exceedances = counts.iter().sum::<u64>();
            Ok(PermutationResult {
                p_value: (exceedances + 1) as f64 / (draws + 1) as f64,
                n_permutations: draws,
                exceedances,
                mode: PermutationMode::MonteCarlo,
                statistic_observed: observed,
                statistic_distribution: None,
            })
        }
    }
}
