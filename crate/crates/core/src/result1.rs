//! Inconsistency of the meta-analytic MLE when pair differences and their
//! variances are dependent.
//!
//! Pairs come in two observed types with equal probability. The latent
//! difference magnitude is `μ = |Z|`, `Z ~ N(0, 1)`; type 1 pairs have
//! sampling variance `w₁ = 2/n` and type 2 pairs `w₂ = (1 + σ²)/n`. With the
//! default pairing type 1 carries `−μ` and type 2 `+μ`, so the average
//! difference is zero while the inverse-variance weighted MLE
//! `Σ u_p δ̂_p / Σ u_p`, `u_p = 1/(V + v_p)`, converges to a non-zero limit
//! whenever `σ² ≠ 1`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignPairing {
    /// Type 1 (variance `w₁`) pairs have difference `−μ`.
    #[default]
    Type1Negative,
    Type1Positive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Result1Config {
    /// Variance multiplier of the type-2 practices.
    pub sigma2: f64,
    pub n_per_arm: u32,
    pub num_pairs: u64,
    pub seed: u64,
    /// Known variance of the pair differences across pairs.
    pub var_delta: f64,
    pub sign_pairing: SignPairing,
}

impl Default for Result1Config {
    fn default() -> Self {
        Result1Config {
            sigma2: 9.0,
            n_per_arm: 10,
            num_pairs: 100_000,
            seed: 0,
            var_delta: 1.0,
            sign_pairing: SignPairing::Type1Negative,
        }
    }
}

impl Result1Config {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::Config("sigma2 must be positive".into()));
        }
        if self.n_per_arm == 0 {
            return Err(Error::Config("n_per_arm must be at least 1".into()));
        }
        if !(self.var_delta > 0.0 && self.var_delta.is_finite()) {
            return Err(Error::Config("var_delta must be positive".into()));
        }
        Ok(())
    }

    /// Sampling variances `(w₁, w₂)` of the two pair types.
    pub fn type_variances(&self) -> (f64, f64) {
        let n = f64::from(self.n_per_arm);
        (2.0 / n, (1.0 + self.sigma2) / n)
    }

    fn sign_of_type1(&self) -> f64 {
        match self.sign_pairing {
            SignPairing::Type1Negative => -1.0,
            SignPairing::Type1Positive => 1.0,
        }
    }
}

/// Closed-form probability limit `E(u δ̂) / E(u)`.
pub fn plim_mle(config: &Result1Config) -> f64 {
    let (w1, w2) = config.type_variances();
    let v = config.var_delta;
    let e_abs_z = (2.0 / std::f64::consts::PI).sqrt();
    let (u1, u2) = (1.0 / (v + w1), 1.0 / (v + w2));
    let s1 = config.sign_of_type1();
    // u1 == u2 bit for bit when σ² = 1, so the limit is exactly zero there.
    let e_ud = 0.5 * e_abs_z * (s1 * u1 - s1 * u2);
    let e_u = 0.5 * (u1 + u2);
    e_ud / e_u
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Result1Simulation {
    /// Weighted MLE `Σ u δ̂ / Σ u`.
    pub estimate: f64,
    /// Delete-one-block jackknife Monte Carlo standard error of `estimate`.
    pub mc_se: f64,
    /// Plain average of the simulated differences.
    pub unweighted_mean: f64,
    pub unweighted_se: f64,
    pub num_pairs: u64,
    pub blocks: u64,
}

#[derive(Debug, Clone, Copy, Default)]
struct BlockSums {
    ud: f64,
    u: f64,
    d: f64,
    d2: f64,
    count: u64,
}

pub const MIN_SIM_PAIRS: u64 = 100;
const BLOCKS: u64 = 100;

fn simulate_block(config: &Result1Config, block: u64, size: u64) -> BlockSums {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(block);
    let (w1, w2) = config.type_variances();
    let s1 = config.sign_of_type1();
    let mut sums = BlockSums::default();
    for _ in 0..size {
        let mu = rng.sample::<f64, _>(StandardNormal).abs();
        let type1 = rng.random_bool(0.5);
        let (truth, v) = if type1 { (s1 * mu, w1) } else { (-s1 * mu, w2) };
        let noise: f64 = rng.sample(StandardNormal);
        let d = truth + v.sqrt() * noise;
        let u = 1.0 / (config.var_delta + v);
        sums.ud += u * d;
        sums.u += u;
        sums.d += d;
        sums.d2 += d * d;
        sums.count += 1;
    }
    sums
}

/// Simulates the weighted MLE. Pairs are generated in 100 blocks, block `b`
/// from ChaCha8 stream `b` of the seed, so the output is reproducible
/// regardless of scheduling.
pub fn simulate_mle(config: &Result1Config) -> Result<Result1Simulation> {
    config.validate()?;
    if config.num_pairs < MIN_SIM_PAIRS {
        return Err(Error::Config(format!("simulation needs at least {MIN_SIM_PAIRS} pairs")));
    }
    let n = config.num_pairs;
    let (base, extra) = (n / BLOCKS, n % BLOCKS);
    let blocks: Vec<BlockSums> =
        (0..BLOCKS).into_par_iter().map(|b| simulate_block(config, b, base + u64::from(b < extra))).collect();

    let total = blocks.iter().fold(BlockSums::default(), |acc, b| BlockSums {
        ud: acc.ud + b.ud,
        u: acc.u + b.u,
        d: acc.d + b.d,
        d2: acc.d2 + b.d2,
        count: acc.count + b.count,
    });
    let estimate = total.ud / total.u;
    let leave_out: Vec<f64> = blocks.iter().map(|b| (total.ud - b.ud) / (total.u - b.u)).collect();
    let k = leave_out.len() as f64;
    let lo_mean = leave_out.iter().sum::<f64>() / k;
    let mc_se = ((k - 1.0) / k * leave_out.iter().map(|t| (t - lo_mean).powi(2)).sum::<f64>()).sqrt();

    let nf = total.count as f64;
    let unweighted_mean = total.d / nf;
    let var = (total.d2 - nf * unweighted_mean * unweighted_mean) / (nf - 1.0);
    Ok(Result1Simulation {
        estimate,
        mc_se,
        unweighted_mean,
        unweighted_se: (var / nf).sqrt(),
        num_pairs: n,
        blocks: BLOCKS,
    })
}
