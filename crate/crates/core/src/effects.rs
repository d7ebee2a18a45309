//! Second-stage inference for the average effect from per-pair summaries.
//!
//! All two-level estimators share the marginal model
//! `δ̂ ~ Normal(δ·1, Σ + τ²I)` with `Σ` either diagonal (the per-pair
//! variances) or a full covariance matrix treated as known.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PairSummary;
use crate::numeric::{adaptive_simpson, bisect, brent_minimize, QuadratureRule};
use crate::stats::{self, CHI2_1_95, Z_975};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectMethod {
    FirstLevelMle,
    TwoLevelMle,
    ProfileMle,
    BayesUniformShrinkage,
}

impl EffectMethod {
    pub fn label(self) -> &'static str {
        match self {
            EffectMethod::FirstLevelMle => "1st level MLE",
            EffectMethod::TwoLevelMle => "1st+2nd level MLE",
            EffectMethod::ProfileMle => "1st+2nd level pMLE",
            EffectMethod::BayesUniformShrinkage => "1st+2nd level Bayes",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub method: EffectMethod,
    pub point: f64,
    pub se: Option<f64>,
    pub ci95: (f64, f64),
    /// Second-level variance estimate (posterior mean for the Bayes method).
    pub tau2: Option<f64>,
    pub p_value: Option<f64>,
}

/// Mean of the pair differences with a delete-one-pair jackknife SE.
pub fn first_level_mle(summaries: &[PairSummary]) -> Result<EffectEstimate> {
    require_pairs(summaries.len(), 2)?;
    let d: Vec<f64> = summaries.iter().map(|s| s.delta).collect();
    let point = stats::mean(&d);
    let se = stats::jackknife_se(&d, stats::mean);
    Ok(EffectEstimate {
        method: EffectMethod::FirstLevelMle,
        point,
        se: Some(se),
        ci95: wald(point, se),
        tau2: None,
        p_value: Some(wald_p(point, se)),
    })
}

fn require_pairs(got: usize, needed: usize) -> Result<()> {
    if got < needed {
        Err(Error::TooFewPairs { needed, got })
    } else {
        Ok(())
    }
}

fn wald(point: f64, se: f64) -> (f64, f64) {
    (point - Z_975 * se, point + Z_975 * se)
}

fn wald_p(point: f64, se: f64) -> f64 {
    if se > 0.0 {
        stats::two_sided_p(point / se)
    } else if point == 0.0 {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone)]
enum Structure {
    Diagonal(Vec<f64>),
    Full(DMatrix<f64>),
}

/// GLS summary of the marginal model at a fixed `τ²`.
#[derive(Debug, Clone, Copy)]
pub struct GlsFit {
    /// Inverse-variance weighted mean.
    pub delta: f64,
    /// `1′Ω⁻¹1`.
    pub precision: f64,
    /// `r′Ω⁻¹r` at the weighted mean.
    pub quad: f64,
    pub log_det: f64,
}

impl GlsFit {
    /// Log-likelihood (without the `2π` constant) at `delta`.
    pub fn loglik_at(&self, delta: f64) -> f64 {
        -0.5 * (self.log_det + self.quad + self.precision * (delta - self.delta).powi(2))
    }
}

/// Marginal normal model `δ̂ ~ N(δ·1, Σ + τ²I)`.
#[derive(Debug, Clone)]
pub struct MarginalModel {
    deltas: DVector<f64>,
    structure: Structure,
}

impl MarginalModel {
    pub fn new(summaries: &[PairSummary], full_cov: Option<&DMatrix<f64>>) -> Result<Self> {
        let n = summaries.len();
        let deltas = DVector::from_iterator(n, summaries.iter().map(|s| s.delta));
        if deltas.iter().any(|d| !d.is_finite()) {
            return Err(Error::Numerical("non-finite pair difference".into()));
        }
        let structure = match full_cov {
            Some(m) => {
                if m.shape() != (n, n) {
                    return Err(Error::Dimension(format!("covariance is {:?}, expected {n}×{n}", m.shape())));
                }
                Structure::Full((m + m.transpose()) * 0.5)
            }
            None => {
                let v: Vec<f64> = summaries.iter().map(|s| s.variance).collect();
                if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                    return Err(Error::Numerical("pair variances must be finite and non-negative".into()));
                }
                Structure::Diagonal(v)
            }
        };
        Ok(MarginalModel { deltas, structure })
    }

    pub fn n(&self) -> usize {
        self.deltas.len()
    }

    pub fn deltas(&self) -> &DVector<f64> {
        &self.deltas
    }

    /// Diagonal of `Σ`.
    pub fn variances(&self) -> Vec<f64> {
        match &self.structure {
            Structure::Diagonal(v) => v.clone(),
            Structure::Full(m) => m.diagonal().iter().copied().collect(),
        }
    }

    /// Same model with the differences multiplied by `signs` (±1), i.e. the
    /// treatment labels swapped in the pairs with sign −1.
    pub fn sign_flipped(&self, signs: &[f64]) -> MarginalModel {
        let deltas = self.deltas.component_mul(&DVector::from_column_slice(signs));
        let structure = match &self.structure {
            Structure::Diagonal(v) => Structure::Diagonal(v.clone()),
            Structure::Full(m) => {
                let mut m = m.clone();
                for i in 0..m.nrows() {
                    for j in 0..m.ncols() {
                        m[(i, j)] *= signs[i] * signs[j];
                    }
                }
                Structure::Full(m)
            }
        };
        MarginalModel { deltas, structure }
    }

    /// GLS fit at `tau2`; `None` if `Σ + τ²I` is singular.
    pub fn gls(&self, tau2: f64) -> Option<GlsFit> {
        match &self.structure {
            Structure::Diagonal(v) => {
                let mut sw = 0.0;
                let mut swd = 0.0;
                let mut log_det = 0.0;
                for (d, vi) in self.deltas.iter().zip(v) {
                    let t = vi + tau2;
                    if t <= 0.0 {
                        return None;
                    }
                    sw += 1.0 / t;
                    swd += d / t;
                    log_det += t.ln();
                }
                let delta = swd / sw;
                let quad = self.deltas.iter().zip(v).map(|(d, vi)| (d - delta).powi(2) / (vi + tau2)).sum();
                Some(GlsFit { delta, precision: sw, quad, log_det })
            }
            Structure::Full(m) => {
                let n = self.n();
                let omega = m + DMatrix::identity(n, n) * tau2;
                let chol = omega.cholesky()?;
                let log_det = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
                let ones = DVector::from_element(n, 1.0);
                let a1 = chol.solve(&ones);
                let ad = chol.solve(&self.deltas);
                let precision = ones.dot(&a1);
                let delta = ones.dot(&ad) / precision;
                let r = &self.deltas - &ones * delta;
                let quad = r.dot(&chol.solve(&r));
                Some(GlsFit { delta, precision, quad, log_det })
            }
        }
    }

    /// Profile log-likelihood in `τ²` (δ at its weighted mean).
    pub fn profile_tau2(&self, tau2: f64) -> f64 {
        self.gls(tau2).map_or(f64::NEG_INFINITY, |g| g.loglik_at(g.delta))
    }

    pub fn loglik(&self, delta: f64, tau2: f64) -> f64 {
        self.gls(tau2).map_or(f64::NEG_INFINITY, |g| g.loglik_at(delta))
    }

    /// Maximises `f` over `τ² ≥ 0`. For fixed δ the likelihood in `τ²` can
    /// have several local maxima, so it is evaluated on a grid over
    /// `[0, upper]` and Brent refines every local maximum of the grid; the
    /// range widens while the grid still rises at its upper end. The
    /// boundary `τ² = 0` wins unless an interior point beats it by more than
    /// rounding noise.
    fn maximize_tau2(&self, f: impl Fn(f64) -> f64, mut upper: f64) -> f64 {
        const GRID: usize = 128;
        if upper.is_nan() || upper <= 0.0 {
            return 0.0;
        }
        let at_zero = f(0.0);
        let mut best = (0.0, at_zero);
        for _ in 0..12 {
            let step = upper / GRID as f64;
            let vals: Vec<f64> = (0..=GRID).map(|i| f(i as f64 * step)).collect();
            for i in 0..=GRID {
                let left = if i == 0 { f64::NEG_INFINITY } else { vals[i - 1] };
                let right = if i == GRID { f64::NEG_INFINITY } else { vals[i + 1] };
                if !(vals[i] >= left && vals[i] >= right) {
                    continue;
                }
                let lo = i.saturating_sub(1) as f64 * step;
                let hi = (i + 1).min(GRID) as f64 * step;
                let (x, nf) = brent_minimize(|t| -f(t), lo, hi, 1e-10);
                for (t, v) in [(i as f64 * step, vals[i]), (x, -nf)] {
                    if v > best.1 {
                        best = (t, v);
                    }
                }
            }
            if vals[GRID] <= vals[GRID - 1] {
                break;
            }
            upper *= 10.0;
        }
        if at_zero.is_finite() && best.1 - at_zero <= 1e-12 * (1.0 + at_zero.abs()) {
            0.0
        } else {
            best.0
        }
    }

    /// Joint MLE `(δ, τ²)` with `τ² ≥ 0`.
    pub fn mle(&self) -> (f64, f64) {
        let d: Vec<f64> = self.deltas.iter().copied().collect();
        let upper = 10.0 * stats::sample_variance(&d);
        let tau2 = self.maximize_tau2(|t| self.profile_tau2(t), upper);
        let delta = self.gls(tau2).map_or(f64::NAN, |g| g.delta);
        (delta, tau2)
    }

    /// `max_{τ² ≥ 0} ℓ(δ, τ²)` for fixed `delta`.
    pub fn profile_delta(&self, delta: f64) -> f64 {
        let n = self.n() as f64;
        let spread = self.deltas.iter().map(|d| (d - delta).powi(2)).sum::<f64>() / n;
        let d: Vec<f64> = self.deltas.iter().copied().collect();
        let upper = 10.0 * stats::sample_variance(&d).max(spread);
        let tau2 = self.maximize_tau2(|t| self.loglik(delta, t), upper);
        self.loglik(delta, tau2)
    }

    /// Observed information of `(δ, τ²)` at the given point.
    fn observed_information(&self, delta: f64, tau2: f64) -> Option<[[f64; 2]; 2]> {
        let n = self.n();
        let omega = match &self.structure {
            Structure::Diagonal(v) => DMatrix::from_diagonal(&DVector::from_iterator(n, v.iter().map(|x| x + tau2))),
            Structure::Full(m) => m + DMatrix::identity(n, n) * tau2,
        };
        let a = omega.try_inverse()?;
        let ones = DVector::from_element(n, 1.0);
        let r = &self.deltas - &ones * delta;
        let ar = &a * &r;
        let a2r = &a * &ar;
        let i_dd = ones.dot(&(&a * &ones));
        let i_dt = ones.dot(&a2r);
        let a2 = &a * &a;
        let i_tt = ar.dot(&a2r) - 0.5 * a2.trace();
        Some([[i_dd, i_dt], [i_dt, i_tt]])
    }
}

/// Joint marginal-likelihood MLE of the effect and the second-level variance.
pub fn two_level_mle(summaries: &[PairSummary], full_cov: Option<&DMatrix<f64>>) -> Result<EffectEstimate> {
    require_pairs(summaries.len(), 2)?;
    let model = MarginalModel::new(summaries, full_cov)?;
    let (point, tau2) = model.mle();
    if model.deltas.iter().all(|d| *d == model.deltas[0]) {
        // No spread to attribute to τ²; zero sampling variances leave a zero SE.
        let point = model.deltas[0];
        let se = model.gls(0.0).map_or(0.0, |g| g.precision.recip().sqrt());
        return Ok(EffectEstimate {
            method: EffectMethod::TwoLevelMle,
            point,
            se: Some(se),
            ci95: wald(point, se),
            tau2: Some(0.0),
            p_value: Some(wald_p(point, se)),
        });
    }
    let gls = model.gls(tau2).ok_or_else(|| degenerate("singular marginal covariance at the MLE"))?;

    let mut var = 1.0 / gls.precision;
    if tau2 > 0.0 {
        if let Some([[a, b], [_, c]]) = model.observed_information(point, tau2) {
            let det = a * c - b * b;
            if det > 0.0 && c > 0.0 {
                var = c / det;
            }
        }
    }
    let se = var.sqrt();
    if !se.is_finite() {
        return Err(degenerate("standard error is not finite"));
    }
    Ok(EffectEstimate {
        method: EffectMethod::TwoLevelMle,
        point,
        se: Some(se),
        ci95: wald(point, se),
        tau2: Some(tau2),
        p_value: Some(wald_p(point, se)),
    })
}

fn degenerate(msg: &str) -> Error {
    Error::Numerical(format!("degenerate variances: {msg}"))
}

/// Two-level MLE with a profile-likelihood-ratio interval.
pub fn profile_mle(summaries: &[PairSummary], full_cov: Option<&DMatrix<f64>>) -> Result<EffectEstimate> {
    require_pairs(summaries.len(), 2)?;
    let model = MarginalModel::new(summaries, full_cov)?;
    let (point, tau2) = model.mle();
    let lmax = model.loglik(point, tau2).max(model.profile_delta(point));
    if !lmax.is_finite() {
        return Err(degenerate("likelihood is not finite at the MLE"));
    }
    let g = |delta: f64| 2.0 * (lmax - model.profile_delta(delta)) - CHI2_1_95;

    let scale = model.gls(tau2).map_or(1.0, |f| f.precision.recip().sqrt()).max(1e-6);
    let endpoint = |dir: f64| -> Result<f64> {
        let mut step = scale;
        for _ in 0..80 {
            let far = point + dir * step;
            if g(far) > 0.0 {
                let (lo, hi) = if dir < 0.0 { (far, point) } else { (point, far) };
                return Ok(bisect(g, lo, hi, 1e-8));
            }
            step *= 2.0;
        }
        Err(degenerate("profile likelihood does not fall below the cutoff"))
    };
    let lo = endpoint(-1.0)?;
    let hi = endpoint(1.0)?;
    Ok(EffectEstimate {
        method: EffectMethod::ProfileMle,
        point,
        se: None,
        ci95: (lo, hi),
        tau2: Some(tau2),
        p_value: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TauPrior {
    /// `π(τ²) = v₀ / (v₀ + τ²)²`; `v0 = None` uses the harmonic mean of the
    /// pair variances.
    UniformShrinkage { v0: Option<f64> },
    /// All prior mass at `τ² = 0`.
    PointMassAtZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BayesConfig {
    pub prior: TauPrior,
    /// Prior mass allowed beyond the truncation point of the `τ²` range.
    pub tail_mass: f64,
    pub rel_tol: f64,
}

impl Default for BayesConfig {
    fn default() -> Self {
        BayesConfig { prior: TauPrior::UniformShrinkage { v0: None }, tail_mass: 1e-7, rel_tol: 1e-10 }
    }
}

/// Harmonic mean of the variances, falling back to the arithmetic mean and
/// then to the spread of the differences when variances are zero.
pub fn default_v0(model: &MarginalModel) -> f64 {
    let v = model.variances();
    let n = v.len() as f64;
    if v.iter().all(|x| *x > 0.0) {
        return n / v.iter().map(|x| 1.0 / x).sum::<f64>();
    }
    let am = v.iter().sum::<f64>() / n;
    if am > 0.0 {
        return am;
    }
    let d: Vec<f64> = model.deltas().iter().copied().collect();
    stats::sample_variance(&d)
}

/// Posterior of the effect under a flat prior on δ and a uniform-shrinkage
/// prior on `τ²`. Integrates over the shrinkage factor `s = v₀/(v₀+τ²)`,
/// which the prior makes uniform on `(0, 1]`.
pub fn bayes_uniform_shrinkage(
    summaries: &[PairSummary],
    full_cov: Option<&DMatrix<f64>>,
    config: BayesConfig,
) -> Result<EffectEstimate> {
    require_pairs(summaries.len(), 2)?;
    let model = MarginalModel::new(summaries, full_cov)?;

    let v0 = match config.prior {
        TauPrior::PointMassAtZero => None,
        TauPrior::UniformShrinkage { v0 } => {
            let v0 = v0.unwrap_or_else(|| default_v0(&model));
            if v0 > 0.0 && v0.is_finite() {
                Some(v0)
            } else {
                None
            }
        }
    };

    let Some(v0) = v0 else {
        let g = model.gls(0.0).ok_or_else(|| degenerate("zero variances with a point-mass prior"))?;
        let sd = g.precision.recip().sqrt();
        let (lo, hi) = wald(g.delta, sd);
        return Ok(EffectEstimate {
            method: EffectMethod::BayesUniformShrinkage,
            point: g.delta,
            se: Some(sd),
            ci95: (lo, hi),
            tau2: Some(0.0),
            p_value: Some(wald_p(g.delta, sd)),
        });
    };

    let tau2_of = |s: f64| v0 * (1.0 - s) / s;
    // log p(s | data) up to a constant: δ integrated out under a flat prior.
    let log_post = |s: f64| -> f64 {
        match model.gls(tau2_of(s)) {
            Some(g) => -0.5 * (g.log_det + g.quad + g.precision.ln()),
            None => f64::NEG_INFINITY,
        }
    };
    let s_min = config.tail_mass;
    let reference =
        (0..=200).map(|i| log_post(s_min + (1.0 - s_min) * i as f64 / 200.0)).fold(f64::NEG_INFINITY, f64::max);
    if !reference.is_finite() {
        return Err(degenerate("posterior is not finite"));
    }
    let density = |s: f64| (log_post(s) - reference).exp();
    let (z, rule) = adaptive_simpson(density, s_min, 1.0, config.rel_tol, 40);
    let posterior = PosteriorMixture::new(&model, &rule, z, density, tau2_of)?;

    let point = posterior.mean();
    let sd = posterior.sd();
    let lo = posterior.quantile(0.025);
    let hi = posterior.quantile(0.975);
    let below = posterior.cdf(0.0);
    Ok(EffectEstimate {
        method: EffectMethod::BayesUniformShrinkage,
        point,
        se: Some(sd),
        ci95: (lo.min(point), hi.max(point)),
        tau2: Some(posterior.mean_tau2()),
        p_value: Some((2.0 * below.min(1.0 - below)).clamp(0.0, 1.0)),
    })
}

/// Posterior of δ as a finite mixture of normals over quadrature nodes.
struct PosteriorMixture {
    weights: Vec<f64>,
    means: Vec<f64>,
    sds: Vec<f64>,
    tau2: Vec<f64>,
}

impl PosteriorMixture {
    fn new(
        model: &MarginalModel,
        rule: &QuadratureRule,
        z: f64,
        density: impl Fn(f64) -> f64,
        tau2_of: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        if !(z > 0.0 && z.is_finite()) {
            return Err(degenerate("posterior normalising constant vanished"));
        }
        let mut out = PosteriorMixture { weights: vec![], means: vec![], sds: vec![], tau2: vec![] };
        let mut total = 0.0;
        for (&s, &w) in rule.nodes.iter().zip(&rule.weights) {
            let t = tau2_of(s);
            let Some(g) = model.gls(t) else { continue };
            let m = w * density(s);
            if m <= 0.0 {
                continue;
            }
            total += m;
            out.weights.push(m);
            out.means.push(g.delta);
            out.sds.push(g.precision.recip().sqrt());
            out.tau2.push(t);
        }
        for w in &mut out.weights {
            *w /= total;
        }
        Ok(out)
    }

    fn mean(&self) -> f64 {
        self.weights.iter().zip(&self.means).map(|(w, m)| w * m).sum()
    }

    fn mean_tau2(&self) -> f64 {
        self.weights.iter().zip(&self.tau2).map(|(w, t)| w * t).sum()
    }

    fn sd(&self) -> f64 {
        let m = self.mean();
        let second: f64 = self
            .weights
            .iter()
            .zip(self.means.iter().zip(&self.sds))
            .map(|(w, (mu, sd))| w * (sd * sd + mu * mu))
            .sum();
        (second - m * m).max(0.0).sqrt()
    }

    fn cdf(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(self.means.iter().zip(&self.sds))
            .map(|(w, (mu, sd))| {
                if *sd > 0.0 {
                    w * stats::normal_cdf((x - mu) / sd)
                } else if x >= *mu {
                    *w
                } else {
                    0.0
                }
            })
            .sum()
    }

    fn quantile(&self, q: f64) -> f64 {
        let m = self.mean();
        let spread = self.sd().max(1e-12) * 60.0;
        bisect(|x| self.cdf(x) - q, m - spread, m + spread, 1e-10)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PairId, SummaryKind};

    fn summaries(d: &[f64], sd: &[f64]) -> Vec<PairSummary> {
        d.iter()
            .zip(sd)
            .enumerate()
            .map(|(i, (&delta, &s))| PairSummary {
                pair_id: PairId(format!("{}", i + 1)),
                delta,
                variance: s * s,
                kind: SummaryKind::Crude,
            })
            .collect()
    }

    const CRUDE: [f64; 7] = [-0.8, -0.1, 0.3, 3.8, 4.5, -2.6, -1.3];
    const CRUDE_SD: [f64; 7] = [2.7, 2.6, 2.0, 2.7, 2.1, 2.6, 2.2];
    const CALIBR: [f64; 7] = [0.9, 3.0, 0.1, 1.9, 2.3, 0.5, 0.8];
    const CALIBR_SD: [f64; 7] = [2.1, 2.4, 1.5, 2.0, 1.7, 2.2, 1.7];

    /// Brute-force grid maximisation of the marginal likelihood.
    fn grid_oracle(d: &[f64], v: &[f64]) -> (f64, f64) {
        let ll = |delta: f64, t: f64| -> f64 {
            d.iter().zip(v).map(|(di, vi)| -0.5 * ((vi + t).ln() + (di - delta).powi(2) / (vi + t))).sum()
        };
        let mut best = (0.0, 0.0, f64::NEG_INFINITY);
        for i in 0..=800 {
            let delta = -2.0 + 5.0 * i as f64 / 800.0;
            for j in 0..=400 {
                let t = 4.0 * j as f64 / 400.0;
                let l = ll(delta, t);
                if l > best.2 {
                    best = (delta, t, l);
                }
            }
        }
        (best.0, best.1)
    }

    #[test]
    fn first_level_table_values() {
        let e = first_level_mle(&summaries(&CRUDE, &CRUDE_SD)).unwrap();
        assert!((e.point - 0.5).abs() < 0.05);
        assert!((e.se.unwrap() - 1.0).abs() < 0.05);
        let e = first_level_mle(&summaries(&CALIBR, &CALIBR_SD)).unwrap();
        assert!((e.point - 1.4).abs() < 0.05);
        assert!((e.se.unwrap() - 0.4).abs() < 0.05);
    }

    #[test]
    fn constant_deltas_have_zero_se() {
        let e = first_level_mle(&summaries(&[2.0; 4], &[1.0; 4])).unwrap();
        assert_eq!(e.point, 2.0);
        assert_eq!(e.se, Some(0.0));
    }

    #[test]
    fn single_pair_is_too_few() {
        let s = summaries(&[1.0], &[1.0]);
        assert!(matches!(first_level_mle(&s), Err(Error::TooFewPairs { .. })));
        assert!(matches!(two_level_mle(&s, None), Err(Error::TooFewPairs { .. })));
        assert!(matches!(profile_mle(&s, None), Err(Error::TooFewPairs { .. })));
        assert!(matches!(bayes_uniform_shrinkage(&s, None, BayesConfig::default()), Err(Error::TooFewPairs { .. })));
    }

    #[test]
    fn two_level_crude_matches_grid_oracle() {
        let v: Vec<f64> = CRUDE_SD.iter().map(|s| s * s).collect();
        let (gd, gt) = grid_oracle(&CRUDE, &v);
        let e = two_level_mle(&summaries(&CRUDE, &CRUDE_SD), None).unwrap();
        assert!((e.point - gd).abs() < 0.01, "{} vs {gd}", e.point);
        assert!((e.tau2.unwrap() - gt).abs() < 0.02, "{:?} vs {gt}", e.tau2);
        assert!((e.point - 0.6).abs() < 0.1);
        assert!((e.tau2.unwrap() - 0.7).abs() < 0.2);
    }

    #[test]
    fn two_level_calibrated_hits_boundary() {
        let e = two_level_mle(&summaries(&CALIBR, &CALIBR_SD), None).unwrap();
        assert_eq!(e.tau2, Some(0.0));
        let w: Vec<f64> = CALIBR_SD.iter().map(|s| 1.0 / (s * s)).collect();
        let ivw = CALIBR.iter().zip(&w).map(|(d, w)| d * w).sum::<f64>() / w.iter().sum::<f64>();
        assert!((e.point - ivw).abs() < 1e-10);
        assert!((ivw - 1.21).abs() < 0.02);
    }

    #[test]
    fn identical_inputs_give_zero_tau2() {
        let e = two_level_mle(&summaries(&[1.5; 5], &[0.0; 5]), None).unwrap();
        assert_eq!(e.tau2, Some(0.0));
        assert_eq!(e.point, 1.5);
    }

    #[test]
    fn zero_variances_with_unequal_deltas_estimate_tau2() {
        let d = [1.0, 2.0, 4.0, -1.0];
        let e = two_level_mle(&summaries(&d, &[0.0; 4]), None).unwrap();
        // With Σ = 0 the MLE of τ² is the divisor-n variance.
        let m = stats::mean(&d);
        let ml = d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 4.0;
        assert!((e.tau2.unwrap() - ml).abs() < 1e-6);
        assert!((e.point - m).abs() < 1e-9);
    }

    #[test]
    fn equal_variances_give_unweighted_mean() {
        let d = [0.3, -1.2, 2.5, 0.9];
        let e = two_level_mle(&summaries(&d, &[1.3; 4]), None).unwrap();
        assert!((e.point - stats::mean(&d)).abs() < 1e-10);
    }

    #[test]
    fn profile_intervals_match_table() {
        let e = profile_mle(&summaries(&CRUDE, &CRUDE_SD), None).unwrap();
        assert!((e.ci95.0 + 1.5).abs() < 0.2 && (e.ci95.1 - 2.7).abs() < 0.2, "{:?}", e.ci95);
        assert!(e.se.is_none());
        let e = profile_mle(&summaries(&CALIBR, &CALIBR_SD), None).unwrap();
        assert!((e.ci95.0 + 0.2).abs() < 0.2 && (e.ci95.1 - 2.6).abs() < 0.2, "{:?}", e.ci95);
    }

    #[test]
    fn profile_point_equals_two_level_point() {
        let s = summaries(&CRUDE, &CRUDE_SD);
        let a = two_level_mle(&s, None).unwrap();
        let b = profile_mle(&s, None).unwrap();
        assert!((a.point - b.point).abs() < 1e-8);
    }

    #[test]
    fn bayes_posterior_means() {
        let e = bayes_uniform_shrinkage(&summaries(&CRUDE, &CRUDE_SD), None, BayesConfig::default()).unwrap();
        assert!((e.point - 0.6).abs() < 0.3, "{}", e.point);
        assert!(e.ci95.0 < e.point && e.point < e.ci95.1);
        let e = bayes_uniform_shrinkage(&summaries(&CALIBR, &CALIBR_SD), None, BayesConfig::default()).unwrap();
        assert!((e.point - 1.3).abs() < 0.3, "{}", e.point);
    }

    #[test]
    fn bayes_point_mass_reduces_to_ivw() {
        let cfg = BayesConfig { prior: TauPrior::PointMassAtZero, ..Default::default() };
        let e = bayes_uniform_shrinkage(&summaries(&CALIBR, &CALIBR_SD), None, cfg).unwrap();
        let g = MarginalModel::new(&summaries(&CALIBR, &CALIBR_SD), None).unwrap().gls(0.0).unwrap();
        assert!((e.point - g.delta).abs() < 1e-12);
    }

    #[test]
    fn full_covariance_with_diagonal_matrix_matches_diagonal_mode() {
        let s = summaries(&CRUDE, &CRUDE_SD);
        let m = DMatrix::from_diagonal(&DVector::from_iterator(7, CRUDE_SD.iter().map(|x| x * x)));
        let a = two_level_mle(&s, None).unwrap();
        let b = two_level_mle(&s, Some(&m)).unwrap();
        assert!((a.point - b.point).abs() < 1e-9);
        assert!((a.se.unwrap() - b.se.unwrap()).abs() < 1e-7);
        let a = bayes_uniform_shrinkage(&s, None, BayesConfig::default()).unwrap();
        let b = bayes_uniform_shrinkage(&s, Some(&m), BayesConfig::default()).unwrap();
        assert!((a.point - b.point).abs() < 1e-9);
    }

    #[test]
    fn observed_information_matches_finite_differences() {
        let model = MarginalModel::new(&summaries(&CRUDE, &CRUDE_SD), None).unwrap();
        let (d, t) = (0.4, 0.9);
        let h = 1e-4;
        let l = |a: f64, b: f64| model.loglik(a, b);
        let i_dd = -(l(d + h, t) - 2.0 * l(d, t) + l(d - h, t)) / (h * h);
        let i_tt = -(l(d, t + h) - 2.0 * l(d, t) + l(d, t - h)) / (h * h);
        let i_dt = -(l(d + h, t + h) - l(d + h, t - h) - l(d - h, t + h) + l(d - h, t - h)) / (4.0 * h * h);
        let info = model.observed_information(d, t).unwrap();
        assert!((info[0][0] - i_dd).abs() < 1e-5);
        assert!((info[1][1] - i_tt).abs() < 1e-5);
        assert!((info[0][1] - i_dt).abs() < 1e-5);
    }

    #[test]
    fn profile_finds_the_global_tau2_maximum() {
        // At δ = −5.22 the likelihood in τ² has local maxima near 0.1 and 1.4.
        let sd = [4.754303940643942f64, 7.166522799678572, 3.483566783773028, 0.09, 1.461836038355574].map(f64::sqrt);
        let d =
            [-1.5779690588580113, -3.7222005901889808, -0.43596658413622413, -4.850702184539702, -4.308567034743601];
        let m = MarginalModel::new(&summaries(&d, &sd), None).unwrap();
        let grid_best = (0..=4000).map(|i| m.loglik(-5.2211, 0.002 * i as f64)).fold(f64::NEG_INFINITY, f64::max);
        assert!(m.profile_delta(-5.2211) >= grid_best - 1e-9);
    }

    #[test]
    fn mle_finds_an_interior_maximum_between_grid_points() {
        // The profile dips below its value at 0 and then rises to a slightly
        // higher interior maximum near τ² = 1.77.
        let d = [4.233208774865455, -2.0457306491535, 2.2758637957778265, -1.3305183722317275, 1.7165776253273979];
        let sd = [6.666507074751979f64, 0.450384157935913, 5.727711366216455, 0.3157201016693506, 4.12718685912362]
            .map(f64::sqrt);
        let m = MarginalModel::new(&summaries(&d, &sd), None).unwrap();
        let (delta, tau2) = m.mle();
        assert!((tau2 - 1.767).abs() < 1e-3, "{tau2}");
        assert!(m.loglik(delta, tau2) > m.profile_tau2(0.0));
    }
}
