//! Within-pair covariate imbalance metrics and the check for dependence
//! between pair differences and their standard errors.
//!
//! Signs follow the crude difference: control minus intervention.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ArmRole, CovariateKind, CovariateSchema, Pair, PairId, PairSummary, Study};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TTestKind {
    #[default]
    Welch,
    Pooled,
}

fn continuous_values(pair: &Pair, schema: &CovariateSchema, name: &str) -> Result<[Vec<f64>; 2]> {
    match schema.locate(name) {
        Some((slot, spec)) if matches!(spec.kind, CovariateKind::Continuous) => {
            Ok(ArmRole::BOTH.map(|role| pair.arm(role).records.iter().map(|r| r.covariates.continuous[slot]).collect()))
        }
        Some(_) => Err(Error::Covariate { name: name.into(), detail: "not a continuous covariate".into() }),
        None => Err(Error::Covariate { name: name.into(), detail: "not in the schema".into() }),
    }
}

/// Difference in arm means divided by the pooled standard deviation.
pub fn effect_size(pair: &Pair, schema: &CovariateSchema, name: &str) -> Result<f64> {
    let [a, b] = continuous_values(pair, schema, name)?;
    effect_size_of(&a, &b).ok_or_else(|| Error::ZeroPooledSd { pair: pair.id.clone(), covariate: name.into() })
}

pub fn effect_size_of(a: &[f64], b: &[f64]) -> Option<f64> {
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let pooled = ((n1 - 1.0) * stats::sample_variance(a) + (n2 - 1.0) * stats::sample_variance(b)) / (n1 + n2 - 2.0);
    (pooled > 0.0).then(|| (stats::mean(a) - stats::mean(b)) / pooled.sqrt())
}

/// Two-sample t statistic for a continuous covariate.
pub fn t_statistic(pair: &Pair, schema: &CovariateSchema, name: &str, kind: TTestKind) -> Result<f64> {
    let [a, b] = continuous_values(pair, schema, name)?;
    t_statistic_of(&a, &b, kind).ok_or_else(|| Error::ZeroVariance { pair: pair.id.clone(), covariate: name.into() })
}

pub fn t_statistic_of(a: &[f64], b: &[f64], kind: TTestKind) -> Option<f64> {
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let (v1, v2) = (stats::sample_variance(a), stats::sample_variance(b));
    let se2 = match kind {
        TTestKind::Welch => v1 / n1 + v2 / n2,
        TTestKind::Pooled => ((n1 - 1.0) * v1 + (n2 - 1.0) * v2) / (n1 + n2 - 2.0) * (1.0 / n1 + 1.0 / n2),
    };
    (se2 > 0.0).then(|| (stats::mean(a) - stats::mean(b)) / se2.sqrt())
}

/// Odds ratio with 0.5 added to every cell of the 2×2 table: `a`/`b` are the
/// control counts with/without the level, `c`/`d` the intervention counts.
pub fn odds_ratio_from_counts(a: u64, b: u64, c: u64, d: u64) -> f64 {
    let (a, b, c, d) = (a as f64 + 0.5, b as f64 + 0.5, c as f64 + 0.5, d as f64 + 0.5);
    (a * d) / (b * c)
}

pub fn odds_ratio(pair: &Pair, schema: &CovariateSchema, name: &str, level: &str) -> Result<f64> {
    let (slot, spec) = schema
        .locate(name)
        .ok_or_else(|| Error::Covariate { name: name.into(), detail: "not in the schema".into() })?;
    match &spec.kind {
        CovariateKind::Categorical { levels } if levels.iter().any(|l| l == level) => {}
        CovariateKind::Categorical { .. } => {
            return Err(Error::Covariate { name: name.into(), detail: format!("unknown level {level:?}") })
        }
        CovariateKind::Continuous => {
            return Err(Error::Covariate { name: name.into(), detail: "not a categorical covariate".into() })
        }
    }
    let [(a, b), (c, d)] = ArmRole::BOTH.map(|role| {
        let arm = pair.arm(role);
        let hit = arm.records.iter().filter(|r| r.covariates.categorical[slot] == level).count() as u64;
        (hit, arm.n_sampled() as u64 - hit)
    });
    Ok(odds_ratio_from_counts(a, b, c, d))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImbalanceMetric {
    EffectSize,
    TStatistic,
    OddsRatio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceRow {
    pub covariate: String,
    pub level: Option<String>,
    pub metric: ImbalanceMetric,
    /// One value per pair; `None` where the metric is undefined.
    pub values: Vec<Option<f64>>,
}

/// Table of imbalance metrics, one row per (covariate, level, metric).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceReport {
    pub pair_ids: Vec<PairId>,
    pub rows: Vec<ImbalanceRow>,
}

pub fn imbalance_report(study: &Study, t_kind: TTestKind) -> Result<ImbalanceReport> {
    let schema = study.schema();
    let mut rows = Vec::new();
    for spec in &schema.covariates {
        match &spec.kind {
            CovariateKind::Continuous => {
                let mut es = Vec::new();
                let mut ts = Vec::new();
                for pair in study.pairs() {
                    let [a, b] = continuous_values(pair, schema, &spec.name)?;
                    es.push(effect_size_of(&a, &b));
                    ts.push(t_statistic_of(&a, &b, t_kind));
                }
                rows.push(ImbalanceRow {
                    covariate: spec.name.clone(),
                    level: None,
                    metric: ImbalanceMetric::EffectSize,
                    values: es,
                });
                rows.push(ImbalanceRow {
                    covariate: spec.name.clone(),
                    level: None,
                    metric: ImbalanceMetric::TStatistic,
                    values: ts,
                });
            }
            CovariateKind::Categorical { levels } => {
                for level in levels {
                    let values = study
                        .pairs()
                        .iter()
                        .map(|p| odds_ratio(p, schema, &spec.name, level).map(Some))
                        .collect::<Result<_>>()?;
                    rows.push(ImbalanceRow {
                        covariate: spec.name.clone(),
                        level: Some(level.clone()),
                        metric: ImbalanceMetric::OddsRatio,
                        values,
                    });
                }
            }
        }
    }
    Ok(ImbalanceReport { pair_ids: study.pairs().iter().map(|p| p.id.clone()).collect(), rows })
}

/// Least-squares line of `√v̂` on `δ̂` across pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependenceCheck {
    /// `(δ̂_p, √v̂_p)`.
    pub points: Vec<(f64, f64)>,
    pub r_squared: f64,
    pub slope: f64,
    pub intercept: f64,
    /// Set when either axis is constant; `r_squared` is then reported as 0.
    pub degenerate: bool,
}

pub fn dependence_check(summaries: &[PairSummary]) -> Result<DependenceCheck> {
    if summaries.len() < 3 {
        return Err(Error::TooFewPairs { needed: 3, got: summaries.len() });
    }
    let points: Vec<(f64, f64)> = summaries.iter().map(|s| (s.delta, s.sqrt_v())).collect();
    let x: Vec<f64> = points.iter().map(|p| p.0).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    let (mx, my) = (stats::mean(&x), stats::mean(&y));
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let scale_x = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let scale_y = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let flat_x = sxx <= 1e-24 * scale_x * scale_x * x.len() as f64;
    let flat_y = syy <= 1e-24 * scale_y * scale_y * y.len() as f64;
    if flat_x || flat_y {
        return Ok(DependenceCheck { points, r_squared: 0.0, slope: 0.0, intercept: my, degenerate: true });
    }
    let slope = sxy / sxx;
    Ok(DependenceCheck {
        points,
        r_squared: (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0),
        slope,
        intercept: my - slope * mx,
        degenerate: false,
    })
}
