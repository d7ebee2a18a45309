//! Covariate-calibrated pair means.
//!
//! Each arm's fitted mean function is averaged over the pooled covariate
//! distribution of both arms of its pair, where every sampled patient of arm
//! `c` carries weight `(N_c / n_c) / (N_1 + N_2)`. Uncertainty is propagated
//! from the coefficient covariance by the delta method, treating the pooled
//! weights as fixed.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::glm::{CoefficientFit, DesignMatrix};
use crate::model::{ArmRole, CovariateSchema, CovariateVector, Pair, PairId, PairSummary, Study, SummaryKind};

#[derive(Debug, Clone, PartialEq)]
pub struct PooledCovariateDistribution {
    pub pair_id: PairId,
    /// Control patients first, then intervention patients, in record order.
    pub support: Vec<CovariateVector>,
    pub encoded: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl PooledCovariateDistribution {
    /// Weighted mean of the encoded covariates.
    pub fn mean_encoded(&self) -> Vec<f64> {
        let p = self.encoded.first().map_or(0, Vec::len);
        let mut m = vec![0.0; p];
        for (x, w) in self.encoded.iter().zip(&self.weights) {
            for (mj, xj) in m.iter_mut().zip(x) {
                *mj += w * xj;
            }
        }
        m
    }
}

pub fn pooled_distribution(pair: &Pair, schema: &CovariateSchema) -> PooledCovariateDistribution {
    let total = (pair.control.n_served + pair.intervention.n_served) as f64;
    let mut support = Vec::new();
    let mut encoded = Vec::new();
    let mut weights = Vec::new();
    for role in ArmRole::BOTH {
        let arm = pair.arm(role);
        let w = arm.n_served as f64 / arm.n_sampled() as f64 / total;
        for r in &arm.records {
            support.push(r.covariates.clone());
            encoded.push(schema.encode(&r.covariates));
            weights.push(w);
        }
    }
    PooledCovariateDistribution { pair_id: pair.id.clone(), support, encoded, weights }
}

/// `Σⱼ wⱼ h⁻¹(θ_{p,c} + θ_cov′xⱼ)` over the pooled support.
pub fn calibrated_mean(
    design: &DesignMatrix,
    fit: &CoefficientFit,
    pair_index: usize,
    role: ArmRole,
    pooled: &PooledCovariateDistribution,
) -> f64 {
    pooled
        .encoded
        .iter()
        .zip(&pooled.weights)
        .map(|(x, w)| w * fit.link.inverse(design.row_for(pair_index, role, x).dot(&fit.theta)))
        .sum()
}

#[derive(Debug, Clone)]
pub struct CalibratedEstimates {
    /// `n_pairs × 2`, control in column 0.
    pub mu: DMatrix<f64>,
    /// Joint covariance of the calibrated means, indexed `2·pair + arm`.
    pub covariance: DMatrix<f64>,
    pub deltas: Vec<PairSummary>,
    pub delta_covariance: DMatrix<f64>,
}

impl CalibratedEstimates {
    /// Maps every calibrated mean through `m ↦ offset + scale·m`.
    pub fn rescaled(&self, offset: f64, scale: f64) -> CalibratedEstimates {
        CalibratedEstimates {
            mu: self.mu.map(|m| offset + scale * m),
            covariance: &self.covariance * (scale * scale),
            deltas: self
                .deltas
                .iter()
                .map(|d| PairSummary { delta: d.delta * scale, variance: d.variance * scale * scale, ..d.clone() })
                .collect(),
            delta_covariance: &self.delta_covariance * (scale * scale),
        }
    }
}

/// Contrast matrix taking `(μ_{p,1}, μ_{p,2})` pairs to `μ_{p,1} − μ_{p,2}`.
pub fn contrast_matrix(n_pairs: usize) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(n_pairs, 2 * n_pairs);
    for p in 0..n_pairs {
        c[(p, 2 * p)] = 1.0;
        c[(p, 2 * p + 1)] = -1.0;
    }
    c
}

pub fn calibrate_study(study: &Study, design: &DesignMatrix, fit: &CoefficientFit) -> Result<CalibratedEstimates> {
    let n = study.n_pairs();
    if design.n_pairs() != n || fit.theta.len() != design.n_columns() {
        return Err(Error::Dimension(format!(
            "fit covers {} coefficients / {} pairs, study has {} pairs",
            fit.theta.len(),
            design.n_pairs(),
            n
        )));
    }
    let k = design.n_columns();
    let schema = study.schema();
    // An intercepts-only design calibrates with the covariate terms fixed at zero.
    let use_covariates = design.n_covariate_columns() > 0;
    if use_covariates
        && design.n_covariate_columns() != schema.encoded_len() * if design.arm_specific_slopes() { 2 } else { 1 }
    {
        return Err(Error::Dimension("design covariate columns do not match the study schema".into()));
    }

    // Per pair: both calibrated means and their Jacobian rows.
    let per_pair: Vec<[(f64, DVector<f64>); 2]> = study
        .pairs()
        .par_iter()
        .enumerate()
        .map(|(p, pair)| {
            let pooled = pooled_distribution(pair, schema);
            ArmRole::BOTH.map(|role| {
                let mut mean = 0.0;
                let mut grad = DVector::zeros(k);
                for (x, w) in pooled.encoded.iter().zip(&pooled.weights) {
                    let row = design.row_for(p, role, if use_covariates { x } else { &[] });
                    let eta = row.dot(&fit.theta);
                    mean += w * fit.link.inverse(eta);
                    grad.axpy(w * fit.link.inverse_derivative(eta), &row, 1.0);
                }
                (mean, grad)
            })
        })
        .collect();

    let mut mu = DMatrix::zeros(n, 2);
    let mut jac = DMatrix::zeros(2 * n, k);
    for (p, arms) in per_pair.iter().enumerate() {
        for (c, (m, g)) in arms.iter().enumerate() {
            mu[(p, c)] = *m;
            jac.row_mut(2 * p + c).copy_from(&g.transpose());
        }
    }
    let cov = &jac * &fit.covariance * jac.transpose();
    let covariance = (&cov + cov.transpose()) * 0.5;
    let contrast = contrast_matrix(n);
    let dc = &contrast * &covariance * contrast.transpose();
    let delta_covariance = (&dc + dc.transpose()) * 0.5;

    let deltas = study
        .pairs()
        .iter()
        .enumerate()
        .map(|(p, pair)| PairSummary {
            pair_id: pair.id.clone(),
            delta: mu[(p, 0)] - mu[(p, 1)],
            variance: delta_covariance[(p, p)].max(0.0),
            kind: SummaryKind::Calibrated,
        })
        .collect();

    Ok(CalibratedEstimates { mu, covariance, deltas, delta_covariance })
}
