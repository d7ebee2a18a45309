//! Covariate outcome model with one intercept per (pair, arm) cell and
//! shared covariate slopes, fitted by (iteratively re)weighted least squares
//! with a heteroskedasticity-robust sandwich covariance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ArmRole, Study};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkFunction {
    #[default]
    Identity,
    Logit,
}

impl LinkFunction {
    pub fn inverse(self, eta: f64) -> f64 {
        match self {
            LinkFunction::Identity => eta,
            LinkFunction::Logit => {
                if eta >= 0.0 {
                    1.0 / (1.0 + (-eta).exp())
                } else {
                    let e = eta.exp();
                    e / (1.0 + e)
                }
            }
        }
    }

    /// Derivative of the inverse link at `eta`.
    pub fn inverse_derivative(self, eta: f64) -> f64 {
        match self {
            LinkFunction::Identity => 1.0,
            LinkFunction::Logit => {
                let mu = self.inverse(eta);
                mu * (1.0 - mu)
            }
        }
    }

    pub fn apply(self, mu: f64) -> f64 {
        match self {
            LinkFunction::Identity => mu,
            LinkFunction::Logit => (mu / (1.0 - mu)).ln(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SandwichFlavor {
    /// Plain `e²` meat.
    #[default]
    HC0,
    /// HC0 scaled by `n / (n − k)` (by `G/(G−1)·(n−1)/(n−k)` when clustered).
    HC1,
}

/// Unit whose score contributions are summed before forming the meat.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RobustUnit {
    #[default]
    Patient,
    /// Clusters are the clinical practices, i.e. the (pair, arm) cells. Since
    /// every cell has its own intercept, the cell-summed score has a zero
    /// intercept component; intercept variance then comes only through the
    /// slopes.
    Practice,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignOptions {
    /// Separate covariate slopes for control and intervention arms.
    #[serde(default)]
    pub arm_specific_slopes: bool,
}

/// Design matrix: `2·n_pairs` cell-intercept columns (pairs in id order,
/// control first) followed by encoded covariate columns.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    matrix: DMatrix<f64>,
    column_names: Vec<String>,
    covariate_names: Vec<String>,
    dropped_reference_levels: Vec<(String, String)>,
    n_pairs: usize,
    arm_specific_slopes: bool,
    /// Cell index (`2·pair + arm`) of each row.
    row_cells: Vec<usize>,
    weights: Vec<f64>,
}

impl DesignMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn dropped_reference_levels(&self) -> &[(String, String)] {
        &self.dropped_reference_levels
    }

    pub fn n_rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_columns(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn n_pairs(&self) -> usize {
        self.n_pairs
    }

    pub fn arm_specific_slopes(&self) -> bool {
        self.arm_specific_slopes
    }

    pub fn n_covariate_columns(&self) -> usize {
        self.n_columns() - 2 * self.n_pairs
    }

    pub fn row_cells(&self) -> &[usize] {
        &self.row_cells
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn cell_column(&self, pair: usize, role: ArmRole) -> usize {
        2 * pair + role.index()
    }

    /// Design row of a hypothetical patient with encoded covariates `x`
    /// placed in cell (`pair`, `role`).
    pub fn row_for(&self, pair: usize, role: ArmRole, x: &[f64]) -> DVector<f64> {
        let mut row = DVector::zeros(self.n_columns());
        row[self.cell_column(pair, role)] = 1.0;
        let base =
            2 * self.n_pairs + if self.arm_specific_slopes { role.index() * self.covariate_names.len() } else { 0 };
        for (j, v) in x.iter().enumerate() {
            row[base + j] = *v;
        }
        row
    }

    /// The same rows with the covariate columns removed.
    pub fn intercepts_only(&self) -> DesignMatrix {
        let k = 2 * self.n_pairs;
        DesignMatrix {
            matrix: self.matrix.columns(0, k).into_owned(),
            column_names: self.column_names[..k].to_vec(),
            covariate_names: Vec::new(),
            dropped_reference_levels: Vec::new(),
            n_pairs: self.n_pairs,
            arm_specific_slopes: false,
            row_cells: self.row_cells.clone(),
            weights: self.weights.clone(),
        }
    }
}

/// Builds the design matrix for a validated study and checks it has full
/// column rank.
pub fn build_design(study: &Study, opts: DesignOptions) -> Result<DesignMatrix> {
    let schema = study.schema();
    let cov_names = schema.encoded_names();
    let p = cov_names.len();
    let n_pairs = study.n_pairs();
    let slope_blocks = if opts.arm_specific_slopes { 2 } else { 1 };
    let k = 2 * n_pairs + slope_blocks * p;
    let n = study.n_records();

    let mut column_names = Vec::with_capacity(k);
    for pair in study.pairs() {
        for role in ArmRole::BOTH {
            column_names.push(format!("cell[{}:{}]", pair.id, role));
        }
    }
    if opts.arm_specific_slopes {
        for role in ArmRole::BOTH {
            column_names.extend(cov_names.iter().map(|c| format!("{c}:{role}")));
        }
    } else {
        column_names.extend(cov_names.iter().cloned());
    }

    let mut matrix = DMatrix::zeros(n, k);
    let mut row_cells = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut i = 0;
    for (pi, pair) in study.pairs().iter().enumerate() {
        for role in ArmRole::BOTH {
            for rec in &pair.arm(role).records {
                let cell = 2 * pi + role.index();
                matrix[(i, cell)] = 1.0;
                let base = 2 * n_pairs + if opts.arm_specific_slopes { role.index() * p } else { 0 };
                for (j, v) in schema.encode(&rec.covariates).into_iter().enumerate() {
                    matrix[(i, base + j)] = v;
                }
                row_cells.push(cell);
                weights.push(rec.weight);
                i += 1;
            }
        }
    }

    let design = DesignMatrix {
        matrix,
        column_names,
        covariate_names: cov_names,
        dropped_reference_levels: schema.reference_levels(),
        n_pairs,
        arm_specific_slopes: opts.arm_specific_slopes,
        row_cells,
        weights,
    };
    check_rank(&design)?;
    Ok(design)
}

/// Relative singular-value threshold below which a direction counts as null.
pub const RANK_TOLERANCE: f64 = 1e-8;

fn check_rank(design: &DesignMatrix) -> Result<()> {
    let (n, k) = design.matrix.shape();
    if k == 0 {
        return Ok(());
    }
    // Zero rows leave singular values and the null space unchanged.
    let padded = if n < k {
        let mut m = DMatrix::zeros(k, k);
        m.rows_mut(0, n).copy_from(&design.matrix);
        m
    } else {
        design.matrix.clone()
    };
    // Scale columns so the threshold is not dominated by covariate units.
    let mut scaled = padded;
    for mut col in scaled.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
    let svd = scaled.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let smax = svd.singular_values.max();
    let mut offending = vec![false; k];
    for (idx, &s) in svd.singular_values.iter().enumerate() {
        if s <= RANK_TOLERANCE * smax {
            for (j, flag) in offending.iter_mut().enumerate() {
                if v_t[(idx, j)].abs() > 1e-6 {
                    *flag = true;
                }
            }
        }
    }
    // A zero column is rank deficient on its own.
    for (j, col) in design.matrix.column_iter().enumerate() {
        if col.norm() == 0.0 {
            offending[j] = true;
        }
    }
    if offending.iter().any(|&f| f) {
        let columns = offending.iter().zip(&design.column_names).filter(|(f, _)| **f).map(|(_, c)| c.clone()).collect();
        return Err(Error::RankDeficient { columns });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub link: LinkFunction,
    pub sandwich: SandwichFlavor,
    pub robust_unit: RobustUnit,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            link: LinkFunction::Identity,
            sandwich: SandwichFlavor::HC0,
            robust_unit: RobustUnit::Patient,
            max_iterations: 100,
            tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CoefficientFit {
    pub theta: DVector<f64>,
    /// Robust (sandwich) covariance of `theta`.
    pub covariance: DMatrix<f64>,
    pub link: LinkFunction,
    pub column_names: Vec<String>,
    pub iterations: usize,
    pub residuals: DVector<f64>,
}

impl CoefficientFit {
    pub fn n_cells(&self) -> usize {
        self.column_names.iter().take_while(|c| c.starts_with("cell[")).count()
    }

    pub fn covariate_coefficients(&self) -> Vec<f64> {
        self.theta.iter().skip(self.n_cells()).copied().collect()
    }
}

/// Stacks the study outcomes in design-row order.
pub fn study_outcomes(study: &Study) -> Vec<f64> {
    study.pairs().iter().flat_map(|p| ArmRole::BOTH.into_iter().flat_map(move |r| p.arm(r).outcomes())).collect()
}

/// Weighted least squares: returns the solution and `(D'WD)⁻¹`.
fn weighted_ls(d: &DMatrix<f64>, y: &DVector<f64>, w: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let mut dw = d.clone();
    let mut yw = y.clone();
    for (i, &wi) in w.iter().enumerate() {
        let s = wi.sqrt();
        dw.row_mut(i).scale_mut(s);
        yw[i] *= s;
    }
    let k = d.ncols();
    let qr = dw.qr();
    let r = qr.r();
    let qty = qr.q().transpose() * yw;
    let theta = r
        .solve_upper_triangular(&qty.rows(0, k).into_owned())
        .ok_or_else(|| Error::Numerical("singular triangular factor".into()))?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::Numerical("singular triangular factor".into()))?;
    let bread = &r_inv * r_inv.transpose();
    Ok((theta, bread))
}

/// Fits the outcome model and its robust covariance.
pub fn fit(design: &DesignMatrix, outcomes: &[f64], opts: FitOptions) -> Result<CoefficientFit> {
    let d = design.matrix();
    if outcomes.len() != d.nrows() {
        return Err(Error::Dimension(format!("{} outcomes for a design with {} rows", outcomes.len(), d.nrows())));
    }
    let y = DVector::from_column_slice(outcomes);
    let w = design.weights();

    let (theta, iterations) = match opts.link {
        LinkFunction::Identity => (weighted_ls(d, &y, w)?.0, 1),
        LinkFunction::Logit => irls_logit(design, &y, opts)?,
    };

    let eta = d * &theta;
    let mu = eta.map(|e| opts.link.inverse(e));
    let residuals = &y - &mu;

    // Bread: inverse derivative of the estimating equation Σ wᵢ dᵢ (yᵢ − μᵢ).
    let mut dh = d.clone();
    for i in 0..d.nrows() {
        let s = (w[i] * opts.link.inverse_derivative(eta[i])).sqrt();
        dh.row_mut(i).scale_mut(s);
    }
    let info = dh.transpose() * &dh;
    let bread = info
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("information matrix not positive definite".into()))?
        .inverse();

    let k = d.ncols();
    let n = d.nrows();
    let mut meat = DMatrix::zeros(k, k);
    let groups = match opts.robust_unit {
        RobustUnit::Patient => {
            for i in 0..n {
                let s = w[i] * residuals[i];
                let row = d.row(i);
                meat += (row.transpose() * row) * (s * s);
            }
            n
        }
        RobustUnit::Practice => {
            let n_cells = 2 * design.n_pairs();
            let mut scores = vec![DVector::<f64>::zeros(k); n_cells];
            for i in 0..n {
                scores[design.row_cells()[i]] += d.row(i).transpose() * (w[i] * residuals[i]);
            }
            for s in &scores {
                meat += s * s.transpose();
            }
            n_cells
        }
    };
    if opts.sandwich == SandwichFlavor::HC1 {
        let nf = n as f64;
        let kf = k as f64;
        let factor = match opts.robust_unit {
            RobustUnit::Patient => nf / (nf - kf),
            RobustUnit::Practice => {
                let g = groups as f64;
                g / (g - 1.0) * (nf - 1.0) / (nf - kf)
            }
        };
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::Numerical("HC1 correction needs more rows than columns".into()));
        }
        meat *= factor;
    }
    let cov = &bread * meat * &bread;
    let covariance = (&cov + cov.transpose()) * 0.5;

    Ok(CoefficientFit {
        theta,
        covariance,
        link: opts.link,
        column_names: design.column_names().to_vec(),
        iterations,
        residuals,
    })
}

fn irls_logit(design: &DesignMatrix, y: &DVector<f64>, opts: FitOptions) -> Result<(DVector<f64>, usize)> {
    for (row, &v) in y.iter().enumerate() {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::OutcomeOutOfRange { row, value: v });
        }
    }
    let d = design.matrix();
    let w = design.weights();
    let link = LinkFunction::Logit;

    // Start from the working response at μ = y.
    let z0 = y.map(|v| link.apply(v));
    let w0: Vec<f64> = y.iter().zip(w).map(|(&m, &wi)| wi * m * (1.0 - m)).collect();
    let mut theta = weighted_ls(d, &z0, &w0)?.0;
    let mut trace = Vec::new();

    for iter in 1..=opts.max_iterations {
        let eta = d * &theta;
        let mut z = DVector::zeros(y.len());
        let mut ww = Vec::with_capacity(y.len());
        for i in 0..y.len() {
            let mu = link.inverse(eta[i]);
            let var = (mu * (1.0 - mu)).max(1e-12);
            z[i] = eta[i] + (y[i] - mu) / var;
            ww.push(w[i] * var);
        }
        let next = weighted_ls(d, &z, &ww)?.0;
        let step = (&next - &theta).amax();
        trace.push(step);
        theta = next;
        if !step.is_finite() {
            break;
        }
        if step < opts.tolerance {
            return Ok((theta, iter));
        }
    }
    Err(Error::NoConvergence { iterations: trace.len(), trace })
}

/// Builds the design for `study` and fits it.
pub fn fit_study(
    study: &Study,
    design_opts: DesignOptions,
    fit_opts: FitOptions,
) -> Result<(DesignMatrix, CoefficientFit)> {
    let design = build_design(study, design_opts)?;
    let fit = fit(&design, &study_outcomes(study), fit_opts)?;
    Ok((design, fit))
}
