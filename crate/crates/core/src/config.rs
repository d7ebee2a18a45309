//! Analysis configuration, read from JSON. Every field has a default so an
//! empty object is a valid configuration for patient-level input.

use serde::{Deserialize, Serialize};

use crate::diagnostics::TTestKind;
use crate::error::{Error, Result};
use crate::glm::{DesignOptions, FitOptions, LinkFunction, RobustUnit, SandwichFlavor};
use crate::permutation::MIN_MC_DRAWS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    #[default]
    PatientLevel,
    SummaryLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Calibration {
    #[default]
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    FirstLevel,
    TwoLevel,
    Profile,
    Bayes,
    PermutationExact,
    PermutationMc,
}

impl Estimator {
    pub const ALL: [Estimator; 6] = [
        Estimator::FirstLevel,
        Estimator::TwoLevel,
        Estimator::Profile,
        Estimator::Bayes,
        Estimator::PermutationExact,
        Estimator::PermutationMc,
    ];

    pub fn parse(s: &str) -> Option<Estimator> {
        serde_json::from_value(serde_json::Value::String(s.trim().replace('-', "_"))).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceMode {
    /// Pair differences treated as independent.
    #[default]
    Diagonal,
    /// Cross-pair covariance of the calibrated differences is kept.
    Full,
}

fn default_estimators() -> Vec<Estimator> {
    vec![Estimator::FirstLevel, Estimator::TwoLevel, Estimator::Profile, Estimator::Bayes, Estimator::PermutationExact]
}

fn default_mc_draws() -> u64 {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub mode: InputMode,
    pub calibration: Calibration,
    pub estimators: Vec<Estimator>,
    pub link: LinkFunction,
    pub covariance_mode: CovarianceMode,
    pub sandwich: SandwichFlavor,
    pub robust_unit: RobustUnit,
    pub arm_specific_slopes: bool,
    /// Required when Monte Carlo permutation is selected.
    pub seed: Option<u64>,
    pub mc_draws: u64,
    /// Refit and recalibrate for every label swap in the first-level
    /// calibrated permutation test instead of flipping signs.
    pub permutation_refit: bool,
    /// Scale of the uniform-shrinkage prior; harmonic mean of the pair
    /// variances when absent.
    pub bayes_v0: Option<f64>,
    pub t_test: TTestKind,
    /// `[lo, hi]` mapped onto `[0, 1]` before a logit fit; calibrated means
    /// are reported back on the original scale.
    pub outcome_range: Option<[f64; 2]>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            mode: InputMode::PatientLevel,
            calibration: Calibration::On,
            estimators: default_estimators(),
            link: LinkFunction::Identity,
            covariance_mode: CovarianceMode::Diagonal,
            sandwich: SandwichFlavor::HC0,
            robust_unit: RobustUnit::Patient,
            arm_specific_slopes: false,
            seed: None,
            mc_draws: default_mc_draws(),
            permutation_refit: false,
            bayes_v0: None,
            t_test: TTestKind::Welch,
            outcome_range: None,
        }
    }
}

impl AnalysisConfig {
    /// Defaults suited to per-pair summary input.
    pub fn summary_level() -> Self {
        AnalysisConfig { mode: InputMode::SummaryLevel, calibration: Calibration::Off, ..Default::default() }
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let cfg: AnalysisConfig = serde_json::from_slice(bytes).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg.normalized())
    }

    /// Sorts and de-duplicates the estimator list.
    pub fn normalized(mut self) -> Self {
        self.estimators.sort();
        self.estimators.dedup();
        self
    }

    pub fn has(&self, e: Estimator) -> bool {
        self.estimators.contains(&e)
    }

    pub fn calibrate(&self) -> bool {
        self.calibration == Calibration::On
    }

    pub fn design_options(&self) -> DesignOptions {
        DesignOptions { arm_specific_slopes: self.arm_specific_slopes }
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions { link: self.link, sandwich: self.sandwich, robust_unit: self.robust_unit, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.calibrate() && self.mode == InputMode::SummaryLevel {
            return bad("calibration requires patient-level input");
        }
        if self.covariance_mode == CovarianceMode::Full && self.mode == InputMode::SummaryLevel {
            return bad("full covariance needs patient-level input; summaries carry variances only");
        }
        if self.permutation_refit && !(self.calibrate() && self.mode == InputMode::PatientLevel) {
            return bad("permutation_refit needs patient-level input with calibration on");
        }
        if self.has(Estimator::PermutationMc) {
            if self.seed.is_none() {
                return bad("a seed is mandatory for Monte Carlo permutation");
            }
            if self.mc_draws < MIN_MC_DRAWS {
                return Err(Error::Config(format!("mc_draws must be at least {MIN_MC_DRAWS}")));
            }
        }
        if let Some(v0) = self.bayes_v0 {
            if !(v0 > 0.0 && v0.is_finite()) {
                return bad("bayes_v0 must be positive");
            }
        }
        if let Some([lo, hi]) = self.outcome_range {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return bad("outcome_range must be [lo, hi] with lo < hi");
            }
            if self.link != LinkFunction::Logit {
                return bad("outcome_range only applies to the logit link");
            }
        }
        Ok(())
    }
}
