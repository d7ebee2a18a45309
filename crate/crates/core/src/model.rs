//! Study data model and the crude (uncalibrated) per-pair quantities.
//!
//! A [`Study`] can only be obtained through [`validate_study`], so every
//! downstream module may assume the invariants listed there: two arms per
//! pair, at least two patients per arm, finite outcomes and covariates that
//! conform to the study-wide [`CovariateSchema`].

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationIssue};
use crate::stats;

/// Which treatment the cluster actually received. Control is `c = 1`,
/// intervention is `c = 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArmRole {
    Control,
    Intervention,
}

impl ArmRole {
    pub const BOTH: [ArmRole; 2] = [ArmRole::Control, ArmRole::Intervention];

    /// Zero-based column index (control 0, intervention 1).
    pub fn index(self) -> usize {
        match self {
            ArmRole::Control => 0,
            ArmRole::Intervention => 1,
        }
    }

    pub fn swapped(self) -> ArmRole {
        match self {
            ArmRole::Control => ArmRole::Intervention,
            ArmRole::Intervention => ArmRole::Control,
        }
    }

    pub fn parse(s: &str) -> Option<ArmRole> {
        match s.trim().to_ascii_lowercase().as_str() {
            "control" | "c" | "1" => Some(ArmRole::Control),
            "intervention" | "treatment" | "i" | "2" => Some(ArmRole::Intervention),
            _ => None,
        }
    }
}

impl fmt::Display for ArmRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArmRole::Control => "control",
            ArmRole::Intervention => "intervention",
        })
    }
}

/// Pair identifier. Ordered numerically when both ids are integers, so that
/// "2" sorts before "10"; integer ids sort before any other ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PairId(pub String);

impl PairId {
    pub fn new(s: impl Into<String>) -> Self {
        PairId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn numeric(&self) -> Option<i64> {
        self.0.trim().parse().ok()
    }
}

impl Ord for PairId {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self.numeric(), other.numeric()) {
            (Some(a), Some(b)) => a.cmp(&b).then_with(|| self.0.cmp(&other.0)),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => self.0.cmp(&other.0),
        }
    }
}

impl PartialOrd for PairId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for PairId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for PairId {
    fn from(s: &str) -> Self {
        PairId(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CovariateKind {
    Continuous,
    /// The first level is the reference level and gets no design column.
    Categorical {
        levels: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: CovariateKind,
}

/// Study-wide covariate layout. Continuous values of a [`CovariateVector`]
/// follow the order of the continuous entries here, categorical labels the
/// order of the categorical entries.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CovariateSchema {
    pub covariates: Vec<CovariateSpec>,
}

impl CovariateSchema {
    pub fn new(covariates: Vec<CovariateSpec>) -> Self {
        CovariateSchema { covariates }
    }

    pub fn is_empty(&self) -> bool {
        self.covariates.is_empty()
    }

    pub fn n_continuous(&self) -> usize {
        self.covariates.iter().filter(|c| matches!(c.kind, CovariateKind::Continuous)).count()
    }

    pub fn n_categorical(&self) -> usize {
        self.covariates.len() - self.n_continuous()
    }

    /// Position of a named covariate inside the continuous (or categorical)
    /// value list of a [`CovariateVector`].
    pub fn locate(&self, name: &str) -> Option<(usize, &CovariateSpec)> {
        let mut cont = 0;
        let mut cat = 0;
        for spec in &self.covariates {
            let slot = match spec.kind {
                CovariateKind::Continuous => {
                    cont += 1;
                    cont - 1
                }
                CovariateKind::Categorical { .. } => {
                    cat += 1;
                    cat - 1
                }
            };
            if spec.name == name {
                return Some((slot, spec));
            }
        }
        None
    }

    /// Names of the encoded design columns: one per continuous covariate and
    /// one per non-reference level of each categorical covariate.
    pub fn encoded_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for spec in &self.covariates {
            match &spec.kind {
                CovariateKind::Continuous => names.push(spec.name.clone()),
                CovariateKind::Categorical { levels } => {
                    for level in levels.iter().skip(1) {
                        names.push(format!("{}={}", spec.name, level));
                    }
                }
            }
        }
        names
    }

    pub fn encoded_len(&self) -> usize {
        self.covariates
            .iter()
            .map(|c| match &c.kind {
                CovariateKind::Continuous => 1,
                CovariateKind::Categorical { levels } => levels.len().saturating_sub(1),
            })
            .sum()
    }

    /// Reference levels dropped by the indicator encoding, as `(covariate, level)`.
    pub fn reference_levels(&self) -> Vec<(String, String)> {
        self.covariates
            .iter()
            .filter_map(|c| match &c.kind {
                CovariateKind::Categorical { levels } => levels.first().map(|l| (c.name.clone(), l.clone())),
                CovariateKind::Continuous => None,
            })
            .collect()
    }

    /// Checks a covariate vector against the schema; returns a description of
    /// the first problem found.
    pub fn check(&self, x: &CovariateVector) -> std::result::Result<(), String> {
        if x.continuous.len() != self.n_continuous() || x.categorical.len() != self.n_categorical() {
            return Err(format!(
                "covariate dimensions ({} continuous, {} categorical) differ from schema ({}, {})",
                x.continuous.len(),
                x.categorical.len(),
                self.n_continuous(),
                self.n_categorical()
            ));
        }
        let mut cont = x.continuous.iter();
        let mut cat = x.categorical.iter();
        for spec in &self.covariates {
            match &spec.kind {
                CovariateKind::Continuous => {
                    let v = cont.next().copied().unwrap_or(f64::NAN);
                    if !v.is_finite() {
                        return Err(format!("covariate {} is not finite", spec.name));
                    }
                }
                CovariateKind::Categorical { levels } => {
                    let label = cat.next().map(String::as_str).unwrap_or("");
                    if !levels.iter().any(|l| l == label) {
                        return Err(format!("covariate {}: unknown level {label:?}", spec.name));
                    }
                }
            }
        }
        Ok(())
    }

    /// Encodes a conforming covariate vector into design-column values.
    pub fn encode(&self, x: &CovariateVector) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.encoded_len());
        let mut cont = x.continuous.iter();
        let mut cat = x.categorical.iter();
        for spec in &self.covariates {
            match &spec.kind {
                CovariateKind::Continuous => out.push(*cont.next().expect("validated vector")),
                CovariateKind::Categorical { levels } => {
                    let label = cat.next().expect("validated vector");
                    out.extend(levels.iter().skip(1).map(|l| f64::from(u8::from(l == label))));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CovariateVector {
    pub continuous: Vec<f64>,
    pub categorical: Vec<String>,
}

impl CovariateVector {
    pub fn continuous(values: Vec<f64>) -> Self {
        CovariateVector { continuous: values, categorical: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub pair_id: PairId,
    pub role: ArmRole,
    pub outcome: f64,
    pub covariates: CovariateVector,
    /// Least-squares weight; 1 unless a weight column was supplied.
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

impl PatientRecord {
    pub fn new(pair_id: PairId, role: ArmRole, outcome: f64, covariates: CovariateVector) -> Self {
        PatientRecord { pair_id, role, outcome, covariates, weight: 1.0 }
    }
}

/// One clinical practice: its sampled patients and the size of the
/// population it serves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterArm {
    pub pair_id: PairId,
    pub role: ArmRole,
    pub n_served: u64,
    pub records: Vec<PatientRecord>,
}

impl ClusterArm {
    pub fn n_sampled(&self) -> usize {
        self.records.len()
    }

    pub fn outcomes(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.outcome)
    }

    fn relabeled(&self, role: ArmRole) -> ClusterArm {
        let mut arm = self.clone();
        arm.role = role;
        for r in &mut arm.records {
            r.role = role;
        }
        arm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub id: PairId,
    pub control: ClusterArm,
    pub intervention: ClusterArm,
}

impl Pair {
    pub fn arm(&self, role: ArmRole) -> &ClusterArm {
        match role {
            ArmRole::Control => &self.control,
            ArmRole::Intervention => &self.intervention,
        }
    }

    /// The same pair had the treatment assignment gone the other way.
    pub fn swapped(&self) -> Pair {
        Pair {
            id: self.id.clone(),
            control: self.intervention.relabeled(ArmRole::Control),
            intervention: self.control.relabeled(ArmRole::Intervention),
        }
    }

    /// Fractions of the pair's served population, `N_c / (N_1 + N_2)`.
    pub fn served_fractions(&self) -> [f64; 2] {
        let n1 = self.control.n_served as f64;
        let n2 = self.intervention.n_served as f64;
        [n1 / (n1 + n2), n2 / (n1 + n2)]
    }
}

/// Unvalidated study input: a flat list of arms plus the covariate schema.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RawStudy {
    pub schema: CovariateSchema,
    pub arms: Vec<ClusterArm>,
}

/// A validated study; pairs are sorted by id.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Study {
    pairs: Vec<Pair>,
    schema: CovariateSchema,
}

impl Study {
    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn schema(&self) -> &CovariateSchema {
        &self.schema
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn n_records(&self) -> usize {
        self.pairs.iter().map(|p| p.control.n_sampled() + p.intervention.n_sampled()).sum()
    }

    /// Swaps the treatment labels of the pairs whose `flip` entry is true.
    pub fn with_swapped(&self, flip: &[bool]) -> Study {
        assert_eq!(flip.len(), self.pairs.len());
        Study {
            pairs: self.pairs.iter().zip(flip).map(|(p, &f)| if f { p.swapped() } else { p.clone() }).collect(),
            schema: self.schema.clone(),
        }
    }

    /// Applies `f` to every outcome; the result is revalidated.
    pub fn map_outcomes(&self, f: impl Fn(f64) -> f64) -> Result<Study> {
        let mut raw = self.to_raw();
        for arm in &mut raw.arms {
            for r in &mut arm.records {
                r.outcome = f(r.outcome);
            }
        }
        validate_study(raw)
    }

    pub fn to_raw(&self) -> RawStudy {
        RawStudy {
            schema: self.schema.clone(),
            arms: self.pairs.iter().flat_map(|p| [p.control.clone(), p.intervention.clone()]).collect(),
        }
    }
}

/// Validates a raw study, collecting every violated invariant.
pub fn validate_study(raw: RawStudy) -> Result<Study> {
    let mut issues = Vec::new();
    let mut slots: BTreeMap<PairId, [Option<ClusterArm>; 2]> = BTreeMap::new();

    for arm in raw.arms {
        let (pair, role) = (arm.pair_id.clone(), arm.role);
        let n = arm.n_sampled();
        if n < 2 {
            issues.push(ValidationIssue::TooFewPatients { pair: pair.clone(), role, n });
        }
        if (arm.n_served as u128) < n as u128 {
            issues.push(ValidationIssue::ServedBelowSampled {
                pair: pair.clone(),
                role,
                served: arm.n_served,
                sampled: n,
            });
        }
        for (k, r) in arm.records.iter().enumerate() {
            if r.pair_id != pair || r.role != role {
                issues.push(ValidationIssue::RecordInWrongArm { pair: pair.clone(), role, record: k });
            }
            if !r.outcome.is_finite() {
                issues.push(ValidationIssue::NonFiniteOutcome { pair: pair.clone(), role, record: k });
            }
            if !(r.weight.is_finite() && r.weight > 0.0) {
                issues.push(ValidationIssue::InvalidWeight { pair: pair.clone(), role, record: k });
            }
            if let Err(detail) = raw.schema.check(&r.covariates) {
                issues.push(ValidationIssue::SchemaMismatch { pair: pair.clone(), role, record: k, detail });
            }
        }
        let slot = &mut slots.entry(pair.clone()).or_default()[role.index()];
        if slot.is_some() {
            issues.push(ValidationIssue::DuplicateArm { pair, role });
        } else {
            *slot = Some(arm);
        }
    }

    if slots.is_empty() {
        issues.push(ValidationIssue::NoPairs);
    }

    let mut pairs = Vec::with_capacity(slots.len());
    for (id, [control, intervention]) in slots {
        match (control, intervention) {
            (Some(control), Some(intervention)) => pairs.push(Pair { id, control, intervention }),
            (c, i) => {
                for (arm, role) in [(c.is_none(), ArmRole::Control), (i.is_none(), ArmRole::Intervention)] {
                    if arm {
                        issues.push(ValidationIssue::MissingArm { pair: id.clone(), role });
                    }
                }
            }
        }
    }

    if issues.is_empty() {
        Ok(Study { pairs, schema: raw.schema })
    } else {
        Err(Error::Validation(issues))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SummaryKind {
    Crude,
    Calibrated,
}

impl SummaryKind {
    pub fn parse(s: &str) -> Option<SummaryKind> {
        match s.trim().to_ascii_lowercase().as_str() {
            "crude" | "uncalibrated" => Some(SummaryKind::Crude),
            "calibrated" | "calibr" => Some(SummaryKind::Calibrated),
            _ => None,
        }
    }
}

impl fmt::Display for SummaryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SummaryKind::Crude => "crude",
            SummaryKind::Calibrated => "calibrated",
        })
    }
}

/// Per-pair difference estimate and its sampling variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    pub pair_id: PairId,
    pub delta: f64,
    pub variance: f64,
    pub kind: SummaryKind,
}

impl PairSummary {
    pub fn sqrt_v(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Sample mean of the arm's outcomes and the estimated variance of that
/// mean, `s² / n` with the `n − 1` divisor in `s²`.
pub fn arm_mean_and_variance(arm: &ClusterArm) -> (f64, f64) {
    let y: Vec<f64> = arm.outcomes().collect();
    let n = y.len() as f64;
    (stats::mean(&y), stats::sample_variance(&y) / n)
}

/// Crude difference, control mean minus intervention mean.
pub fn crude_pair_summary(pair: &Pair) -> PairSummary {
    let (m1, v1) = arm_mean_and_variance(&pair.control);
    let (m2, v2) = arm_mean_and_variance(&pair.intervention);
    PairSummary { pair_id: pair.id.clone(), delta: m1 - m2, variance: v1 + v2, kind: SummaryKind::Crude }
}

pub fn crude_summaries(study: &Study) -> Vec<PairSummary> {
    study.pairs().iter().map(crude_pair_summary).collect()
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn arm(pair: &str, role: ArmRole, outcomes: &[f64]) -> ClusterArm {
        ClusterArm {
            pair_id: pair.into(),
            role,
            n_served: outcomes.len() as u64,
            records: outcomes
                .iter()
                .map(|&y| PatientRecord::new(pair.into(), role, y, CovariateVector::default()))
                .collect(),
        }
    }

    pub fn study(pairs: &[(&str, &[f64], &[f64])]) -> Study {
        let arms = pairs
            .iter()
            .flat_map(|(id, c, i)| [arm(id, ArmRole::Control, c), arm(id, ArmRole::Intervention, i)])
            .collect();
        validate_study(RawStudy { schema: CovariateSchema::default(), arms }).unwrap()
    }
}
