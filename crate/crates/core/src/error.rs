use std::fmt;

use crate::model::{ArmRole, PairId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// One failed invariant found while validating a study.
#[derive(Debug, Clone, PartialEq)]
pub enum ValidationIssue {
    MissingArm { pair: PairId, role: ArmRole },
    DuplicateArm { pair: PairId, role: ArmRole },
    TooFewPatients { pair: PairId, role: ArmRole, n: usize },
    SchemaMismatch { pair: PairId, role: ArmRole, record: usize, detail: String },
    NonFiniteOutcome { pair: PairId, role: ArmRole, record: usize },
    InvalidWeight { pair: PairId, role: ArmRole, record: usize },
    ServedBelowSampled { pair: PairId, role: ArmRole, served: u64, sampled: usize },
    RecordInWrongArm { pair: PairId, role: ArmRole, record: usize },
    NoPairs,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::MissingArm { pair, role } => write!(f, "pair {pair}: missing {role} arm"),
            Self::DuplicateArm { pair, role } => write!(f, "pair {pair}: more than one {role} arm"),
            Self::TooFewPatients { pair, role, n } => {
                write!(f, "pair {pair}, {role} arm: {n} patient(s), at least 2 required")
            }
            Self::SchemaMismatch { pair, role, record, detail } => {
                write!(f, "pair {pair}, {role} arm, record {record}: {detail}")
            }
            Self::NonFiniteOutcome { pair, role, record } => {
                write!(f, "pair {pair}, {role} arm, record {record}: outcome is not finite")
            }
            Self::InvalidWeight { pair, role, record } => {
                write!(f, "pair {pair}, {role} arm, record {record}: weight must be finite and positive")
            }
            Self::ServedBelowSampled { pair, role, served, sampled } => {
                write!(f, "pair {pair}, {role} arm: n_served {served} is below n_sampled {sampled}")
            }
            Self::RecordInWrongArm { pair, role, record } => {
                write!(f, "pair {pair}, {role} arm, record {record}: record labels disagree with its arm")
            }
            Self::NoPairs => write!(f, "study has no pairs"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid study: {}", join_issues(.0))]
    Validation(Vec<ValidationIssue>),

    #[error("design matrix is rank deficient; collinear columns: {}", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("IRLS did not converge after {iterations} iterations (last step {:.3e})", .trace.last().copied().unwrap_or(f64::NAN))]
    NoConvergence { iterations: usize, trace: Vec<f64> },

    #[error("outcome {value} at row {row} is outside (0, 1), required by the logit link")]
    OutcomeOutOfRange { row: usize, value: f64 },

    #[error("need at least {needed} pairs, got {got}")]
    TooFewPairs { needed: usize, got: usize },

    #[error("exact enumeration supports at most {max} pairs, got {n}; use Monte Carlo mode")]
    TooManyPairs { n: usize, max: usize },

    #[error("pooled standard deviation of {covariate} is zero in pair {pair}")]
    ZeroPooledSd { pair: PairId, covariate: String },

    #[error("both arms of pair {pair} have zero variance for {covariate}")]
    ZeroVariance { pair: PairId, covariate: String },

    #[error("covariate {name}: {detail}")]
    Covariate { name: String, detail: String },

    #[error("{source_name}:{line}: {message}")]
    Parse { source_name: String, line: u64, message: String },

    #[error("{source_name}:{line}: negative variance {value}")]
    NegativeVariance { source_name: String, line: u64, value: f64 },

    #[error("unknown report format {0:?} (expected json, text or csv-bundle)")]
    UnknownFormat(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{context}: {source}")]
    Context { context: String, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Errors produced by the numerics rather than by the input.
    pub fn is_numerical(&self) -> bool {
        if let Error::Context { source, .. } = self {
            return source.is_numerical();
        }
        matches!(
            self,
            Error::RankDeficient { .. }
                | Error::NoConvergence { .. }
                | Error::Numerical(_)
                | Error::ZeroPooledSd { .. }
                | Error::ZeroVariance { .. }
        )
    }
}

impl Error {
    /// Wraps the error with the pipeline step that produced it.
    pub fn context(self, context: impl Into<String>) -> Error {
        Error::Context { context: context.into(), source: Box::new(self) }
    }

    /// The innermost error beneath any context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            e => e,
        }
    }
}

fn join_issues(issues: &[ValidationIssue]) -> String {
    issues.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}
