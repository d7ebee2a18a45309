//! Analysis pipeline and report emission.
//!
//! [`run_analysis`] reduces the input to crude (and optionally calibrated)
//! pair summaries, runs the selected estimators on each kind and collects the
//! diagnostics. [`emit_report`] renders the result as JSON, aligned text or a
//! bundle of CSV files.

use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate_study, CalibratedEstimates};
use crate::config::{AnalysisConfig, CovarianceMode, Estimator, InputMode};
use crate::diagnostics::{dependence_check, imbalance_report, DependenceCheck, ImbalanceMetric, ImbalanceReport};
use crate::effects::{self, BayesConfig, EffectEstimate, TauPrior};
use crate::error::{Error, Result};
use crate::glm::{fit_study, LinkFunction};
use crate::io::sha256_hex;
use crate::model::{arm_mean_and_variance, crude_summaries, PairId, PairSummary, Study, SummaryKind};
use crate::permutation::{self, PermutationResult, RefitMode, StatisticSpec};

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisInput {
    Patients(Study),
    Summaries(Vec<PairSummary>),
}

impl AnalysisInput {
    fn mode(&self) -> InputMode {
        match self {
            AnalysisInput::Patients(_) => InputMode::PatientLevel,
            AnalysisInput::Summaries(_) => InputMode::SummaryLevel,
        }
    }
}

/// One column of the pair summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub kind: SummaryKind,
    pub pair_id: PairId,
    pub n_control: Option<u64>,
    pub n_intervention: Option<u64>,
    pub mean_control: Option<f64>,
    pub mean_intervention: Option<f64>,
    pub delta: f64,
    pub sqrt_v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateLevel {
    /// Pair differences only.
    FirstLevel,
    /// Pair differences with a second-level variance component.
    TwoLevel,
}

impl EstimateLevel {
    pub fn label(self) -> &'static str {
        match self {
            EstimateLevel::FirstLevel => "1st level",
            EstimateLevel::TwoLevel => "1st+2nd level",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowMethod {
    Mle,
    ProfileMle,
    Bayes,
    Permutation,
}

impl RowMethod {
    pub fn label(self) -> &'static str {
        match self {
            RowMethod::Mle => "MLE",
            RowMethod::ProfileMle => "pMLE",
            RowMethod::Bayes => "Bayes",
            RowMethod::Permutation => "permutation",
        }
    }
}

/// One row of the effect table. Permutation rows carry only a p-value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRow {
    pub kind: SummaryKind,
    pub level: EstimateLevel,
    pub method: RowMethod,
    pub estimate: Option<f64>,
    pub ci95: Option<[f64; 2]>,
    pub se: Option<f64>,
    pub tau2: Option<f64>,
    pub p_value: Option<f64>,
    /// Arrangements evaluated (permutation rows).
    pub permutations: Option<u64>,
}

impl EffectRow {
    fn from_estimate(kind: SummaryKind, level: EstimateLevel, method: RowMethod, e: &EffectEstimate) -> Self {
        EffectRow {
            kind,
            level,
            method,
            estimate: Some(e.point),
            ci95: Some([e.ci95.0, e.ci95.1]),
            se: e.se,
            tau2: e.tau2,
            p_value: e.p_value,
            permutations: None,
        }
    }

    fn from_permutation(kind: SummaryKind, level: EstimateLevel, r: &PermutationResult) -> Self {
        EffectRow {
            kind,
            level,
            method: RowMethod::Permutation,
            estimate: None,
            ci95: None,
            se: None,
            tau2: None,
            p_value: Some(r.p_value),
            permutations: Some(r.n_permutations),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependenceEntry {
    pub kind: SummaryKind,
    pub pair_ids: Vec<PairId>,
    pub check: DependenceCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub config: AnalysisConfig,
    /// SHA-256 of the canonical JSON encoding of the input.
    pub input_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub pair_table: Vec<PairRow>,
    pub effect_table: Vec<EffectRow>,
    pub imbalance_table: Option<ImbalanceReport>,
    pub dependence: Vec<DependenceEntry>,
    pub provenance: Provenance,
}

impl AnalysisReport {
    pub fn effect(&self, kind: SummaryKind, level: EstimateLevel, method: RowMethod) -> Option<&EffectRow> {
        self.effect_table.iter().find(|r| r.kind == kind && r.level == level && r.method == method)
    }
}

fn ctx<T>(r: Result<T>, step: &str, kind: SummaryKind) -> Result<T> {
    r.map_err(|e| e.context(format!("{step} ({kind})")))
}

/// First-level permutation test for one kind of summary.
enum FirstLevelPermutation<'a> {
    SignFlip,
    Refit(&'a Study),
}

fn estimator_rows(
    kind: SummaryKind,
    summaries: &[PairSummary],
    full_cov: Option<&DMatrix<f64>>,
    first_perm: FirstLevelPermutation<'_>,
    cfg: &AnalysisConfig,
) -> Result<Vec<EffectRow>> {
    use EstimateLevel::{FirstLevel, TwoLevel};
    let mut rows = Vec::new();
    let deltas: Vec<f64> = summaries.iter().map(|s| s.delta).collect();
    let seed = cfg.seed.unwrap_or_default();

    let permute = |spec: &StatisticSpec, step: &str| -> Result<Vec<PermutationResult>> {
        let mut out = Vec::new();
        if cfg.has(Estimator::PermutationExact) {
            out.push(ctx(permutation::permute_exact(&deltas, spec, false), &format!("exact {step}"), kind)?);
        }
        if cfg.has(Estimator::PermutationMc) {
            let r = permutation::permute_monte_carlo(&deltas, spec, cfg.mc_draws, seed);
            out.push(ctx(r, &format!("Monte Carlo {step}"), kind)?);
        }
        Ok(out)
    };

    if cfg.has(Estimator::FirstLevel) {
        let e = ctx(effects::first_level_mle(summaries), "first-level MLE", kind)?;
        rows.push(EffectRow::from_estimate(kind, FirstLevel, RowMethod::Mle, &e));
    }
    let perms = match first_perm {
        FirstLevelPermutation::SignFlip => permute(&StatisticSpec::UnweightedMean, "permutation")?,
        FirstLevelPermutation::Refit(study) => {
            let mut out = Vec::new();
            let (d, f) = (cfg.design_options(), cfg.fit_options());
            if cfg.has(Estimator::PermutationExact) {
                out.push(ctx(
                    permutation::permute_refit(study, d, f, RefitMode::Exact),
                    "exact refit permutation",
                    kind,
                )?);
            }
            if cfg.has(Estimator::PermutationMc) {
                let mode = RefitMode::MonteCarlo { draws: cfg.mc_draws, seed };
                out.push(ctx(permutation::permute_refit(study, d, f, mode), "Monte Carlo refit permutation", kind)?);
            }
            out
        }
    };
    rows.extend(perms.iter().map(|r| EffectRow::from_permutation(kind, FirstLevel, r)));

    if cfg.has(Estimator::TwoLevel) {
        let e = ctx(effects::two_level_mle(summaries, full_cov), "two-level MLE", kind)?;
        rows.push(EffectRow::from_estimate(kind, TwoLevel, RowMethod::Mle, &e));
    }
    if cfg.has(Estimator::Profile) {
        let e = ctx(effects::profile_mle(summaries, full_cov), "profile-likelihood MLE", kind)?;
        rows.push(EffectRow::from_estimate(kind, TwoLevel, RowMethod::ProfileMle, &e));
    }
    if cfg.has(Estimator::Bayes) {
        let bayes = BayesConfig { prior: TauPrior::UniformShrinkage { v0: cfg.bayes_v0 }, ..Default::default() };
        let e = ctx(effects::bayes_uniform_shrinkage(summaries, full_cov, bayes), "uniform-shrinkage Bayes", kind)?;
        rows.push(EffectRow::from_estimate(kind, TwoLevel, RowMethod::Bayes, &e));
    }
    if cfg.has(Estimator::TwoLevel) {
        let spec = StatisticSpec::TwoLevelMle {
            variances: summaries.iter().map(|s| s.variance).collect(),
            full_cov: full_cov.cloned(),
        };
        let perms = permute(&spec, "two-level permutation")?;
        rows.extend(perms.iter().map(|r| EffectRow::from_permutation(kind, TwoLevel, r)));
    }
    Ok(rows)
}

fn summary_rows(summaries: &[PairSummary]) -> Vec<PairRow> {
    summaries
        .iter()
        .map(|s| PairRow {
            kind: s.kind,
            pair_id: s.pair_id.clone(),
            n_control: None,
            n_intervention: None,
            mean_control: None,
            mean_intervention: None,
            delta: s.delta,
            sqrt_v: s.sqrt_v(),
        })
        .collect()
}

fn calibrate(study: &Study, cfg: &AnalysisConfig) -> Result<(Study, CalibratedEstimates)> {
    let scaled = match (cfg.link, cfg.outcome_range) {
        (LinkFunction::Logit, Some([lo, hi])) => study.map_outcomes(|y| (y - lo) / (hi - lo))?,
        _ => study.clone(),
    };
    let (design, fit) =
        fit_study(&scaled, cfg.design_options(), cfg.fit_options()).map_err(|e| e.context("outcome model"))?;
    let cal = calibrate_study(&scaled, &design, &fit).map_err(|e| e.context("calibration"))?;
    let cal = match (cfg.link, cfg.outcome_range) {
        (LinkFunction::Logit, Some([lo, hi])) => cal.rescaled(lo, hi - lo),
        _ => cal,
    };
    Ok((scaled, cal))
}

/// Runs the configured pipeline on patient records or per-pair summaries.
pub fn run_analysis(input: &AnalysisInput, config: &AnalysisConfig) -> Result<AnalysisReport> {
    let cfg = config.clone().normalized();
    if cfg.mode != input.mode() {
        return Err(Error::Config(format!("config mode {:?} does not match the input", cfg.mode)));
    }
    cfg.validate()?;

    let mut pair_table = Vec::new();
    let mut effect_table = Vec::new();
    let mut dependence = Vec::new();
    let mut imbalance_table = None;
    let mut push_dependence = |kind: SummaryKind, summaries: &[PairSummary]| -> Result<()> {
        if summaries.len() >= 3 {
            let check = ctx(dependence_check(summaries), "dependence check", kind)?;
            dependence.push(DependenceEntry {
                kind,
                pair_ids: summaries.iter().map(|s| s.pair_id.clone()).collect(),
                check,
            });
        }
        Ok(())
    };

    match input {
        AnalysisInput::Summaries(all) => {
            for kind in [SummaryKind::Crude, SummaryKind::Calibrated] {
                let rows: Vec<PairSummary> = all.iter().filter(|s| s.kind == kind).cloned().collect();
                if rows.is_empty() {
                    continue;
                }
                pair_table.extend(summary_rows(&rows));
                effect_table.extend(estimator_rows(kind, &rows, None, FirstLevelPermutation::SignFlip, &cfg)?);
                push_dependence(kind, &rows)?;
            }
        }
        AnalysisInput::Patients(study) => {
            let crude = crude_summaries(study);
            for (pair, s) in study.pairs().iter().zip(&crude) {
                pair_table.push(PairRow {
                    kind: SummaryKind::Crude,
                    pair_id: pair.id.clone(),
                    n_control: Some(pair.control.n_sampled() as u64),
                    n_intervention: Some(pair.intervention.n_sampled() as u64),
                    mean_control: Some(arm_mean_and_variance(&pair.control).0),
                    mean_intervention: Some(arm_mean_and_variance(&pair.intervention).0),
                    delta: s.delta,
                    sqrt_v: s.sqrt_v(),
                });
            }
            effect_table.extend(estimator_rows(
                SummaryKind::Crude,
                &crude,
                None,
                FirstLevelPermutation::SignFlip,
                &cfg,
            )?);
            push_dependence(SummaryKind::Crude, &crude)?;

            if cfg.calibrate() {
                let (scaled, cal) = calibrate(study, &cfg)?;
                for (p, (pair, s)) in study.pairs().iter().zip(&cal.deltas).enumerate() {
                    pair_table.push(PairRow {
                        kind: SummaryKind::Calibrated,
                        pair_id: pair.id.clone(),
                        n_control: Some(pair.control.n_sampled() as u64),
                        n_intervention: Some(pair.intervention.n_sampled() as u64),
                        mean_control: Some(cal.mu[(p, 0)]),
                        mean_intervention: Some(cal.mu[(p, 1)]),
                        delta: s.delta,
                        sqrt_v: s.sqrt_v(),
                    });
                }
                let full = (cfg.covariance_mode == CovarianceMode::Full).then_some(&cal.delta_covariance);
                let perm = if cfg.permutation_refit {
                    FirstLevelPermutation::Refit(&scaled)
                } else {
                    FirstLevelPermutation::SignFlip
                };
                effect_table.extend(estimator_rows(SummaryKind::Calibrated, &cal.deltas, full, perm, &cfg)?);
                push_dependence(SummaryKind::Calibrated, &cal.deltas)?;
            }
            if !study.schema().is_empty() {
                imbalance_table = Some(imbalance_report(study, cfg.t_test).map_err(|e| e.context("imbalance table"))?);
            }
        }
    }

    let canonical = serde_json::to_vec(input).map_err(|e| Error::Numerical(format!("input encoding: {e}")))?;
    Ok(AnalysisReport {
        pair_table,
        effect_table,
        imbalance_table,
        dependence,
        provenance: Provenance {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: cfg,
            input_digest: sha256_hex(&canonical),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Text,
    CsvBundle,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "text" | "txt" => Ok(ReportFormat::Text),
            "csv-bundle" | "csv_bundle" | "csv" => Ok(ReportFormat::CsvBundle),
            _ => Err(Error::UnknownFormat(s.to_string())),
        }
    }
}

/// A rendered output file. Single-document formats yield one file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFile {
    pub name: String,
    pub bytes: Vec<u8>,
}

/// Values rounded for presentation: one decimal, p-values two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplayBlock {
    pub pair_table: Vec<PairRow>,
    pub effect_table: Vec<EffectRow>,
}

fn round_to(x: f64, digits: i32) -> f64 {
    let f = 10f64.powi(digits);
    let r = (x * f).round() / f;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn r1(x: f64) -> f64 {
    round_to(x, 1)
}

pub fn display_block(report: &AnalysisReport) -> DisplayBlock {
    DisplayBlock {
        pair_table: report
            .pair_table
            .iter()
            .map(|r| PairRow {
                mean_control: r.mean_control.map(r1),
                mean_intervention: r.mean_intervention.map(r1),
                delta: r1(r.delta),
                sqrt_v: r1(r.sqrt_v),
                ..r.clone()
            })
            .collect(),
        effect_table: report
            .effect_table
            .iter()
            .map(|r| EffectRow {
                estimate: r.estimate.map(r1),
                ci95: r.ci95.map(|c| c.map(r1)),
                se: r.se.map(r1),
                tau2: r.tau2.map(r1),
                p_value: r.p_value.map(|p| round_to(p, 2)),
                ..r.clone()
            })
            .collect(),
    }
}

#[derive(Serialize, Deserialize)]
struct JsonDocument {
    report: AnalysisReport,
    display: DisplayBlock,
}

/// Reads back a report written in the JSON format.
pub fn parse_json_report(bytes: &[u8]) -> Result<AnalysisReport> {
    let doc: JsonDocument = serde_json::from_slice(bytes).map_err(|e| Error::Config(format!("report: {e}")))?;
    Ok(doc.report)
}

pub fn emit_report(report: &AnalysisReport, format: ReportFormat) -> Result<Vec<ReportFile>> {
    match format {
        ReportFormat::Json => {
            let doc = JsonDocument { report: report.clone(), display: display_block(report) };
            let mut bytes =
                serde_json::to_vec_pretty(&doc).map_err(|e| Error::Numerical(format!("report encoding: {e}")))?;
            bytes.push(b'\n');
            Ok(vec![ReportFile { name: "report.json".into(), bytes }])
        }
        ReportFormat::Text => {
            Ok(vec![ReportFile { name: "report.txt".into(), bytes: render_text(report).into_bytes() }])
        }
        ReportFormat::CsvBundle => csv_bundle(report),
    }
}

fn fmt_opt(x: Option<f64>, digits: usize) -> String {
    x.map_or_else(
        || "-".into(),
        |v| format!("{:.*}", digits, if v.abs() < 0.5 * 10f64.powi(-(digits as i32)) { 0.0 } else { v }),
    )
}

/// Left-aligned first column, right-aligned rest.
fn render_grid(out: &mut String, rows: &[Vec<String>]) {
    let ncol = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> =
        (0..ncol).map(|c| rows.iter().filter_map(|r| r.get(c)).map(String::len).max().unwrap_or(0)).collect();
    for r in rows {
        let mut line = String::new();
        for (c, cell) in r.iter().enumerate() {
            if c == 0 {
                let _ = write!(line, "{cell:<w$}", w = widths[0]);
            } else {
                let _ = write!(line, "  {cell:>w$}", w = widths[c]);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
}

fn render_text(report: &AnalysisReport) -> String {
    let mut out = String::new();
    for kind in [SummaryKind::Crude, SummaryKind::Calibrated] {
        let rows: Vec<&PairRow> = report.pair_table.iter().filter(|r| r.kind == kind).collect();
        if rows.is_empty() {
            continue;
        }
        let _ = writeln!(out, "Pair summaries ({kind})");
        let mut grid =
            vec![std::iter::once("pair".to_string()).chain(rows.iter().map(|r| r.pair_id.to_string())).collect()];
        let counts = |label: &str, f: &dyn Fn(&PairRow) -> Option<u64>| -> Vec<String> {
            std::iter::once(label.to_string())
                .chain(rows.iter().map(|r| f(r).map_or("-".into(), |n| n.to_string())))
                .collect()
        };
        let values = |label: &str, f: &dyn Fn(&PairRow) -> Option<f64>| -> Vec<String> {
            std::iter::once(label.to_string()).chain(rows.iter().map(|r| fmt_opt(f(r), 1))).collect()
        };
        if rows.iter().any(|r| r.n_control.is_some()) {
            grid.push(counts("n control", &|r| r.n_control));
            grid.push(counts("n intervention", &|r| r.n_intervention));
            grid.push(values("mean control", &|r| r.mean_control));
            grid.push(values("mean intervention", &|r| r.mean_intervention));
        }
        grid.push(values("delta", &|r| Some(r.delta)));
        grid.push(values("sqrt(v)", &|r| Some(r.sqrt_v)));
        render_grid(&mut out, &grid);
        out.push('\n');
    }

    if !report.effect_table.is_empty() {
        out.push_str("Effect estimates\n");
        let mut grid = vec![["kind", "level", "method", "estimate", "95% interval", "s.e.", "tau2", "p"]
            .map(String::from)
            .to_vec()];
        for r in &report.effect_table {
            grid.push(vec![
                r.kind.to_string(),
                r.level.label().into(),
                r.method.label().into(),
                fmt_opt(r.estimate, 1),
                r.ci95
                    .map_or_else(|| "-".into(), |[a, b]| format!("({}, {})", fmt_opt(Some(a), 1), fmt_opt(Some(b), 1))),
                fmt_opt(r.se, 1),
                fmt_opt(r.tau2, 1),
                fmt_opt(r.p_value, 3),
            ]);
        }
        render_grid(&mut out, &grid);
        out.push('\n');
    }

    if let Some(imb) = &report.imbalance_table {
        out.push_str("Covariate imbalance (control vs intervention)\n");
        let mut grid = vec![std::iter::once("covariate".to_string())
            .chain(std::iter::once("metric".into()))
            .chain(imb.pair_ids.iter().map(ToString::to_string))
            .collect::<Vec<_>>()];
        for row in &imb.rows {
            let name = match &row.level {
                Some(l) => format!("{}={l}", row.covariate),
                None => row.covariate.clone(),
            };
            let metric = match row.metric {
                ImbalanceMetric::EffectSize => "effect size",
                ImbalanceMetric::TStatistic => "t",
                ImbalanceMetric::OddsRatio => "odds ratio",
            };
            grid.push([name, metric.into()].into_iter().chain(row.values.iter().map(|v| fmt_opt(*v, 2))).collect());
        }
        render_grid(&mut out, &grid);
        out.push('\n');
    }

    for d in &report.dependence {
        let _ = writeln!(
            out,
            "Dependence of sqrt(v) on delta ({}): R^2 = {:.3}, slope = {:.3}, intercept = {:.3}{}",
            d.kind,
            d.check.r_squared,
            d.check.slope,
            d.check.intercept,
            if d.check.degenerate { " (degenerate)" } else { "" }
        );
    }
    out
}

fn num(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

fn csv_file(name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<ReportFile> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let enc = |e: csv::Error| Error::Numerical(format!("{name}: {e}"));
    w.write_record(header).map_err(enc)?;
    for r in rows {
        w.write_record(&r).map_err(enc)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Numerical(format!("{name}: {e}")))?;
    Ok(ReportFile { name: name.into(), bytes })
}

fn csv_bundle(report: &AnalysisReport) -> Result<Vec<ReportFile>> {
    let mut files = vec![
        csv_file(
            "pairs.csv",
            &["kind", "pair_id", "n_control", "n_intervention", "mean_control", "mean_intervention", "delta", "sqrt_v"],
            report.pair_table.iter().map(|r| {
                vec![
                    r.kind.to_string(),
                    r.pair_id.to_string(),
                    r.n_control.map_or_else(String::new, |n| n.to_string()),
                    r.n_intervention.map_or_else(String::new, |n| n.to_string()),
                    num(r.mean_control),
                    num(r.mean_intervention),
                    r.delta.to_string(),
                    r.sqrt_v.to_string(),
                ]
            }),
        )?,
        csv_file(
            "effects.csv",
            &["kind", "level", "method", "estimate", "ci_lower", "ci_upper", "se", "tau2", "p_value", "permutations"],
            report.effect_table.iter().map(|r| {
                vec![
                    r.kind.to_string(),
                    r.level.label().into(),
                    r.method.label().into(),
                    num(r.estimate),
                    num(r.ci95.map(|c| c[0])),
                    num(r.ci95.map(|c| c[1])),
                    num(r.se),
                    num(r.tau2),
                    num(r.p_value),
                    r.permutations.map_or_else(String::new, |n| n.to_string()),
                ]
            }),
        )?,
        csv_file(
            "dependence.csv",
            &["kind", "pair_id", "delta", "sqrt_v"],
            report.dependence.iter().flat_map(|d| {
                d.pair_ids
                    .iter()
                    .zip(&d.check.points)
                    .map(|(id, (x, y))| vec![d.kind.to_string(), id.to_string(), x.to_string(), y.to_string()])
                    .collect::<Vec<_>>()
            }),
        )?,
        csv_file(
            "dependence_fit.csv",
            &["kind", "r_squared", "slope", "intercept", "degenerate"],
            report.dependence.iter().map(|d| {
                vec![
                    d.kind.to_string(),
                    d.check.r_squared.to_string(),
                    d.check.slope.to_string(),
                    d.check.intercept.to_string(),
                    d.check.degenerate.to_string(),
                ]
            }),
        )?,
    ];
    if let Some(imb) = &report.imbalance_table {
        let mut header = vec!["covariate", "level", "metric"];
        let ids: Vec<String> = imb.pair_ids.iter().map(ToString::to_string).collect();
        header.extend(ids.iter().map(String::as_str));
        files.push(csv_file(
            "imbalance.csv",
            &header,
            imb.rows.iter().map(|r| {
                let metric =
                    serde_json::to_value(r.metric).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
                [r.covariate.clone(), r.level.clone().unwrap_or_default(), metric]
                    .into_iter()
                    .chain(r.values.iter().map(|v| num(*v)))
                    .collect()
            }),
        )?);
    }
    Ok(files)
}
