//! CSV and JSON input loaders.
//!
//! Every loader has a byte-slice entry point (`parse_*`) so malformed input
//! can be exercised without touching the filesystem; the `load_*` functions
//! only read the file and delegate.
//!
//! Patient files carry `pair_id`, `role`, `outcome`, an optional `weight` and
//! one column per covariate. A covariate column is continuous when every cell
//! parses as a finite number and categorical otherwise, unless a schema file
//! says differently. Categorical levels default to sorted order, so the
//! reference level is the smallest label.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{
    validate_study, ArmRole, ClusterArm, CovariateKind, CovariateSchema, CovariateSpec, CovariateVector, PairId,
    PairSummary, PatientRecord, RawStudy, Study, SummaryKind,
};

/// Lower-case hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaEntry {
    pub name: String,
    pub kind: ColumnKind,
    /// Categorical levels, reference level first. Inferred when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<String>>,
}

/// Explicit covariate typing that overrides inference.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaFile {
    pub covariates: Vec<SchemaEntry>,
}

impl SchemaFile {
    fn entry(&self, name: &str) -> Option<&SchemaEntry> {
        self.covariates.iter().find(|e| e.name == name)
    }
}

pub fn parse_schema_json(bytes: &[u8]) -> Result<SchemaFile> {
    let schema: SchemaFile = serde_json::from_slice(bytes).map_err(|e| Error::Config(format!("schema file: {e}")))?;
    let mut seen = BTreeSet::new();
    for e in &schema.covariates {
        if !seen.insert(e.name.as_str()) {
            return Err(Error::Config(format!("schema file lists {:?} twice", e.name)));
        }
        match (e.kind, &e.levels) {
            (ColumnKind::Continuous, Some(_)) => {
                return Err(Error::Config(format!("continuous covariate {:?} cannot have levels", e.name)))
            }
            (ColumnKind::Categorical, Some(levels)) => {
                let distinct: BTreeSet<_> = levels.iter().collect();
                if levels.is_empty() || distinct.len() != levels.len() {
                    return Err(Error::Config(format!("levels of {:?} must be non-empty and distinct", e.name)));
                }
            }
            _ => {}
        }
    }
    Ok(schema)
}

fn parse_err(source_name: &str, line: u64, message: impl Into<String>) -> Error {
    Error::Parse { source_name: source_name.into(), line, message: message.into() }
}

fn csv_err(source_name: &str, e: csv::Error) -> Error {
    let line = e.position().map_or(0, csv::Position::line);
    parse_err(source_name, line, e.to_string())
}

/// Header row and data rows with their line numbers.
struct Table {
    header: Vec<String>,
    rows: Vec<(u64, csv::StringRecord)>,
}

impl Table {
    fn read(bytes: &[u8], source_name: &str) -> Result<Table> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(bytes);
        let header: Vec<String> =
            rdr.headers().map_err(|e| csv_err(source_name, e))?.iter().map(str::to_string).collect();
        if header.iter().all(String::is_empty) {
            return Err(parse_err(source_name, 1, "missing header row"));
        }
        let mut seen = BTreeSet::new();
        for h in &header {
            if h.is_empty() {
                return Err(parse_err(source_name, 1, "empty column name"));
            }
            if !seen.insert(h.to_ascii_lowercase()) {
                return Err(parse_err(source_name, 1, format!("duplicate column {h:?}")));
            }
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_err(source_name, e))?;
            let line = rec.position().map_or(0, csv::Position::line);
            rows.push((line, rec));
        }
        Ok(Table { header, rows })
    }

    fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h.eq_ignore_ascii_case(name))
    }

    fn require(&self, name: &str, source_name: &str) -> Result<usize> {
        self.column(name).ok_or_else(|| parse_err(source_name, 1, format!("missing required column {name:?}")))
    }
}

fn parse_f64(cell: &str, what: &str, source_name: &str, line: u64) -> Result<f64> {
    cell.parse::<f64>().map_err(|_| parse_err(source_name, line, format!("{what}: {cell:?} is not a number")))
}

fn parse_role(cell: &str, source_name: &str, line: u64) -> Result<ArmRole> {
    ArmRole::parse(cell)
        .ok_or_else(|| parse_err(source_name, line, format!("role {cell:?} is not control or intervention")))
}

fn parse_pair_id(cell: &str, source_name: &str, line: u64) -> Result<PairId> {
    if cell.is_empty() {
        return Err(parse_err(source_name, line, "empty pair_id"));
    }
    Ok(PairId::new(cell))
}

/// One row of a cluster-size file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSize {
    pub pair_id: PairId,
    pub role: ArmRole,
    pub n_served: u64,
}

pub fn parse_cluster_csv(bytes: &[u8], source_name: &str) -> Result<Vec<ClusterSize>> {
    let t = Table::read(bytes, source_name)?;
    let (ip, ir, inn) =
        (t.require("pair_id", source_name)?, t.require("role", source_name)?, t.require("n_served", source_name)?);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(t.rows.len());
    for (line, rec) in &t.rows {
        let pair_id = parse_pair_id(&rec[ip], source_name, *line)?;
        let role = parse_role(&rec[ir], source_name, *line)?;
        let n_served = rec[inn]
            .parse::<u64>()
            .map_err(|_| parse_err(source_name, *line, format!("n_served: {:?} is not a count", &rec[inn])))?;
        if !seen.insert((pair_id.clone(), role)) {
            return Err(parse_err(source_name, *line, format!("second size for pair {pair_id}, {role} arm")));
        }
        out.push(ClusterSize { pair_id, role, n_served });
    }
    Ok(out)
}

fn infer_kind(
    column: &str,
    cells: &[(u64, &str)],
    schema: Option<&SchemaFile>,
    source_name: &str,
) -> Result<CovariateKind> {
    let entry = schema.and_then(|s| s.entry(column));
    let numeric = || cells.iter().all(|(_, c)| c.parse::<f64>().is_ok_and(f64::is_finite));
    let kind =
        entry.map_or_else(|| if numeric() { ColumnKind::Continuous } else { ColumnKind::Categorical }, |e| e.kind);
    match kind {
        ColumnKind::Continuous => Ok(CovariateKind::Continuous),
        ColumnKind::Categorical => {
            let levels = match entry.and_then(|e| e.levels.clone()) {
                Some(levels) => {
                    if let Some((line, c)) = cells.iter().find(|(_, c)| !levels.iter().any(|l| l == c)) {
                        return Err(parse_err(source_name, *line, format!("{column}: {c:?} is not a listed level")));
                    }
                    levels
                }
                None => cells.iter().map(|(_, c)| c.to_string()).collect::<BTreeSet<_>>().into_iter().collect(),
            };
            Ok(CovariateKind::Categorical { levels })
        }
    }
}

/// Parses a patient file plus optional cluster-size file and schema, then
/// validates the study. Arms without a served-population size fall back to
/// `n_served = n_sampled`, which makes the pooling weights equal within arm
/// sizes; a warning is logged for each.
pub fn parse_patient_csv(
    bytes: &[u8],
    source_name: &str,
    clusters: Option<&[ClusterSize]>,
    schema: Option<&SchemaFile>,
) -> Result<Study> {
    let t = Table::read(bytes, source_name)?;
    let ip = t.require("pair_id", source_name)?;
    let ir = t.require("role", source_name)?;
    let io = t.require("outcome", source_name)?;
    let iw = t.column("weight");
    let cov_cols: Vec<usize> =
        (0..t.header.len()).filter(|c| ![Some(ip), Some(ir), Some(io), iw].contains(&Some(*c))).collect();

    if let Some(s) = schema {
        for e in &s.covariates {
            if !cov_cols.iter().any(|&c| t.header[c] == e.name) {
                return Err(Error::Config(format!(
                    "schema names {:?}, which is not a column of {source_name}",
                    e.name
                )));
            }
        }
    }

    let mut specs = Vec::with_capacity(cov_cols.len());
    for &c in &cov_cols {
        let cells: Vec<(u64, &str)> = t.rows.iter().map(|(line, rec)| (*line, &rec[c])).collect();
        let kind = infer_kind(&t.header[c], &cells, schema, source_name)?;
        specs.push(CovariateSpec { name: t.header[c].clone(), kind });
    }

    let mut arms: Vec<ClusterArm> = Vec::new();
    let mut index: BTreeMap<(PairId, ArmRole), usize> = BTreeMap::new();
    for (line, rec) in &t.rows {
        let line = *line;
        let pair_id = parse_pair_id(&rec[ip], source_name, line)?;
        let role = parse_role(&rec[ir], source_name, line)?;
        let outcome = parse_f64(&rec[io], "outcome", source_name, line)?;
        let weight = match iw {
            Some(c) => parse_f64(&rec[c], "weight", source_name, line)?,
            None => 1.0,
        };
        let mut x = CovariateVector::default();
        for (&c, spec) in cov_cols.iter().zip(&specs) {
            match spec.kind {
                CovariateKind::Continuous => x.continuous.push(parse_f64(&rec[c], &spec.name, source_name, line)?),
                CovariateKind::Categorical { .. } => x.categorical.push(rec[c].to_string()),
            }
        }
        let slot = *index.entry((pair_id.clone(), role)).or_insert_with(|| {
            arms.push(ClusterArm { pair_id: pair_id.clone(), role, n_served: 0, records: Vec::new() });
            arms.len() - 1
        });
        arms[slot].records.push(PatientRecord { pair_id, role, outcome, covariates: x, weight });
    }

    let sizes: BTreeMap<(PairId, ArmRole), u64> =
        clusters.unwrap_or_default().iter().map(|c| ((c.pair_id.clone(), c.role), c.n_served)).collect();
    if clusters.is_none() {
        log::warn!("{source_name}: no cluster-size file; assuming every practice serves only its sampled patients");
    }
    for arm in &mut arms {
        match sizes.get(&(arm.pair_id.clone(), arm.role)) {
            Some(&n) => arm.n_served = n,
            None => {
                if clusters.is_some() {
                    log::warn!("pair {}, {} arm: no n_served given; using n_sampled", arm.pair_id, arm.role);
                }
                arm.n_served = arm.records.len() as u64;
            }
        }
    }
    for key in sizes.keys() {
        if !index.contains_key(key) {
            log::warn!("cluster size for pair {}, {} arm has no patients; ignored", key.0, key.1);
        }
    }

    validate_study(RawStudy { schema: CovariateSchema::new(specs), arms })
}

/// Parses per-pair summaries. Either `sqrt_v` or `variance` must be present
/// (not both); `kind` defaults to crude when the column is absent.
pub fn parse_summary_csv(bytes: &[u8], source_name: &str) -> Result<Vec<PairSummary>> {
    let t = Table::read(bytes, source_name)?;
    let ip = t.require("pair_id", source_name)?;
    let id = t.require("delta", source_name)?;
    let spread = match (t.column("sqrt_v"), t.column("variance")) {
        (Some(c), None) => (c, true),
        (None, Some(c)) => (c, false),
        (Some(_), Some(_)) => return Err(parse_err(source_name, 1, "give either sqrt_v or variance, not both")),
        (None, None) => return Err(parse_err(source_name, 1, "missing required column \"sqrt_v\" or \"variance\"")),
    };
    let ik = t.column("kind");

    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(t.rows.len());
    for (line, rec) in &t.rows {
        let line = *line;
        let pair_id = parse_pair_id(&rec[ip], source_name, line)?;
        let delta = parse_f64(&rec[id], "delta", source_name, line)?;
        if !delta.is_finite() {
            return Err(parse_err(source_name, line, "delta is not finite"));
        }
        let (col, is_sd) = spread;
        let value = parse_f64(&rec[col], if is_sd { "sqrt_v" } else { "variance" }, source_name, line)?;
        if value < 0.0 {
            return Err(Error::NegativeVariance { source_name: source_name.into(), line, value });
        }
        if !value.is_finite() {
            return Err(parse_err(source_name, line, "variance is not finite"));
        }
        let kind = match ik {
            Some(c) => SummaryKind::parse(&rec[c]).ok_or_else(|| {
                parse_err(source_name, line, format!("kind {:?} is not crude or calibrated", &rec[c]))
            })?,
            None => SummaryKind::Crude,
        };
        if !seen.insert((kind, pair_id.clone())) {
            return Err(parse_err(source_name, line, format!("second {kind} row for pair {pair_id}")));
        }
        out.push(PairSummary { pair_id, delta, variance: if is_sd { value * value } else { value }, kind });
    }
    if out.is_empty() {
        return Err(parse_err(source_name, 1, "no summary rows"));
    }
    Ok(out)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn name_of(path: &Path) -> String {
    path.display().to_string()
}

pub fn load_schema(path: &Path) -> Result<SchemaFile> {
    parse_schema_json(&read(path)?)
}

pub fn load_patient_csv(path_data: &Path, path_clusters: Option<&Path>, path_schema: Option<&Path>) -> Result<Study> {
    let clusters = path_clusters.map(|p| parse_cluster_csv(&read(p)?, &name_of(p))).transpose()?;
    let schema = path_schema.map(load_schema).transpose()?;
    parse_patient_csv(&read(path_data)?, &name_of(path_data), clusters.as_deref(), schema.as_ref())
}

pub fn load_summary_csv(path: &Path) -> Result<Vec<PairSummary>> {
    parse_summary_csv(&read(path)?, &name_of(path))
}
