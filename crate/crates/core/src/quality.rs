//! Validity and statistical-similarity scores for synthetic tables.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{BuildingRecord, Cell, ColumnKind, ColumnRole, DatasetSchema};

/// Quantile bins used when a numeric column enters a contingency table.
pub const CONTINGENCY_BINS: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum QualityError {
    #[error("empty input for {0}")]
    Empty(String),
    #[error("column {column} has zero variance; correlation undefined")]
    ZeroVariance { column: String },
    #[error("pair columns differ in length ({0} vs {1})")]
    Length(usize, usize),
    #[error("record {row} has {got} values but the schema has {expected} columns")]
    RecordWidth { row: usize, expected: usize, got: usize },
    #[error("column {column}: value {value} does not match kind {kind:?}")]
    Kind {
        column: String,
        value: String,
        kind: ColumnKind,
    },
    #[error("need at least two scored columns to build pair trends")]
    TooFewColumns,
}

fn ecdf(sorted: &[f64], x: f64) -> f64 {
    sorted.partition_point(|&v| v <= x) as f64 / sorted.len() as f64
}

/// `1 − sup |F_real − F_synth|` over the two empirical CDFs.
pub fn ks_complement(real: &[f64], synth: &[f64]) -> Result<f64, QualityError> {
    if real.is_empty() || synth.is_empty() {
        return Err(QualityError::Empty("ks_complement".into()));
    }
    let mut a = real.to_vec();
    let mut b = synth.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    // the sup is attained at one of the sample points
    let d = a
        .iter()
        .chain(&b)
        .map(|&x| (ecdf(&a, x) - ecdf(&b, x)).abs())
        .fold(0.0, f64::max);
    Ok(1.0 - d)
}

fn frequencies<S: AsRef<str>>(values: &[S]) -> BTreeMap<&str, f64> {
    let mut m = BTreeMap::new();
    for v in values {
        *m.entry(v.as_ref()).or_insert(0.0) += 1.0;
    }
    let n = values.len() as f64;
    m.values_mut().for_each(|c| *c /= n);
    m
}

fn tv_distance<K: Ord>(p: &BTreeMap<K, f64>, q: &BTreeMap<K, f64>) -> f64 {
    let keys: BTreeSet<&K> = p.keys().chain(q.keys()).collect();
    let s: f64 = keys
        .into_iter()
        .map(|k| (p.get(k).copied().unwrap_or(0.0) - q.get(k).copied().unwrap_or(0.0)).abs())
        .sum();
    // rounding can push the sum a hair past 2
    (0.5 * s).min(1.0)
}

/// `1 − ½ Σ_c |p_real(c) − p_synth(c)|` over the union of categories.
pub fn tv_complement<S: AsRef<str>>(real: &[S], synth: &[S]) -> Result<f64, QualityError> {
    if real.is_empty() || synth.is_empty() {
        return Err(QualityError::Empty("tv_complement".into()));
    }
    Ok(1.0 - tv_distance(&frequencies(real), &frequencies(synth)))
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// `1 − |ρ_real − ρ_synth| / 2` from the two correlation coefficients.
pub fn correlation_score(rho_real: f64, rho_synth: f64) -> f64 {
    1.0 - (rho_real - rho_synth).abs() / 2.0
}

/// Pearson similarity of a column pair. `names` label the two columns in
/// errors.
pub fn correlation_similarity(
    real: (&[f64], &[f64]),
    synth: (&[f64], &[f64]),
    names: (&str, &str),
) -> Result<f64, QualityError> {
    for (a, b) in [real, synth] {
        if a.len() != b.len() {
            return Err(QualityError::Length(a.len(), b.len()));
        }
        if a.len() < 2 {
            return Err(QualityError::Empty("correlation_similarity".into()));
        }
    }
    let rho = |a: &[f64], b: &[f64]| -> Result<f64, QualityError> {
        pearson(a, b).ok_or_else(|| QualityError::ZeroVariance {
            column: if variance_zero(a) { names.0 } else { names.1 }.to_string(),
        })
    };
    Ok(correlation_score(rho(real.0, real.1)?, rho(synth.0, synth.1)?))
}

fn variance_zero(v: &[f64]) -> bool {
    v.iter().all(|&x| x == v[0])
}

/// One column's values, already stripped of nulls.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<f64>),
    Discrete(Vec<String>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Discrete(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Interior cut points of equal-frequency bins over `real`, deduplicated.
pub fn quantile_edges(real: &[f64], bins: usize) -> Vec<f64> {
    let mut s = real.to_vec();
    s.sort_by(f64::total_cmp);
    let mut edges: Vec<f64> = (1..bins)
        .map(|i| {
            let pos = i as f64 / bins as f64 * (s.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
        })
        .collect();
    edges.dedup();
    edges
}

fn bin_of(edges: &[f64], x: f64) -> usize {
    edges.partition_point(|&e| e <= x)
}

fn discretize(col: &ColumnData, edges: Option<&[f64]>) -> Vec<String> {
    match col {
        ColumnData::Discrete(v) => v.clone(),
        ColumnData::Numeric(v) => {
            let edges = edges.expect("edges for numeric column");
            v.iter().map(|&x| format!("bin{}", bin_of(edges, x))).collect()
        }
    }
}

/// Total-variation complement over joint cells. Numeric columns are cut at
/// [`CONTINGENCY_BINS`] quantiles of the real column, applied to both tables.
pub fn contingency_similarity(
    real: (&ColumnData, &ColumnData),
    synth: (&ColumnData, &ColumnData),
) -> Result<f64, QualityError> {
    for (a, b) in [real, synth] {
        if a.len() != b.len() {
            return Err(QualityError::Length(a.len(), b.len()));
        }
        if a.is_empty() {
            return Err(QualityError::Empty("contingency_similarity".into()));
        }
    }
    let edges = |c: &ColumnData| match c {
        ColumnData::Numeric(v) => Some(quantile_edges(v, CONTINGENCY_BINS)),
        ColumnData::Discrete(_) => None,
    };
    let (ea, eb) = (edges(real.0), edges(real.1));
    let joint = |a: &ColumnData, b: &ColumnData| -> BTreeMap<(String, String), f64> {
        let xa = discretize(a, ea.as_deref());
        let xb = discretize(b, eb.as_deref());
        let n = xa.len() as f64;
        let mut m = BTreeMap::new();
        for cell in xa.into_iter().zip(xb) {
            *m.entry(cell).or_insert(0.0) += 1.0 / n;
        }
        m
    };
    Ok(1.0 - tv_distance(&joint(real.0, real.1), &joint(synth.0, synth.1)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScore {
    pub column: String,
    pub role: ColumnRole,
    pub metric: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub columns: [String; 2],
    pub metric: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedPair {
    pub columns: [String; 2],
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub column_shapes: f64,
    pub pair_trends: f64,
    pub overall: f64,
    pub columns: Vec<ColumnScore>,
    pub pairs: Vec<PairScore>,
    pub skipped_pairs: Vec<SkippedPair>,
}

/// Mean of the two sub-scores.
pub fn overall_score(column_shapes: f64, pair_trends: f64) -> f64 {
    (column_shapes + pair_trends) / 2.0
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityOptions {
    /// Leave label columns out of both shapes and pair trends.
    pub exclude_labels: bool,
}

fn column_data(
    records: &[BuildingRecord],
    schema: &DatasetSchema,
    index: usize,
) -> Result<ColumnData, QualityError> {
    let spec = &schema.columns[index];
    let cells = records.iter().map(|r| &r.values[index]);
    match spec.kind {
        ColumnKind::Numerical => {
            let mut v = Vec::new();
            for c in cells {
                match c {
                    Cell::Null => {}
                    Cell::Number(x) => v.push(*x),
                    other => return Err(kind_err(spec.name.as_str(), other, spec.kind)),
                }
            }
            Ok(ColumnData::Numeric(v))
        }
        ColumnKind::Categorical | ColumnKind::Boolean => {
            let mut v = Vec::new();
            for c in cells {
                match (spec.kind, c) {
                    (_, Cell::Null) => {}
                    (ColumnKind::Boolean, Cell::Bool(_)) | (ColumnKind::Categorical, Cell::Category(_)) => {
                        v.push(c.to_csv_field())
                    }
                    (_, other) => return Err(kind_err(spec.name.as_str(), other, spec.kind)),
                }
            }
            Ok(ColumnData::Discrete(v))
        }
    }
}

fn kind_err(column: &str, value: &Cell, kind: ColumnKind) -> QualityError {
    QualityError::Kind {
        column: column.to_string(),
        value: value.to_csv_field(),
        kind,
    }
}

fn check_widths(records: &[BuildingRecord], schema: &DatasetSchema) -> Result<(), QualityError> {
    for (row, r) in records.iter().enumerate() {
        if r.values.len() != schema.columns.len() {
            return Err(QualityError::RecordWidth {
                row,
                expected: schema.columns.len(),
                got: r.values.len(),
            });
        }
    }
    Ok(())
}

/// Values of two columns restricted to rows where both are non-null.
fn paired(
    records: &[BuildingRecord],
    schema: &DatasetSchema,
    a: usize,
    b: usize,
) -> Result<(ColumnData, ColumnData), QualityError> {
    let keep: Vec<BuildingRecord> = records
        .iter()
        .filter(|r| !r.values[a].is_null() && !r.values[b].is_null())
        .cloned()
        .collect();
    Ok((
        column_data(&keep, schema, a)?,
        column_data(&keep, schema, b)?,
    ))
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Column-shape and column-pair-trend similarity of `synth` to `real`.
pub fn quality_report(
    real: &[BuildingRecord],
    synth: &[BuildingRecord],
    schema: &DatasetSchema,
    options: QualityOptions,
) -> Result<QualityReport, QualityError> {
    check_widths(real, schema)?;
    check_widths(synth, schema)?;
    let cols: Vec<usize> = schema
        .modeled_indices()
        .into_iter()
        .filter(|&i| !(options.exclude_labels && schema.columns[i].role == ColumnRole::Label))
        .collect();
    if cols.len() < 2 {
        return Err(QualityError::TooFewColumns);
    }

    let mut columns = Vec::with_capacity(cols.len());
    for &i in &cols {
        let spec = &schema.columns[i];
        let r = column_data(real, schema, i)?;
        let s = column_data(synth, schema, i)?;
        let empty = || QualityError::Empty(spec.name.clone());
        let (metric, score) = match (&r, &s) {
            (ColumnData::Numeric(r), ColumnData::Numeric(s)) => {
                ("KSComplement", ks_complement(r, s).map_err(|_| empty())?)
            }
            (ColumnData::Discrete(r), ColumnData::Discrete(s)) => {
                ("TVComplement", tv_complement(r, s).map_err(|_| empty())?)
            }
            _ => unreachable!("same schema column"),
        };
        columns.push(ColumnScore {
            column: spec.name.clone(),
            role: spec.role,
            metric: metric.into(),
            score,
        });
    }

    let mut pairs = Vec::new();
    let mut skipped_pairs = Vec::new();
    for (k, &a) in cols.iter().enumerate() {
        for &b in &cols[k + 1..] {
            let names = [schema.columns[a].name.clone(), schema.columns[b].name.clone()];
            let (ra, rb) = paired(real, schema, a, b)?;
            let (sa, sb) = paired(synth, schema, a, b)?;
            let result = match (&ra, &rb, &sa, &sb) {
                (
                    ColumnData::Numeric(ra),
                    ColumnData::Numeric(rb),
                    ColumnData::Numeric(sa),
                    ColumnData::Numeric(sb),
                ) => correlation_similarity((ra, rb), (sa, sb), (&names[0], &names[1]))
                    .map(|s| ("CorrelationSimilarity", s)),
                _ => contingency_similarity((&ra, &rb), (&sa, &sb)).map(|s| ("ContingencySimilarity", s)),
            };
            match result {
                Ok((metric, score)) => pairs.push(PairScore {
                    columns: names,
                    metric: metric.into(),
                    score,
                }),
                Err(e) => skipped_pairs.push(SkippedPair {
                    columns: names,
                    reason: e.to_string(),
                }),
            }
        }
    }
    let column_shapes = mean(columns.iter().map(|c| c.score));
    let pair_trends = if pairs.is_empty() {
        return Err(QualityError::TooFewColumns);
    } else {
        mean(pairs.iter().map(|p| p.score))
    };
    Ok(QualityReport {
        column_shapes,
        pair_trends,
        overall: overall_score(column_shapes, pair_trends),
        columns,
        pairs,
        skipped_pairs,
    })
}

impl QualityReport {
    /// Column-shapes mean recomputed without the named columns.
    pub fn column_shapes_excluding(&self, names: &[String]) -> f64 {
        mean(
            self.columns
                .iter()
                .filter(|c| !names.contains(&c.column))
                .map(|c| c.score),
        )
    }

    /// Per-column scores as CSV (`column,role,metric,score`).
    pub fn column_scores_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["column", "role", "metric", "score"])?;
        for c in &self.columns {
            let role = match c.role {
                ColumnRole::Feature => "feature",
                ColumnRole::Label => "label",
                ColumnRole::Ignored => "ignored",
            };
            w.write_record([c.column.as_str(), role, c.metric.as_str(), &c.score.to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    /// Every synthetic row has a value in the column.
    Present,
    /// Every synthetic value has the column's kind.
    KindMatch,
    /// Synthetic categories all occur in the real column.
    CategoriesSubset,
    /// Synthetic numbers lie within the real `[min, max]`.
    WithinRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticCheck {
    pub column: String,
    pub check: CheckKind,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub checks: Vec<DiagnosticCheck>,
    /// Fraction of checks passed.
    pub score: f64,
}

fn kind_matches(kind: ColumnKind, c: &Cell) -> bool {
    matches!(
        (kind, c),
        (_, Cell::Null)
            | (ColumnKind::Numerical, Cell::Number(_))
            | (ColumnKind::Categorical, Cell::Category(_))
            | (ColumnKind::Boolean, Cell::Bool(_))
    )
}

/// Structural validity of `synth` against `real`, checked per modelled column.
pub fn diagnostic_report(
    real: &[BuildingRecord],
    synth: &[BuildingRecord],
    schema: &DatasetSchema,
) -> DiagnosticReport {
    let width = schema.columns.len();
    let mut checks = Vec::new();
    for i in schema.modeled_indices() {
        let spec = &schema.columns[i];
        let real_cells: Vec<&Cell> = real
            .iter()
            .filter_map(|r| r.values.get(i))
            .filter(|c| !c.is_null())
            .collect();
        let synth_cells: Vec<Option<&Cell>> = synth.iter().map(|r| r.values.get(i)).collect();
        let mut push = |check, passed: bool, detail: Option<String>| {
            checks.push(DiagnosticCheck {
                column: spec.name.clone(),
                check,
                passed,
                detail: if passed { None } else { detail },
            })
        };

        let missing = synth_cells
            .iter()
            .filter(|c| c.is_none_or(|c| c.is_null()))
            .count();
        push(
            CheckKind::Present,
            missing == 0 && synth.iter().all(|r| r.values.len() == width),
            Some(format!("{missing} synthetic rows lack a value")),
        );

        let bad_kind = synth_cells
            .iter()
            .flatten()
            .find(|c| !kind_matches(spec.kind, c));
        push(
            CheckKind::KindMatch,
            bad_kind.is_none(),
            bad_kind.map(|c| format!("value {:?}", c.to_csv_field())),
        );

        match spec.kind {
            ColumnKind::Numerical => {
                let nums: Vec<f64> = real_cells.iter().filter_map(|c| c.as_f64()).collect();
                let lo = nums.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = nums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let out = synth_cells
                    .iter()
                    .flatten()
                    .filter_map(|c| c.as_f64())
                    .find(|&x| !(lo..=hi).contains(&x));
                push(
                    CheckKind::WithinRange,
                    out.is_none(),
                    out.map(|x| format!("{x} outside [{lo}, {hi}]")),
                );
            }
            ColumnKind::Categorical | ColumnKind::Boolean => {
                let known: BTreeSet<String> = real_cells.iter().map(|c| c.to_csv_field()).collect();
                let unseen = synth_cells
                    .iter()
                    .flatten()
                    .filter(|c| !c.is_null())
                    .map(|c| c.to_csv_field())
                    .find(|v| !known.contains(v));
                push(
                    CheckKind::CategoriesSubset,
                    unseen.is_none(),
                    unseen.map(|v| format!("unseen category {v:?}")),
                );
            }
        }
    }
    let passed = checks.iter().filter(|c| c.passed).count();
    let score = if checks.is_empty() {
        1.0
    } else {
        passed as f64 / checks.len() as f64
    };
    DiagnosticReport { checks, score }
}
