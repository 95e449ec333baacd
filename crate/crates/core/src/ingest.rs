//! CSV loading, null removal, outlier flagging and train/validation/test
//! splitting.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{BuildingRecord, Cell, ColumnKind, DatasetSchema};

/// Default |z| threshold for outlier flags.
pub const DEFAULT_ZSCORE_THRESHOLD: f64 = 4.0;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot open {path}: {source}")]
    Open {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error("header is missing schema columns {0:?}")]
    MissingColumns(Vec<String>),
    #[error("header has columns not in the schema {0:?}")]
    ExtraColumns(Vec<String>),
    #[error("header repeats column {0:?}")]
    DuplicateHeader(String),
    #[error("{} row(s) rejected, first at data row {}: {}", .0.len(), .0[0].row, .0[0].reason)]
    Rejected(Vec<RowRejection>),
    #[error("column {0:?} is not in the schema")]
    UnknownColumn(String),
    #[error("column {0:?} is not numerical")]
    NotNumerical(String),
    #[error("need at least {min} records to split, got {got}")]
    TooFewRecords { min: usize, got: usize },
    #[error("split fractions must lie in (0, 1)")]
    BadFraction,
}

/// A data row that failed type parsing. `row` is the 0-based data row index
/// (the header is not counted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowRejection {
    pub row: usize,
    pub column: String,
    pub value: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LoadReport {
    pub records: Vec<BuildingRecord>,
    pub rejected: Vec<RowRejection>,
    pub warnings: Vec<String>,
}

impl LoadReport {
    /// Fails if any row was rejected.
    pub fn into_strict(self) -> Result<Vec<BuildingRecord>, IngestError> {
        if self.rejected.is_empty() {
            Ok(self.records)
        } else {
            Err(IngestError::Rejected(self.rejected))
        }
    }
}

pub fn load_dataset(path: &Path, schema: &DatasetSchema) -> Result<LoadReport, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Open {
        path: path.display().to_string(),
        source,
    })?;
    load_dataset_from_reader(file, schema)
}

/// Parses comma-separated UTF-8 CSV with a header row. Header order does not
/// need to match the schema.
pub fn load_dataset_from_reader<R: Read>(
    reader: R,
    schema: &DatasetSchema,
) -> Result<LoadReport, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| IngestError::Csv(e.to_string()))?
        .clone();

    // header position -> schema index
    let mut mapping = Vec::with_capacity(headers.len());
    let mut seen = BTreeSet::new();
    let mut extra = Vec::new();
    for h in headers.iter() {
        let h = h.trim();
        if !seen.insert(h.to_string()) {
            return Err(IngestError::DuplicateHeader(h.to_string()));
        }
        match schema.index_of(h) {
            Some(i) => mapping.push(i),
            None => extra.push(h.to_string()),
        }
    }
    let missing: Vec<String> = schema
        .columns
        .iter()
        .filter(|c| !seen.contains(&c.name))
        .map(|c| c.name.clone())
        .collect();
    if !missing.is_empty() {
        return Err(IngestError::MissingColumns(missing));
    }
    if !extra.is_empty() {
        return Err(IngestError::ExtraColumns(extra));
    }

    let mut report = LoadReport::default();
    for (row, result) in rdr.records().enumerate() {
        let raw = result.map_err(|e| IngestError::Csv(e.to_string()))?;
        let mut values = vec![Cell::Null; schema.columns.len()];
        let mut failed = None;
        for (pos, field) in raw.iter().enumerate() {
            let col = &schema.columns[mapping[pos]];
            match parse_cell(schema, mapping[pos], field) {
                Ok(cell) => values[mapping[pos]] = cell,
                Err(reason) => {
                    failed = Some(RowRejection {
                        row,
                        column: col.name.clone(),
                        value: field.to_string(),
                        reason,
                    });
                    break;
                }
            }
        }
        match failed {
            Some(rej) => report.rejected.push(rej),
            None => report.records.push(BuildingRecord::new(values)),
        }
    }
    if report.records.is_empty() && report.rejected.is_empty() {
        report.warnings.push("file has a header but no data rows".into());
        log::warn!("dataset has no data rows");
    }
    Ok(report)
}

/// Parses a raw text cell for schema column `index`, applying the column's
/// harmonization map first.
pub fn parse_cell(schema: &DatasetSchema, index: usize, raw: &str) -> Result<Cell, String> {
    let col = &schema.columns[index];
    let trimmed = raw.trim();
    let text = schema
        .value_maps
        .get(&col.name)
        .and_then(|m| m.get(trimmed))
        .map(String::as_str)
        .unwrap_or(trimmed);
    if schema.is_null_token(text) {
        return Ok(Cell::Null);
    }
    match col.kind {
        ColumnKind::Numerical => match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Cell::Number(v)),
            _ => Err(format!("{text:?} is not a finite number")),
        },
        ColumnKind::Boolean => parse_bool(text)
            .map(Cell::Bool)
            .ok_or_else(|| format!("{text:?} is not a boolean")),
        ColumnKind::Categorical => Ok(Cell::Category(text.to_string())),
    }
}

pub fn parse_bool(text: &str) -> Option<bool> {
    match text.to_ascii_lowercase().as_str() {
        "1" | "1.0" | "true" | "t" | "yes" | "y" => Some(true),
        "0" | "0.0" | "false" | "f" | "no" | "n" => Some(false),
        _ => None,
    }
}

/// Writes records as CSV with the schema's column order as header.
pub fn write_dataset<W: Write>(
    writer: W,
    schema: &DatasetSchema,
    records: &[BuildingRecord],
) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    let to_err = |e: csv::Error| IngestError::Csv(e.to_string());
    w.write_record(schema.columns.iter().map(|c| c.name.as_str()))
        .map_err(to_err)?;
    for r in records {
        w.write_record(r.values.iter().map(Cell::to_csv_field))
            .map_err(to_err)?;
    }
    w.flush().map_err(|e| IngestError::Csv(e.to_string()))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DropReport {
    /// Dropped records per required column they were null in.
    pub by_column: BTreeMap<String, usize>,
    pub dropped: usize,
    pub kept: usize,
}

/// Removes records that are null in any of `required` columns.
pub fn drop_nulls(
    records: &[BuildingRecord],
    schema: &DatasetSchema,
    required: &[&str],
) -> Result<(Vec<BuildingRecord>, DropReport), IngestError> {
    let idx = required
        .iter()
        .map(|n| {
            schema
                .index_of(n)
                .ok_or_else(|| IngestError::UnknownColumn(n.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut report = DropReport::default();
    let mut kept = Vec::with_capacity(records.len());
    for r in records {
        let nulls: Vec<usize> = idx.iter().copied().filter(|&i| r.values[i].is_null()).collect();
        if nulls.is_empty() {
            kept.push(r.clone());
        } else {
            report.dropped += 1;
            for i in nulls {
                *report
                    .by_column
                    .entry(schema.columns[i].name.clone())
                    .or_default() += 1;
            }
        }
    }
    report.kept = kept.len();
    Ok((kept, report))
}

/// Modeled (feature + label) column names, the usual `required` set.
pub fn modeled_column_names(schema: &DatasetSchema) -> Vec<&str> {
    schema
        .modeled_indices()
        .into_iter()
        .map(|i| schema.columns[i].name.as_str())
        .collect()
}

/// Indices of records whose value in `column` lies more than `threshold`
/// population standard deviations from the mean. Null cells are skipped.
/// Flags are advisory; nothing is removed here.
pub fn zscore_flags(
    records: &[BuildingRecord],
    schema: &DatasetSchema,
    column: &str,
    threshold: f64,
) -> Result<Vec<usize>, IngestError> {
    let i = schema
        .index_of(column)
        .ok_or_else(|| IngestError::UnknownColumn(column.to_string()))?;
    if schema.columns[i].kind != ColumnKind::Numerical {
        return Err(IngestError::NotNumerical(column.to_string()));
    }
    let values: Vec<(usize, f64)> = records
        .iter()
        .enumerate()
        .filter_map(|(k, r)| r.values[i].as_f64().map(|v| (k, v)))
        .collect();
    Ok(zscore_outliers(&values, threshold))
}

fn zscore_outliers(values: &[(usize, f64)], threshold: f64) -> Vec<usize> {
    if values.len() < 2 {
        return Vec::new();
    }
    let n = values.len() as f64;
    let mean = values.iter().map(|(_, v)| v).sum::<f64>() / n;
    let var = values.iter().map(|(_, v)| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std <= 0.0 {
        return Vec::new();
    }
    values
        .iter()
        .filter(|(_, v)| ((v - mean) / std).abs() > threshold)
        .map(|(k, _)| *k)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub test_fraction: f64,
    pub val_fraction_of_rest: f64,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            test_fraction: 0.25,
            val_fraction_of_rest: 0.25,
        }
    }
}

/// Minimum record count accepted by [`split`].
pub const MIN_SPLIT_RECORDS: usize = 8;

/// Sorted row indices of a three-way split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles `0..n` with `spec.seed` and cuts it into test, validation and
/// train sets: `|test| = round(f_t·n)`, `|val| = round(f_v·(n − |test|))`.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<SplitIndices, IngestError> {
    if n < MIN_SPLIT_RECORDS {
        return Err(IngestError::TooFewRecords {
            min: MIN_SPLIT_RECORDS,
            got: n,
        });
    }
    let in_unit = |f: f64| f > 0.0 && f < 1.0;
    if !in_unit(spec.test_fraction) || !in_unit(spec.val_fraction_of_rest) {
        return Err(IngestError::BadFraction);
    }
    let n_test = (spec.test_fraction * n as f64).round() as usize;
    let n_val = (spec.val_fraction_of_rest * (n - n_test) as f64).round() as usize;

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);

    let mut test = order[..n_test].to_vec();
    let mut val = order[n_test..n_test + n_val].to_vec();
    let mut train = order[n_test + n_val..].to_vec();
    test.sort_unstable();
    val.sort_unstable();
    train.sort_unstable();
    Ok(SplitIndices { train, val, test })
}

/// Two-way shuffle split used to re-partition a pool into train/validation.
pub fn split_two_way(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n_val = (val_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut val = order[..n_val].to_vec();
    let mut train = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

pub type Partition = (Vec<BuildingRecord>, Vec<BuildingRecord>, Vec<BuildingRecord>);

pub fn split(records: &[BuildingRecord], spec: &SplitSpec) -> Result<Partition, IngestError> {
    let idx = split_indices(records.len(), spec)?;
    let pick = |ix: &[usize]| ix.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    Ok((pick(&idx.train), pick(&idx.val), pick(&idx.test)))
}
