//! Encoders, min-max scalers and the engineered energy-performance-delta
//! feature.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{BuildingRecord, Cell, ColumnKind, ColumnRole, DatasetSchema};

/// Energy classes from best to worst. The position is the ordinal code.
pub const ENERGY_CLASS_LADDER: [&str; 8] = ["A+", "A", "B", "C", "D", "E", "F", "G"];

/// Name of the engineered input column.
pub const ENERGY_DELTA_FEATURE: &str = "Energy performance delta";

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("unseen category {value:?} in column {column:?}")]
    UnseenCategory { column: String, value: String },
    #[error("row {row}: column {column:?} is null")]
    Null { row: usize, column: String },
    #[error("row {row}: column {column:?} has the wrong cell type")]
    CellType { row: usize, column: String },
    #[error("column {0:?} is not in the schema")]
    UnknownColumn(String),
    #[error("cannot fit transforms on an empty training set")]
    EmptyTrain,
    #[error("unknown energy class {0:?}")]
    UnknownClass(String),
    #[error("heated area must be positive, got {0}")]
    BadArea(f64),
    #[error("invalid energy class table: {0}")]
    BadTable(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrdinalEncoder {
    pub column: String,
    pub mapping: BTreeMap<String, usize>,
}

impl OrdinalEncoder {
    /// Codes by first appearance.
    pub fn fit<'a>(column: &str, values: impl IntoIterator<Item = &'a str>) -> Self {
        let mut mapping = BTreeMap::new();
        for v in values {
            let next = mapping.len();
            mapping.entry(v.to_string()).or_insert(next);
        }
        Self {
            column: column.to_string(),
            mapping,
        }
    }

    /// The fixed class ladder, independent of the data.
    pub fn energy_class(column: &str) -> Self {
        Self {
            column: column.to_string(),
            mapping: ENERGY_CLASS_LADDER
                .iter()
                .enumerate()
                .map(|(i, c)| (c.to_string(), i))
                .collect(),
        }
    }

    pub fn encode(&self, value: &str) -> Result<usize, FeatureError> {
        self.mapping
            .get(value)
            .copied()
            .ok_or_else(|| FeatureError::UnseenCategory {
                column: self.column.clone(),
                value: value.to_string(),
            })
    }

    /// Known categories ordered by code.
    pub fn categories(&self) -> Vec<String> {
        let mut v: Vec<_> = self.mapping.iter().collect();
        v.sort_by_key(|(_, &code)| code);
        v.into_iter().map(|(k, _)| k.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub column: String,
    pub min: f64,
    pub max: f64,
}

impl MinMaxScaler {
    pub fn fit(column: &str, values: &[f64]) -> Self {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self {
            column: column.to_string(),
            min,
            max,
        }
    }

    /// Scaled value before clamping. Constant columns map to 0.
    pub fn scale(&self, v: f64) -> f64 {
        if self.max > self.min {
            (v - self.min) / (self.max - self.min)
        } else {
            0.0
        }
    }

    /// Scaled value clamped to [0, 1]; the flag reports whether clamping
    /// happened.
    pub fn transform(&self, v: f64) -> (f64, bool) {
        let s = self.scale(v);
        if s < 0.0 {
            (0.0, true)
        } else if s > 1.0 {
            (1.0, true)
        } else {
            (s, false)
        }
    }
}

/// Per-class upper limits of heating-energy consumption (kWh/m²) for each
/// heated-area band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyClassTable {
    #[serde(default)]
    pub jurisdiction: String,
    /// Classes from best to worst.
    pub classes: Vec<String>,
    /// Inclusive upper area bound per band; `None` marks the open last band.
    /// Areas below the first band fall into it.
    pub band_upper_bounds: Vec<Option<f64>>,
    pub limits: BTreeMap<String, Vec<f64>>,
    /// Classes whose limits are finite stand-ins for an open-ended range.
    #[serde(default)]
    pub surrogate_classes: Vec<String>,
}

impl EnergyClassTable {
    pub fn latvia() -> Self {
        Self::from_json_str(include_str!("../data/latvia_energy_classes.json"))
            .expect("bundled class table is valid")
    }

    pub fn from_json_str(text: &str) -> Result<Self, FeatureError> {
        let t: Self =
            serde_json::from_str(text).map_err(|e| FeatureError::BadTable(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        let bad = |m: String| Err(FeatureError::BadTable(m));
        let nb = self.band_upper_bounds.len();
        if nb == 0 {
            return bad("no area bands".into());
        }
        for (i, b) in self.band_upper_bounds.iter().enumerate() {
            match b {
                None if i + 1 != nb => return bad("only the last band may be open".into()),
                Some(_) if i + 1 == nb => return bad("last band must be open".into()),
                _ => {}
            }
        }
        let finite: Vec<f64> = self.band_upper_bounds.iter().flatten().copied().collect();
        if finite.windows(2).any(|w| w[0] >= w[1]) {
            return bad("band bounds must increase".into());
        }
        for c in &self.classes {
            match self.limits.get(c) {
                Some(l) if l.len() == nb && l.iter().all(|v| v.is_finite()) => {}
                _ => return bad(format!("class {c:?} needs {nb} finite limits")),
            }
        }
        if self.limits.len() != self.classes.len() {
            return bad("limits list a class not in `classes`".into());
        }
        for band in 0..nb {
            let col: Vec<f64> = self.classes.iter().map(|c| self.limits[c][band]).collect();
            if col.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("limits must strictly increase in band {band}"));
            }
        }
        Ok(())
    }

    pub fn band_for(&self, area: f64) -> usize {
        self.band_upper_bounds
            .iter()
            .position(|b| b.is_none_or(|u| area <= u))
            .expect("last band is open")
    }

    pub fn limit(&self, class: &str, area: f64) -> Result<f64, FeatureError> {
        let l = self
            .limits
            .get(class)
            .ok_or_else(|| FeatureError::UnknownClass(class.to_string()))?;
        Ok(l[self.band_for(area)])
    }

    /// Difference of class upper limits for the band selected by the heated
    /// area; positive means the transition is an improvement.
    pub fn energy_performance_delta(
        &self,
        initial_class: &str,
        final_class: &str,
        heated_area: f64,
    ) -> Result<f64, FeatureError> {
        if !(heated_area > 0.0) {
            return Err(FeatureError::BadArea(heated_area));
        }
        let d = self.limit(initial_class, heated_area)? - self.limit(final_class, heated_area)?;
        if d < 0.0 {
            log::debug!("class transition {initial_class} -> {final_class} is a downgrade");
        }
        Ok(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InputEncoding {
    Scaled(MinMaxScaler),
    Ordinal(OrdinalEncoder),
    Boolean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputColumn {
    pub name: String,
    /// True for the engineered delta; otherwise `name` is a schema column.
    #[serde(default)]
    pub derived: bool,
    pub encoding: InputEncoding,
}

#[derive(Debug, Clone, Default)]
pub struct FeatureOptions {
    /// Derive the energy-performance delta when the schema names the needed
    /// columns and a class table is supplied.
    pub energy_delta: bool,
    pub class_table: Option<EnergyClassTable>,
}

impl FeatureOptions {
    pub fn latvian() -> Self {
        Self {
            energy_delta: true,
            class_table: Some(EnergyClassTable::latvia()),
        }
    }
}

/// A value that was clamped into [0, 1] at transform time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClampWarning {
    pub row: usize,
    pub column: String,
    pub value: f64,
    pub clamped_to: f64,
}

/// Fitted input pipeline: one entry per model input, in input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTransform {
    pub inputs: Vec<InputColumn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_table: Option<EnergyClassTable>,
}

impl FeatureTransform {
    /// Fits encoders and scalers on training rows only.
    pub fn fit(
        train: &[BuildingRecord],
        schema: &DatasetSchema,
        options: &FeatureOptions,
    ) -> Result<Self, FeatureError> {
        if train.is_empty() {
            return Err(FeatureError::EmptyTrain);
        }
        let mut inputs = Vec::new();
        for i in schema.feature_indices() {
            let col = &schema.columns[i];
            let encoding = match col.kind {
                ColumnKind::Numerical => {
                    let values = train
                        .iter()
                        .enumerate()
                        .map(|(row, r)| numeric_cell(&r.values[i], row, &col.name))
                        .collect::<Result<Vec<_>, _>>()?;
                    InputEncoding::Scaled(MinMaxScaler::fit(&col.name, &values))
                }
                ColumnKind::Categorical if col.energy_class => {
                    InputEncoding::Ordinal(OrdinalEncoder::energy_class(&col.name))
                }
                ColumnKind::Categorical => {
                    let values = train
                        .iter()
                        .enumerate()
                        .map(|(row, r)| category_cell(&r.values[i], row, &col.name))
                        .collect::<Result<Vec<_>, _>>()?;
                    InputEncoding::Ordinal(OrdinalEncoder::fit(&col.name, values))
                }
                ColumnKind::Boolean => InputEncoding::Boolean,
            };
            inputs.push(InputColumn {
                name: col.name.clone(),
                derived: false,
                encoding,
            });
        }

        let mut transform = Self {
            inputs,
            class_table: None,
        };
        if let (true, Some(table)) = (options.energy_delta, &options.class_table) {
            if schema.energy.as_ref().is_some_and(|e| e.heated_area.is_some()) {
                transform.class_table = Some(table.clone());
                let deltas = train
                    .iter()
                    .enumerate()
                    .map(|(row, r)| transform.delta_for(r, schema, row))
                    .collect::<Result<Vec<_>, _>>()?;
                transform.inputs.push(InputColumn {
                    name: ENERGY_DELTA_FEATURE.to_string(),
                    derived: true,
                    encoding: InputEncoding::Scaled(MinMaxScaler::fit(ENERGY_DELTA_FEATURE, &deltas)),
                });
            }
        }
        Ok(transform)
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.len()
    }

    pub fn input_names(&self) -> Vec<String> {
        self.inputs.iter().map(|c| c.name.clone()).collect()
    }

    pub fn encoders(&self) -> Vec<&OrdinalEncoder> {
        self.inputs
            .iter()
            .filter_map(|c| match &c.encoding {
                InputEncoding::Ordinal(e) => Some(e),
                _ => None,
            })
            .collect()
    }

    pub fn scalers(&self) -> Vec<&MinMaxScaler> {
        self.inputs
            .iter()
            .filter_map(|c| match &c.encoding {
                InputEncoding::Scaled(s) => Some(s),
                _ => None,
            })
            .collect()
    }

    fn delta_for(
        &self,
        record: &BuildingRecord,
        schema: &DatasetSchema,
        row: usize,
    ) -> Result<f64, FeatureError> {
        let (table, cols) = match (&self.class_table, &schema.energy) {
            (Some(t), Some(c)) => (t, c),
            _ => return Err(FeatureError::UnknownColumn(ENERGY_DELTA_FEATURE.into())),
        };
        let area_col = cols
            .heated_area
            .as_deref()
            .ok_or_else(|| FeatureError::UnknownColumn(ENERGY_DELTA_FEATURE.into()))?;
        let cell = |name: &str| -> Result<&Cell, FeatureError> {
            record
                .get(schema, name)
                .ok_or_else(|| FeatureError::UnknownColumn(name.to_string()))
        };
        let initial = category_cell(cell(&cols.initial_class)?, row, &cols.initial_class)?;
        let target = category_cell(cell(&cols.target_class)?, row, &cols.target_class)?;
        let area = numeric_cell(cell(area_col)?, row, area_col)?;
        table.energy_performance_delta(initial, target, area)
    }

    /// Encodes one record into model inputs. `row` only labels errors and
    /// warnings.
    pub fn apply_record(
        &self,
        record: &BuildingRecord,
        schema: &DatasetSchema,
        row: usize,
        warnings: &mut Vec<ClampWarning>,
    ) -> Result<Vec<f64>, FeatureError> {
        let mut out = Vec::with_capacity(self.inputs.len());
        for input in &self.inputs {
            let raw = if input.derived {
                None
            } else {
                let i = schema
                    .index_of(&input.name)
                    .ok_or_else(|| FeatureError::UnknownColumn(input.name.clone()))?;
                Some(&record.values[i])
            };
            let v = match (&input.encoding, raw) {
                (InputEncoding::Scaled(s), raw) => {
                    let x = match raw {
                        Some(c) => numeric_cell(c, row, &input.name)?,
                        None => self.delta_for(record, schema, row)?,
                    };
                    let (y, clamped) = s.transform(x);
                    if clamped {
                        log::warn!("row {row}: {:?}={x} outside training range, clamped", input.name);
                        warnings.push(ClampWarning {
                            row,
                            column: input.name.clone(),
                            value: x,
                            clamped_to: y,
                        });
                    }
                    y
                }
                (InputEncoding::Ordinal(e), Some(c)) => {
                    e.encode(category_cell(c, row, &input.name)?)? as f64
                }
                (InputEncoding::Boolean, Some(c)) => match c {
                    Cell::Bool(b) => f64::from(u8::from(*b)),
                    Cell::Null => return Err(null_err(row, &input.name)),
                    _ => return Err(type_err(row, &input.name)),
                },
                (_, None) => return Err(FeatureError::UnknownColumn(input.name.clone())),
            };
            out.push(v);
        }
        Ok(out)
    }

    /// Encodes records into an `n × input_dim` matrix.
    pub fn apply(
        &self,
        records: &[BuildingRecord],
        schema: &DatasetSchema,
    ) -> Result<(Array2<f64>, Vec<ClampWarning>), FeatureError> {
        let mut warnings = Vec::new();
        let mut m = Array2::zeros((records.len(), self.inputs.len()));
        for (row, r) in records.iter().enumerate() {
            let v = self.apply_record(r, schema, row, &mut warnings)?;
            m.row_mut(row).assign(&ndarray::ArrayView1::from(&v));
        }
        Ok((m, warnings))
    }
}

/// Label matrix (`n × 4`, entries 0/1) in schema label order.
pub fn label_matrix(
    records: &[BuildingRecord],
    schema: &DatasetSchema,
) -> Result<Array2<f64>, FeatureError> {
    let idx: Vec<usize> = schema
        .columns
        .iter()
        .enumerate()
        .filter(|(_, c)| c.role == ColumnRole::Label)
        .map(|(i, _)| i)
        .collect();
    let mut m = Array2::zeros((records.len(), idx.len()));
    for (row, r) in records.iter().enumerate() {
        for (k, &i) in idx.iter().enumerate() {
            let name = &schema.columns[i].name;
            m[[row, k]] = match &r.values[i] {
                Cell::Bool(b) => f64::from(u8::from(*b)),
                Cell::Null => return Err(null_err(row, name)),
                _ => return Err(type_err(row, name)),
            };
        }
    }
    Ok(m)
}

fn null_err(row: usize, column: &str) -> FeatureError {
    FeatureError::Null {
        row,
        column: column.to_string(),
    }
}

fn type_err(row: usize, column: &str) -> FeatureError {
    FeatureError::CellType {
        row,
        column: column.to_string(),
    }
}

fn numeric_cell(c: &Cell, row: usize, column: &str) -> Result<f64, FeatureError> {
    match c {
        Cell::Number(v) => Ok(*v),
        Cell::Null => Err(null_err(row, column)),
        _ => Err(type_err(row, column)),
    }
}

fn category_cell<'a>(c: &'a Cell, row: usize, column: &str) -> Result<&'a str, FeatureError> {
    match c {
        Cell::Category(s) => Ok(s),
        Cell::Null => Err(null_err(row, column)),
        _ => Err(type_err(row, column)),
    }
}
