use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gmm::ModeNormalizer;
use super::DatagenError;
use crate::schema::{BuildingRecord, Cell, ColumnKind, DatasetSchema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Softmax,
}

/// A contiguous block of the encoded row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub len: usize,
    pub activation: Activation,
}

impl Span {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ColumnTransform {
    Continuous {
        index: usize,
        name: String,
        normalizer: ModeNormalizer,
        /// Every training value was a whole number.
        integral: bool,
        min: f64,
        max: f64,
    },
    Discrete {
        index: usize,
        name: String,
        boolean: bool,
        categories: Vec<String>,
    },
}

impl ColumnTransform {
    pub fn name(&self) -> &str {
        match self {
            ColumnTransform::Continuous { name, .. } | ColumnTransform::Discrete { name, .. } => name,
        }
    }

    pub fn index(&self) -> usize {
        match self {
            ColumnTransform::Continuous { index, .. } | ColumnTransform::Discrete { index, .. } => *index,
        }
    }

    fn width(&self) -> usize {
        match self {
            ColumnTransform::Continuous { normalizer, .. } => 1 + normalizer.n_modes(),
            ColumnTransform::Discrete { categories, .. } => categories.len(),
        }
    }
}

/// Discrete column as seen by the conditional vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteColumn {
    pub name: String,
    /// Offset of the column inside the conditional vector.
    pub cond_offset: usize,
    /// Offset of the column's one-hot block inside the encoded row.
    pub data_offset: usize,
    pub categories: Vec<String>,
}

/// Row encoder: mode-specific normalisation for numbers, one-hot for
/// categories and booleans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataTransformer {
    pub schema_width: usize,
    pub columns: Vec<ColumnTransform>,
    pub spans: Vec<Span>,
    pub discrete: Vec<DiscreteColumn>,
    pub output_dim: usize,
    pub cond_dim: usize,
}

fn cell_category(cell: &Cell) -> Option<String> {
    match cell {
        Cell::Bool(_) => Some(cell.to_csv_field()),
        Cell::Category(s) => Some(s.clone()),
        _ => None,
    }
}

impl DataTransformer {
    /// Fits on the modelled columns of `records`; ignored columns are left out
    /// and decode to null.
    pub fn fit(
        records: &[BuildingRecord],
        schema: &DatasetSchema,
        max_modes: usize,
        weight_threshold: f64,
        seed: u64,
    ) -> Result<Self, DatagenError> {
        let mut columns = Vec::new();
        for i in schema.modeled_indices() {
            let spec = &schema.columns[i];
            let cells = records.iter().map(|r| &r.values[i]);
            match spec.kind {
                ColumnKind::Numerical => {
                    let mut v = Vec::with_capacity(records.len());
                    for (row, c) in cells.enumerate() {
                        match c {
                            Cell::Number(x) if x.is_finite() => v.push(*x),
                            _ => {
                                return Err(DatagenError::Cell {
                                    row,
                                    column: spec.name.clone(),
                                })
                            }
                        }
                    }
                    let normalizer = ModeNormalizer::fit(&spec.name, &v, max_modes, weight_threshold, seed)?;
                    columns.push(ColumnTransform::Continuous {
                        index: i,
                        name: spec.name.clone(),
                        normalizer,
                        integral: v.iter().all(|x| x.fract() == 0.0),
                        min: v.iter().copied().fold(f64::INFINITY, f64::min),
                        max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    });
                }
                ColumnKind::Categorical | ColumnKind::Boolean => {
                    let boolean = spec.kind == ColumnKind::Boolean;
                    let mut categories: Vec<String> = if boolean {
                        vec!["0".into(), "1".into()]
                    } else {
                        Vec::new()
                    };
                    for (row, c) in cells.enumerate() {
                        if !matches!((boolean, c), (true, Cell::Bool(_)) | (false, Cell::Category(_))) {
                            return Err(DatagenError::Cell {
                                row,
                                column: spec.name.clone(),
                            });
                        }
                        let s = cell_category(c).expect("checked above");
                        if !categories.contains(&s) {
                            categories.push(s);
                        }
                    }
                    if !boolean {
                        categories.sort();
                    }
                    columns.push(ColumnTransform::Discrete {
                        index: i,
                        name: spec.name.clone(),
                        boolean,
                        categories,
                    });
                }
            }
        }

        let mut spans = Vec::new();
        let mut discrete = Vec::new();
        let mut pos = 0;
        let mut cond = 0;
        for c in &columns {
            match c {
                ColumnTransform::Continuous { normalizer, .. } => {
                    spans.push(Span {
                        start: pos,
                        len: 1,
                        activation: Activation::Tanh,
                    });
                    spans.push(Span {
                        start: pos + 1,
                        len: normalizer.n_modes(),
                        activation: Activation::Softmax,
                    });
                }
                ColumnTransform::Discrete { name, categories, .. } => {
                    spans.push(Span {
                        start: pos,
                        len: categories.len(),
                        activation: Activation::Softmax,
                    });
                    discrete.push(DiscreteColumn {
                        name: name.clone(),
                        cond_offset: cond,
                        data_offset: pos,
                        categories: categories.clone(),
                    });
                    cond += categories.len();
                }
            }
            pos += c.width();
        }
        Ok(Self {
            schema_width: schema.columns.len(),
            columns,
            spans,
            discrete,
            output_dim: pos,
            cond_dim: cond,
        })
    }

    pub fn discrete_index(&self, column: &str) -> Option<usize> {
        self.discrete.iter().position(|d| d.name == column)
    }

    /// Encodes one record, drawing each continuous value's mode from `rng`.
    pub fn encode_record(
        &self,
        record: &BuildingRecord,
        row: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>, DatagenError> {
        let mut out = vec![0.0; self.output_dim];
        let mut pos = 0;
        for c in &self.columns {
            let cell = record.values.get(c.index()).unwrap_or(&Cell::Null);
            match c {
                ColumnTransform::Continuous { normalizer, name, .. } => {
                    let x = match cell {
                        Cell::Number(x) if x.is_finite() => *x,
                        _ => {
                            return Err(DatagenError::Cell {
                                row,
                                column: name.clone(),
                            })
                        }
                    };
                    let (alpha, k) = normalizer.encode(x, rng);
                    out[pos] = alpha;
                    out[pos + 1 + k] = 1.0;
                }
                ColumnTransform::Discrete { name, categories, .. } => {
                    let s = cell_category(cell).ok_or_else(|| DatagenError::Cell {
                        row,
                        column: name.clone(),
                    })?;
                    let k = categories
                        .iter()
                        .position(|c| *c == s)
                        .ok_or_else(|| DatagenError::UnseenCategory {
                            column: name.clone(),
                            value: s.clone(),
                        })?;
                    out[pos + k] = 1.0;
                }
            }
            pos += c.width();
        }
        Ok(out)
    }

    pub fn encode(&self, records: &[BuildingRecord], seed: u64) -> Result<Array2<f64>, DatagenError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Array2::zeros((records.len(), self.output_dim));
        for (i, r) in records.iter().enumerate() {
            let v = self.encode_record(r, i, &mut rng)?;
            m.row_mut(i).assign(&ndarray::ArrayView1::from(&v));
        }
        Ok(m)
    }

    /// Inverse of [`encode_record`](Self::encode_record). One-hot blocks are
    /// read by argmax; numbers are rounded when the column was integral and
    /// clamped to the training range.
    pub fn decode_row(&self, row: &[f64]) -> BuildingRecord {
        let mut values = vec![Cell::Null; self.schema_width];
        let mut pos = 0;
        for c in &self.columns {
            match c {
                ColumnTransform::Continuous {
                    index,
                    normalizer,
                    integral,
                    min,
                    max,
                    ..
                } => {
                    let k = argmax(&row[pos + 1..pos + 1 + normalizer.n_modes()]);
                    let mut x = normalizer.decode(row[pos], k);
                    if *integral {
                        x = x.round();
                    }
                    values[*index] = Cell::Number(x.clamp(*min, *max));
                }
                ColumnTransform::Discrete {
                    index,
                    boolean,
                    categories,
                    ..
                } => {
                    let s = &categories[argmax(&row[pos..pos + categories.len()])];
                    values[*index] = if *boolean {
                        Cell::Bool(s == "1")
                    } else {
                        Cell::Category(s.clone())
                    };
                }
            }
            pos += c.width();
        }
        BuildingRecord::new(values)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
