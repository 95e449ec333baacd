//! Dataset schemas, typed cells and building records.
//!
//! A [`DatasetSchema`] is an ordered list of [`ColumnSpec`]s loaded from a JSON
//! document. Every [`BuildingRecord`] stores one [`Cell`] per schema column, in
//! schema order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Number of retrofit output categories.
pub const N_LABELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numerical,
    Categorical,
    Boolean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnRole {
    Feature,
    Label,
    Ignored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    pub role: ColumnRole,
    /// Categorical column holding energy-efficiency classes; encoded with the
    /// fixed class ladder instead of first-appearance order.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub energy_class: bool,
}

impl ColumnSpec {
    pub fn new(name: &str, kind: ColumnKind, role: ColumnRole) -> Self {
        Self {
            name: name.to_string(),
            kind,
            unit: None,
            role,
            energy_class: false,
        }
    }

    pub fn energy_class(mut self) -> Self {
        self.energy_class = true;
        self
    }

    pub fn with_unit(mut self, unit: &str) -> Self {
        self.unit = Some(unit.to_string());
        self
    }
}

/// Columns feeding the engineered energy-performance-delta feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyColumns {
    /// Energy class before renovation.
    pub initial_class: String,
    /// Target (after-retrofit) energy class; filled from the request's
    /// target class at inference time.
    pub target_class: String,
    /// Heated area used to pick the consumption band. Without it no delta
    /// feature can be derived.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heated_area: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub id: String,
    pub version: u32,
    pub columns: Vec<ColumnSpec>,
    /// Harmonization table: column -> raw text -> replacement text, applied
    /// before type parsing.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub value_maps: BTreeMap<String, BTreeMap<String, String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy: Option<EnergyColumns>,
    /// Raw cell texts read as null (after trimming). The empty string is
    /// always null.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub null_tokens: Vec<String>,
}

#[derive(Debug, Error, PartialEq)]
pub enum SchemaError {
    #[error("duplicate column name {0:?}")]
    DuplicateColumn(String),
    #[error("schema must have exactly {N_LABELS} label columns, found {0}")]
    LabelCount(usize),
    #[error("label column {0:?} must be boolean")]
    LabelKind(String),
    #[error("column {0:?} is flagged as an energy class but is not categorical")]
    EnergyClassKind(String),
    #[error("energy column reference {0:?} is not a column of the schema")]
    UnknownEnergyColumn(String),
    #[error("value map refers to unknown column {0:?}")]
    UnknownValueMapColumn(String),
    #[error("invalid schema JSON: {0}")]
    Json(String),
}

impl DatasetSchema {
    pub fn from_json_str(text: &str) -> Result<Self, SchemaError> {
        let schema: DatasetSchema =
            serde_json::from_str(text).map_err(|e| SchemaError::Json(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        let mut seen = BTreeSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(SchemaError::DuplicateColumn(c.name.clone()));
            }
            if c.energy_class && c.kind != ColumnKind::Categorical {
                return Err(SchemaError::EnergyClassKind(c.name.clone()));
            }
            if c.role == ColumnRole::Label && c.kind != ColumnKind::Boolean {
                return Err(SchemaError::LabelKind(c.name.clone()));
            }
        }
        let labels = self.label_indices().len();
        if labels != N_LABELS {
            return Err(SchemaError::LabelCount(labels));
        }
        if let Some(e) = &self.energy {
            let names = [Some(&e.initial_class), Some(&e.target_class), e.heated_area.as_ref()];
            for name in names.into_iter().flatten() {
                if self.index_of(name).is_none() {
                    return Err(SchemaError::UnknownEnergyColumn(name.clone()));
                }
            }
        }
        for name in self.value_maps.keys() {
            if self.index_of(name).is_none() {
                return Err(SchemaError::UnknownValueMapColumn(name.clone()));
            }
        }
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Option<&ColumnSpec> {
        self.columns.iter().find(|c| c.name == name)
    }

    fn indices_with_role(&self, role: ColumnRole) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.role == role)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn feature_indices(&self) -> Vec<usize> {
        self.indices_with_role(ColumnRole::Feature)
    }

    pub fn label_indices(&self) -> Vec<usize> {
        self.indices_with_role(ColumnRole::Label)
    }

    /// Feature and label columns, in schema order.
    pub fn modeled_indices(&self) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.role != ColumnRole::Ignored)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn label_names(&self) -> Vec<String> {
        self.label_indices()
            .into_iter()
            .map(|i| self.columns[i].name.clone())
            .collect()
    }

    pub fn is_null_token(&self, raw: &str) -> bool {
        let t = raw.trim();
        t.is_empty() || self.null_tokens.iter().any(|n| n == t)
    }

    /// Hex SHA-256 over the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(self).expect("schema serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// Latvian building-stock schema with the refined feature set: location
    /// columns are kept in the file but ignored by the model.
    pub fn latvian() -> Self {
        Self::from_json_str(include_str!("../data/latvia_schema.json"))
            .expect("bundled Latvian schema is valid")
    }

    pub fn uk() -> Self {
        Self::from_json_str(include_str!("../data/uk_schema.json"))
            .expect("bundled UK schema is valid")
    }
}

/// One typed CSV cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Null,
    Bool(bool),
    Number(f64),
    Category(String),
}

impl Cell {
    pub fn is_null(&self) -> bool {
        matches!(self, Cell::Null)
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Number(v) => Some(*v),
            Cell::Bool(b) => Some(if *b { 1.0 } else { 0.0 }),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Cell::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_category(&self) -> Option<&str> {
        match self {
            Cell::Category(s) => Some(s),
            _ => None,
        }
    }

    /// Text used for CSV output and for category-style comparisons.
    pub fn to_csv_field(&self) -> String {
        match self {
            Cell::Null => String::new(),
            Cell::Bool(b) => if *b { "1" } else { "0" }.to_string(),
            Cell::Number(v) => format_number(*v),
            Cell::Category(s) => s.clone(),
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_csv_field())
    }
}

pub(crate) fn format_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingRecord {
    pub values: Vec<Cell>,
}

impl BuildingRecord {
    pub fn new(values: Vec<Cell>) -> Self {
        Self { values }
    }

    pub fn get(&self, schema: &DatasetSchema, column: &str) -> Option<&Cell> {
        schema.index_of(column).and_then(|i| self.values.get(i))
    }

    pub fn labels(&self, schema: &DatasetSchema) -> Option<RetrofitLabels> {
        let idx = schema.label_indices();
        let mut out = [false; N_LABELS];
        for (slot, &i) in out.iter_mut().zip(&idx) {
            *slot = self.values.get(i)?.as_bool()?;
        }
        Some(RetrofitLabels::from_array(out))
    }
}

/// The four retrofit outputs, in canonical order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RetrofitLabels {
    pub building_fabric: bool,
    pub heating_lighting_controls: bool,
    pub dhw_upgrades: bool,
    pub heating_system: bool,
}

impl RetrofitLabels {
    pub fn from_array(a: [bool; N_LABELS]) -> Self {
        Self {
            building_fabric: a[0],
            heating_lighting_controls: a[1],
            dhw_upgrades: a[2],
            heating_system: a[3],
        }
    }

    pub fn to_array(self) -> [bool; N_LABELS] {
        [
            self.building_fabric,
            self.heating_lighting_controls,
            self.dhw_upgrades,
            self.heating_system,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_schemas_validate() {
        let lv = DatasetSchema::latvian();
        assert_eq!(lv.label_indices().len(), 4);
        assert_eq!(lv.feature_indices().len(), 12);
        let uk = DatasetSchema::uk();
        assert_eq!(uk.label_indices().len(), 4);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = DatasetSchema::latvian();
        let dup = s.columns[0].clone();
        s.columns.push(dup);
        assert!(matches!(s.validate(), Err(SchemaError::DuplicateColumn(_))));
    }

    #[test]
    fn label_count_enforced() {
        let mut s = DatasetSchema::latvian();
        let i = s.label_indices()[0];
        s.columns[i].role = ColumnRole::Ignored;
        assert_eq!(s.validate(), Err(SchemaError::LabelCount(3)));
    }

    #[test]
    fn fingerprint_changes_with_version() {
        let a = DatasetSchema::latvian();
        let mut b = a.clone();
        b.version += 1;
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint(), DatasetSchema::latvian().fingerprint());
    }
}
