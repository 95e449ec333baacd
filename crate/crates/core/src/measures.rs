//! Raw improvement-measure strings to the four retrofit categories.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{RetrofitLabels, N_LABELS};

pub const UK_MEASURE_MAP_JSON: &str = include_str!("../data/uk_measure_map.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrofitCategory {
    BuildingFabric,
    HeatingLightingControls,
    DhwUpgrades,
    HeatingSystem,
}

impl RetrofitCategory {
    pub const ALL: [RetrofitCategory; N_LABELS] = [
        RetrofitCategory::BuildingFabric,
        RetrofitCategory::HeatingLightingControls,
        RetrofitCategory::DhwUpgrades,
        RetrofitCategory::HeatingSystem,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn key(self) -> &'static str {
        match self {
            RetrofitCategory::BuildingFabric => "building_fabric",
            RetrofitCategory::HeatingLightingControls => "heating_lighting_controls",
            RetrofitCategory::DhwUpgrades => "dhw_upgrades",
            RetrofitCategory::HeatingSystem => "heating_system",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            RetrofitCategory::BuildingFabric => "Building Fabric Interventions",
            RetrofitCategory::HeatingLightingControls => "Heating and Lighting Controls",
            RetrofitCategory::DhwUpgrades => "Domestic Hot Water (DHW) Upgrades",
            RetrofitCategory::HeatingSystem => "Heating System Installations",
        }
    }

    /// Plain-language description shown next to a recommendation.
    pub fn description(self) -> &'static str {
        match self {
            RetrofitCategory::BuildingFabric => {
                "Upgrades to the building envelope such as insulation of walls, roof and floors, or better doors and windows."
            }
            RetrofitCategory::HeatingLightingControls => {
                "Enhancement or replacement of ventilation, lighting and heating control systems to optimise energy use."
            }
            RetrofitCategory::DhwUpgrades => {
                "Improvements to domestic hot water production, storage and distribution."
            }
            RetrofitCategory::HeatingSystem => {
                "Upgrade or replacement of the heating system with renewable or more efficient technology."
            }
        }
    }

    /// Label column of the Latvian dataset carrying this category.
    pub fn latvian_column(self) -> &'static str {
        match self {
            RetrofitCategory::BuildingFabric => "Carrying out construction works",
            RetrofitCategory::HeatingLightingControls => "Reconstruction of engineering systems",
            RetrofitCategory::DhwUpgrades => "Water heating system",
            RetrofitCategory::HeatingSystem => "Heat installation",
        }
    }
}

impl fmt::Display for RetrofitCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.title())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnmatchedPolicy {
    Error,
    #[default]
    Warn,
}

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("invalid measure map: {0}")]
    Json(#[from] serde_json::Error),
    #[error("measure map lacks category {0}")]
    MissingCategory(&'static str),
    #[error("measure {measure:?} listed under both {first} and {second}")]
    Duplicate {
        measure: String,
        first: &'static str,
        second: &'static str,
    },
    #[error("measure map has an empty entry under {0}")]
    EmptyEntry(&'static str),
    #[error("unmatched measure {0:?}")]
    Unmatched(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MeasureMapFile {
    categories: BTreeMap<RetrofitCategory, Vec<String>>,
    #[serde(default)]
    unmatched: UnmatchedPolicy,
}

/// Category lists plus a normalised lookup index.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureMap {
    pub categories: BTreeMap<RetrofitCategory, Vec<String>>,
    pub unmatched: UnmatchedPolicy,
    index: BTreeMap<String, RetrofitCategory>,
}

/// Lower-case with runs of whitespace collapsed to one space.
pub fn normalize_measure(raw: &str) -> String {
    raw.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

impl MeasureMap {
    pub fn new(
        categories: BTreeMap<RetrofitCategory, Vec<String>>,
        unmatched: UnmatchedPolicy,
    ) -> Result<Self, MeasureError> {
        let mut index = BTreeMap::new();
        for cat in RetrofitCategory::ALL {
            let list = categories
                .get(&cat)
                .ok_or(MeasureError::MissingCategory(cat.key()))?;
            for m in list {
                let key = normalize_measure(m);
                if key.is_empty() {
                    return Err(MeasureError::EmptyEntry(cat.key()));
                }
                if let Some(prev) = index.insert(key, cat) {
                    return Err(MeasureError::Duplicate {
                        measure: m.clone(),
                        first: prev.key(),
                        second: cat.key(),
                    });
                }
            }
        }
        Ok(Self {
            categories,
            unmatched,
            index,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self, MeasureError> {
        let file: MeasureMapFile = serde_json::from_str(text)?;
        Self::new(file.categories, file.unmatched)
    }

    /// The bundled UK EPC recommendation map.
    pub fn uk_default() -> Self {
        Self::from_json_str(UK_MEASURE_MAP_JSON).expect("bundled measure map is valid")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&MeasureMapFile {
            categories: self.categories.clone(),
            unmatched: self.unmatched,
        })
        .expect("map serialises")
    }

    pub fn classify(&self, raw: &str) -> Option<RetrofitCategory> {
        self.index.get(&normalize_measure(raw)).copied()
    }

    /// Sets a category's label when any of `raw` belongs to it. Unmatched
    /// strings fail or are logged and skipped according to the map's policy.
    pub fn map_measures<S: AsRef<str>>(&self, raw: &[S]) -> Result<RetrofitLabels, MeasureError> {
        let mut out = [false; N_LABELS];
        for s in raw {
            let s = s.as_ref();
            if s.trim().is_empty() {
                continue;
            }
            match self.classify(s) {
                Some(c) => out[c.index()] = true,
                None => match self.unmatched {
                    UnmatchedPolicy::Error => return Err(MeasureError::Unmatched(s.to_string())),
                    UnmatchedPolicy::Warn => log::warn!("ignoring unmatched measure {s:?}"),
                },
            }
        }
        Ok(RetrofitLabels::from_array(out))
    }

    /// Strings in `raw` the map does not know.
    pub fn unmatched<'a, S: AsRef<str>>(&self, raw: &'a [S]) -> Vec<&'a str> {
        raw.iter()
            .map(AsRef::as_ref)
            .filter(|s| !s.trim().is_empty() && self.classify(s).is_none())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_measure_examples() {
        let map = MeasureMap::uk_default();
        let l = map.map_measures(&["Cavity wall insulation"]).unwrap();
        assert_eq!(l.to_array(), [true, false, false, false]);
        let none: [&str; 0] = [];
        assert_eq!(map.map_measures(&none).unwrap(), RetrofitLabels::default());
        let l = map
            .map_measures(&["Hot water cylinder thermostat", "Replace boiler with new condensing boiler"])
            .unwrap();
        assert_eq!(l.to_array(), [false, false, true, true]);
    }

    #[test]
    fn every_listed_measure_maps_once() {
        let map = MeasureMap::uk_default();
        let mut n = 0;
        for (cat, list) in &map.categories {
            for m in list {
                assert_eq!(map.classify(m), Some(*cat), "{m}");
                n += 1;
            }
        }
        assert_eq!(n, 29);
    }

    #[test]
    fn normalisation() {
        let map = MeasureMap::uk_default();
        assert_eq!(
            map.classify("  cavity   WALL\tinsulation "),
            Some(RetrofitCategory::BuildingFabric)
        );
    }

    #[test]
    fn unmatched_policy() {
        let mut map = MeasureMap::uk_default();
        let raw = ["Solar water heating", "Draught proofing"];
        assert_eq!(map.map_measures(&raw).unwrap().to_array(), [true, false, false, false]);
        assert_eq!(map.unmatched(&raw), vec!["Solar water heating"]);
        map.unmatched = UnmatchedPolicy::Error;
        assert!(matches!(map.map_measures(&raw), Err(MeasureError::Unmatched(s)) if s == "Solar water heating"));
    }

    #[test]
    fn rejects_cross_category_duplicates() {
        let text = r#"{"categories": {
            "building_fabric": ["Draught proofing"],
            "heating_lighting_controls": ["draught  proofing"],
            "dhw_upgrades": [], "heating_system": []}}"#;
        assert!(matches!(
            MeasureMap::from_json_str(text),
            Err(MeasureError::Duplicate { .. })
        ));
        let text = r#"{"categories": {"building_fabric": []}}"#;
        assert!(matches!(
            MeasureMap::from_json_str(text),
            Err(MeasureError::MissingCategory("heating_lighting_controls"))
        ));
    }

    #[test]
    fn idempotent_and_round_trips() {
        let map = MeasureMap::uk_default();
        let raw = ["Fan assisted storage heaters", "Low energy lighting for all fixed outlets"];
        assert_eq!(map.map_measures(&raw).unwrap(), map.map_measures(&raw).unwrap());
        let again = MeasureMap::from_json_str(&map.to_json_pretty()).unwrap();
        assert_eq!(again, map);
    }
}
