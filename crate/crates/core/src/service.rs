//! Request handling behind the HTTP service, independent of any web
//! framework: request validation, recommendation, explanation and the model
//! card served to clients.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::artifact::{HpoSummary, ModelArtifact, Provenance, FORMAT_VERSION};
use crate::explain::{shapley_auto, waterfall, Attribution, ExplainInput, Method, OutputScale, ScaledModel, Waterfall};
use crate::features::{ClampWarning, FeatureError, InputEncoding};
use crate::ingest::parse_bool;
use crate::measures::RetrofitCategory;
use crate::schema::{BuildingRecord, Cell, ColumnKind, ColumnRole, DatasetSchema};

/// Permutations used when a model has too many inputs for exact Shapley
/// values. The seed is fixed so identical requests get identical answers.
pub const EXPLAIN_PERMUTATIONS: usize = 500;
pub const EXPLAIN_SEED: u64 = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendRequest {
    /// Feature values keyed by schema column name.
    pub features: BTreeMap<String, Value>,
    /// Energy class the owner wants to reach. Required when the schema has
    /// a target-class column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_energy_class: Option<String>,
}

/// A request the model cannot answer; maps to HTTP 422.
#[derive(Debug, Clone, Error, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RequestError {
    #[error("missing value for {field:?}")]
    Missing { field: String },
    #[error("{field:?} is not a feature of this model")]
    Unknown { field: String },
    #[error("invalid value for {field:?}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("value {value:?} of {field:?} was not seen in training")]
    Unseen { field: String, value: String },
}

impl RequestError {
    pub fn field(&self) -> &str {
        match self {
            RequestError::Missing { field }
            | RequestError::Unknown { field }
            | RequestError::Invalid { field, .. }
            | RequestError::Unseen { field, .. } => field,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryInfo {
    pub key: String,
    pub title: String,
    pub description: String,
    /// Label column of the training data.
    pub label: String,
}

fn categories(schema: &DatasetSchema) -> Vec<CategoryInfo> {
    schema
        .label_names()
        .into_iter()
        .zip(RetrofitCategory::ALL)
        .map(|(label, c)| CategoryInfo {
            key: c.key().to_string(),
            title: c.title().to_string(),
            description: c.description().to_string(),
            label,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    #[serde(flatten)]
    pub category: CategoryInfo,
    pub probability: f64,
    pub recommended: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendResponse {
    pub model_id: String,
    pub threshold: f64,
    pub recommendations: Vec<Recommendation>,
    /// Inputs clamped into the training range.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<ClampWarning>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureAttribution {
    pub feature: String,
    /// Encoded model input.
    pub value: f64,
    pub phi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelExplanation {
    #[serde(flatten)]
    pub category: CategoryInfo,
    pub base_value: f64,
    pub fx: f64,
    pub attributions: Vec<FeatureAttribution>,
    pub waterfall: Waterfall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainResponse {
    pub model_id: String,
    pub method: Method,
    pub scale: OutputScale,
    pub labels: Vec<LabelExplanation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureInfo {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    /// Accepted values of a categorical feature.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    /// Training range of a numerical feature; values outside are clamped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetClassInfo {
    pub column: String,
    pub options: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub model_id: String,
    pub format_version: u32,
    pub schema_id: String,
    pub schema_version: u32,
    pub schema: DatasetSchema,
    pub features: Vec<FeatureInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_class: Option<TargetClassInfo>,
    pub derived_features: Vec<String>,
    pub categories: Vec<CategoryInfo>,
    pub threshold: f64,
    pub explain_method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hpo: Option<HpoSummary>,
    pub provenance: Provenance,
}

/// A loaded model answering requests. Immutable; share it behind an `Arc`.
#[derive(Debug, Clone)]
pub struct Recommender {
    artifact: ModelArtifact,
    id: String,
}

fn cell_from_json(kind: ColumnKind, field: &str, v: &Value) -> Result<Cell, RequestError> {
    let invalid = |reason: &str| RequestError::Invalid {
        field: field.to_string(),
        reason: reason.to_string(),
    };
    match (kind, v) {
        (_, Value::Null) => Err(RequestError::Missing { field: field.to_string() }),
        (ColumnKind::Numerical, Value::Number(n)) => {
            n.as_f64().filter(|x| x.is_finite()).map(Cell::Number).ok_or_else(|| invalid("not a finite number"))
        }
        (ColumnKind::Numerical, Value::String(s)) => match s.trim().parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(Cell::Number(x)),
            _ => Err(invalid("not a finite number")),
        },
        (ColumnKind::Boolean, Value::Bool(b)) => Ok(Cell::Bool(*b)),
        (ColumnKind::Boolean, Value::Number(n)) => match n.as_f64() {
            Some(x) if x == 0.0 => Ok(Cell::Bool(false)),
            Some(x) if x == 1.0 => Ok(Cell::Bool(true)),
            _ => Err(invalid("expected true/false or 0/1")),
        },
        (ColumnKind::Boolean, Value::String(s)) => {
            parse_bool(s.trim()).map(Cell::Bool).ok_or_else(|| invalid("expected true/false or 0/1"))
        }
        (ColumnKind::Categorical, Value::String(s)) if !s.trim().is_empty() => Ok(Cell::Category(s.trim().to_string())),
        (ColumnKind::Categorical, Value::String(_)) => Err(RequestError::Missing { field: field.to_string() }),
        (ColumnKind::Categorical, Value::Number(n)) => Ok(Cell::Category(n.to_string())),
        (ColumnKind::Numerical, _) => Err(invalid("expected a number")),
        (ColumnKind::Boolean, _) => Err(invalid("expected a boolean")),
        (ColumnKind::Categorical, _) => Err(invalid("expected a string")),
    }
}

impl Recommender {
    pub fn new(artifact: ModelArtifact) -> Self {
        let id = artifact.id();
        Self { artifact, id }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn artifact(&self) -> &ModelArtifact {
        &self.artifact
    }

    fn target_column(&self) -> Option<&str> {
        self.artifact.schema.energy.as_ref().map(|e| e.target_class.as_str())
    }

    /// Builds a schema-shaped record from the request. Columns the model
    /// does not read stay null.
    pub fn record(&self, req: &RecommendRequest) -> Result<BuildingRecord, RequestError> {
        let schema = &self.artifact.schema;
        for name in req.features.keys() {
            match schema.column(name) {
                Some(c) if c.role != ColumnRole::Label => {}
                _ => return Err(RequestError::Unknown { field: name.clone() }),
            }
        }
        let target = self.target_column();
        let mut values = vec![Cell::Null; schema.columns.len()];
        for i in schema.feature_indices() {
            let col = &schema.columns[i];
            let from_target = target == Some(col.name.as_str());
            let raw = match (&req.target_energy_class, req.features.get(&col.name)) {
                (Some(t), _) if from_target => Value::String(t.clone()),
                (_, Some(v)) => v.clone(),
                (None, None) if from_target => {
                    return Err(RequestError::Missing {
                        field: "target_energy_class".into(),
                    })
                }
                (_, None) => return Err(RequestError::Missing { field: col.name.clone() }),
            };
            let field = if from_target { "target_energy_class" } else { col.name.as_str() };
            values[i] = cell_from_json(col.kind, field, &raw)?;
        }
        Ok(BuildingRecord::new(values))
    }

    /// Encoded model inputs for a request.
    pub fn encode(&self, req: &RecommendRequest) -> Result<(Vec<f64>, Vec<ClampWarning>), RequestError> {
        self.encode_record(&self.record(req)?)
    }

    /// Encoded model inputs for a schema-shaped record.
    pub fn encode_record(&self, record: &BuildingRecord) -> Result<(Vec<f64>, Vec<ClampWarning>), RequestError> {
        let mut warnings = Vec::new();
        let x = self
            .artifact
            .transform
            .apply_record(record, &self.artifact.schema, 0, &mut warnings)
            .map_err(|e| self.request_error(e))?;
        Ok((x, warnings))
    }

    fn request_error(&self, e: FeatureError) -> RequestError {
        let rename = |column: String| {
            if self.target_column() == Some(column.as_str()) {
                "target_energy_class".to_string()
            } else {
                column
            }
        };
        match e {
            FeatureError::UnseenCategory { column, value } => RequestError::Unseen {
                field: rename(column),
                value,
            },
            FeatureError::UnknownClass(value) => RequestError::Unseen {
                field: "energy class".into(),
                value,
            },
            FeatureError::Null { column, .. } => RequestError::Missing { field: rename(column) },
            other => RequestError::Invalid {
                field: "request".into(),
                reason: other.to_string(),
            },
        }
    }

    pub fn recommend(&self, req: &RecommendRequest) -> Result<RecommendResponse, RequestError> {
        let (x, warnings) = self.encode(req)?;
        let probs = self.artifact.model.forward(&x).expect("encoded width matches the network");
        let t = self.artifact.threshold;
        let recommendations = categories(&self.artifact.schema)
            .into_iter()
            .zip(probs)
            .map(|(category, p)| Recommendation {
                category,
                probability: p,
                recommended: p >= t,
            })
            .collect();
        Ok(RecommendResponse {
            model_id: self.id.clone(),
            threshold: t,
            recommendations,
            warnings,
        })
    }

    pub fn explain(&self, req: &RecommendRequest) -> Result<ExplainResponse, RequestError> {
        self.explain_record(&self.record(req)?)
    }

    pub fn explain_record(&self, record: &BuildingRecord) -> Result<ExplainResponse, RequestError> {
        let (x, _) = self.encode_record(record)?;
        let names = self.artifact.transform.input_names();
        let input = ExplainInput {
            x: &x,
            background: self.artifact.background.view(),
            feature_names: &names,
            scale: OutputScale::Probability,
        };
        let scaled = ScaledModel::new(&self.artifact.model, OutputScale::Probability);
        let attributions = shapley_auto(&scaled, &input, EXPLAIN_PERMUTATIONS, EXPLAIN_SEED)
            .expect("artifact background and inputs are consistent");
        let method = attributions.first().map_or(Method::Exact, |a| a.method);
        let labels = categories(&self.artifact.schema)
            .into_iter()
            .zip(&attributions)
            .map(|(category, a)| label_explanation(category, a))
            .collect();
        Ok(ExplainResponse {
            model_id: self.id.clone(),
            method,
            scale: OutputScale::Probability,
            labels,
        })
    }

    pub fn info(&self) -> ModelInfo {
        let a = &self.artifact;
        let schema = &a.schema;
        let target = self.target_column();
        let mut features = Vec::new();
        let mut target_class = None;
        for input in a.transform.inputs.iter().filter(|c| !c.derived) {
            let Some(col) = schema.column(&input.name) else { continue };
            let (options, range) = match &input.encoding {
                InputEncoding::Ordinal(e) => (Some(e.categories()), None),
                InputEncoding::Scaled(s) => (None, Some([s.min, s.max])),
                InputEncoding::Boolean => (None, None),
            };
            if target == Some(col.name.as_str()) {
                target_class = Some(TargetClassInfo {
                    column: col.name.clone(),
                    options: options.unwrap_or_default(),
                });
                continue;
            }
            features.push(FeatureInfo {
                name: col.name.clone(),
                kind: col.kind,
                unit: col.unit.clone(),
                options,
                range,
            });
        }
        ModelInfo {
            model_id: self.id.clone(),
            format_version: FORMAT_VERSION,
            schema_id: schema.id.clone(),
            schema_version: schema.version,
            schema: schema.clone(),
            features,
            target_class,
            derived_features: a.transform.inputs.iter().filter(|c| c.derived).map(|c| c.name.clone()).collect(),
            categories: categories(schema),
            threshold: a.threshold,
            explain_method: if a.transform.input_dim() <= crate::explain::MAX_EXACT_FEATURES {
                Method::Exact
            } else {
                Method::Sampled
            },
            hpo: a.hpo.clone(),
            provenance: a.provenance.clone(),
        }
    }
}

fn label_explanation(category: CategoryInfo, a: &Attribution) -> LabelExplanation {
    let attributions = a
        .feature_names
        .iter()
        .enumerate()
        .map(|(j, name)| FeatureAttribution {
            feature: name.clone(),
            value: a.feature_values[j],
            phi: a.phi[j],
            std_error: a.std_errors.as_ref().map(|s| s[j]),
        })
        .collect();
    LabelExplanation {
        category,
        base_value: a.base_value,
        fx: a.fx,
        attributions,
        waterfall: waterfall(a),
    }
}
