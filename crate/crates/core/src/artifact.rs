//! Self-contained model file: schema, fitted transforms, network weights and
//! provenance in one checksummed JSON document.
//!
//! Layout: `{"format_version": N, "checksum": "<sha256 hex of payload>",
//! "payload": {...}}`. Float arrays inside the payload are stored as base64
//! little-endian `f64` blocks so a save/load round trip is bit-exact.

use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::features::FeatureTransform;
use crate::metrics::DEFAULT_THRESHOLD;
use crate::nn::{DenseLayer, MlpConfig, MlpModel};
use crate::schema::DatasetSchema;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("artifact format version {found} is newer than supported version {supported}")]
    Version { found: u32, supported: u32 },
    #[error("artifact checksum failure: {0}")]
    Checksum(String),
    #[error("malformed artifact: {0}")]
    Malformed(String),
    #[error("schema fingerprint mismatch: artifact records {recorded}, schema hashes to {actual}")]
    Fingerprint { recorded: String, actual: String },
    #[error("inconsistent artifact: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Flat `f64` array with its shape, serialised as base64 LE bytes.
#[derive(Debug, Clone, PartialEq)]
struct Block {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct BlockRepr {
    shape: Vec<usize>,
    data: String,
}

impl Serialize for Block {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let bytes: Vec<u8> = self.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        BlockRepr {
            shape: self.shape.clone(),
            data: B64.encode(bytes),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Block {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let r = BlockRepr::deserialize(d)?;
        let bytes = B64.decode(r.data.as_bytes()).map_err(D::Error::custom)?;
        if bytes.len() % 8 != 0 {
            return Err(D::Error::custom("block byte length is not a multiple of 8"));
        }
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let expected = r.shape.iter().try_fold(1usize, |a, &b| a.checked_mul(b));
        if expected != Some(data.len()) {
            return Err(D::Error::custom("block shape does not match its data length"));
        }
        Ok(Block { shape: r.shape, data })
    }
}

impl Block {
    fn from_matrix(m: &Array2<f64>) -> Self {
        Self {
            shape: vec![m.nrows(), m.ncols()],
            data: m.iter().copied().collect(),
        }
    }

    fn from_vector(v: &Array1<f64>) -> Self {
        Self {
            shape: vec![v.len()],
            data: v.to_vec(),
        }
    }

    fn matrix(self) -> Result<Array2<f64>, ArtifactError> {
        match self.shape[..] {
            [r, c] => Array2::from_shape_vec((r, c), self.data).map_err(|e| ArtifactError::Malformed(e.to_string())),
            _ => Err(ArtifactError::Malformed("expected a two-dimensional block".into())),
        }
    }

    fn vector(self) -> Result<Array1<f64>, ArtifactError> {
        match self.shape[..] {
            [_] => Ok(Array1::from(self.data)),
            _ => Err(ArtifactError::Malformed("expected a one-dimensional block".into())),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct LayerRepr {
    weights: Block,
    bias: Block,
}

/// Winner of a tuning study, kept for the model card.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HpoSummary {
    pub best_trial: usize,
    pub best_value: f64,
    pub n_trials: usize,
    pub n_pruned: usize,
}

/// Where the training rows came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub real_rows: usize,
    pub synthetic_rows: usize,
    /// SHA-256 of the generation manifest behind the synthetic rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation_manifest_digest: Option<String>,
    /// Digest of the held-out test indices the model was evaluated on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_index_digest: Option<String>,
    #[serde(default)]
    pub note: String,
}

/// Everything inference and explanation need.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub schema: DatasetSchema,
    pub transform: FeatureTransform,
    pub model: MlpModel,
    pub training: MlpConfig,
    pub threshold: f64,
    /// Encoded training inputs used as the Shapley background.
    pub background: Array2<f64>,
    pub hpo: Option<HpoSummary>,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct Payload {
    schema: DatasetSchema,
    schema_fingerprint: String,
    transform: FeatureTransform,
    layers: Vec<LayerRepr>,
    training: MlpConfig,
    threshold: f64,
    background: Block,
    #[serde(default)]
    hpo: Option<HpoSummary>,
    #[serde(default)]
    provenance: Provenance,
}

#[derive(Serialize)]
struct EnvelopeOut<'a> {
    format_version: u32,
    checksum: String,
    payload: &'a RawValue,
}

#[derive(Deserialize)]
struct EnvelopeIn<'a> {
    format_version: u32,
    checksum: String,
    #[serde(borrow)]
    payload: &'a RawValue,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl ModelArtifact {
    pub fn new(
        schema: DatasetSchema,
        transform: FeatureTransform,
        model: MlpModel,
        training: MlpConfig,
        background: Array2<f64>,
    ) -> Result<Self, ArtifactError> {
        let a = Self {
            schema,
            transform,
            model,
            training,
            threshold: DEFAULT_THRESHOLD,
            background,
            hpo: None,
            provenance: Provenance::default(),
        };
        a.check()?;
        Ok(a)
    }

    fn check(&self) -> Result<(), ArtifactError> {
        let dim = self.transform.input_dim();
        if self.model.input_dim() != dim {
            return Err(ArtifactError::Inconsistent(format!(
                "transform yields {dim} inputs, network expects {}",
                self.model.input_dim()
            )));
        }
        if self.model.output_dim() != self.schema.label_indices().len() {
            return Err(ArtifactError::Inconsistent("network outputs differ from the label count".into()));
        }
        if self.background.nrows() == 0 || self.background.ncols() != dim {
            return Err(ArtifactError::Inconsistent("background must be a non-empty input matrix".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(ArtifactError::Inconsistent(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        Ok(())
    }

    /// Short content id: the first 16 hex digits of the payload checksum.
    pub fn id(&self) -> String {
        let text = self.to_json();
        let env: EnvelopeIn = serde_json::from_str(&text).expect("own output parses");
        env.checksum[..16].to_string()
    }

    pub fn to_json(&self) -> String {
        let payload = Payload {
            schema: self.schema.clone(),
            schema_fingerprint: self.schema.fingerprint(),
            transform: self.transform.clone(),
            layers: self
                .model
                .layers
                .iter()
                .map(|l| LayerRepr {
                    weights: Block::from_matrix(&l.weights),
                    bias: Block::from_vector(&l.bias),
                })
                .collect(),
            training: self.training.clone(),
            threshold: self.threshold,
            background: Block::from_matrix(&self.background),
            hpo: self.hpo.clone(),
            provenance: self.provenance.clone(),
        };
        let raw = serde_json::value::to_raw_value(&payload).expect("payload serialises");
        let env = EnvelopeOut {
            format_version: FORMAT_VERSION,
            checksum: sha256_hex(raw.get().as_bytes()),
            payload: &raw,
        };
        serde_json::to_string(&env).expect("envelope serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, ArtifactError> {
        let env: EnvelopeIn = match serde_json::from_str(text) {
            Ok(e) => e,
            Err(e) => {
                // a readable version field wins over everything else
                if let Ok(p) = serde_json::from_str::<VersionProbe>(text) {
                    if p.format_version > FORMAT_VERSION {
                        return Err(ArtifactError::Version {
                            found: p.format_version,
                            supported: FORMAT_VERSION,
                        });
                    }
                }
                return Err(if e.is_eof() {
                    ArtifactError::Checksum("file is truncated".into())
                } else {
                    ArtifactError::Malformed(e.to_string())
                });
            }
        };
        if env.format_version > FORMAT_VERSION {
            return Err(ArtifactError::Version {
                found: env.format_version,
                supported: FORMAT_VERSION,
            });
        }
        let actual = sha256_hex(env.payload.get().as_bytes());
        if actual != env.checksum {
            return Err(ArtifactError::Checksum(format!(
                "recorded {}, content hashes to {actual}",
                env.checksum
            )));
        }
        let p: Payload =
            serde_json::from_str(env.payload.get()).map_err(|e| ArtifactError::Malformed(e.to_string()))?;
        p.schema.validate().map_err(|e| ArtifactError::Malformed(e.to_string()))?;
        let fp = p.schema.fingerprint();
        if fp != p.schema_fingerprint {
            return Err(ArtifactError::Fingerprint {
                recorded: p.schema_fingerprint,
                actual: fp,
            });
        }
        let layers = p
            .layers
            .into_iter()
            .map(|l| {
                Ok(DenseLayer {
                    weights: l.weights.matrix()?,
                    bias: l.bias.vector()?,
                })
            })
            .collect::<Result<Vec<_>, ArtifactError>>()?;
        let model = MlpModel::new(layers).map_err(|e| ArtifactError::Malformed(e.to_string()))?;
        let a = Self {
            schema: p.schema,
            transform: p.transform,
            model,
            training: p.training,
            threshold: p.threshold,
            background: p.background.matrix()?,
            hpo: p.hpo,
            provenance: p.provenance,
        };
        a.check()?;
        Ok(a)
    }

    /// Writes to a sibling temporary file, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<(), ArtifactError> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_json())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ArtifactError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Like [`load`](Self::load), but also requires the artifact schema to
    /// match `schema`.
    pub fn load_for(path: &Path, schema: &DatasetSchema) -> Result<Self, ArtifactError> {
        let a = Self::load(path)?;
        let (recorded, actual) = (a.schema.fingerprint(), schema.fingerprint());
        if recorded != actual {
            return Err(ArtifactError::Fingerprint { recorded, actual });
        }
        Ok(a)
    }
}
