//! Glue between the stages: held-out test bookkeeping, (augmented) training
//! sets, model fitting and evaluation.

use std::collections::BTreeSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::artifact::{ArtifactError, ModelArtifact, Provenance};
use crate::explain::{sample_background, DEFAULT_BACKGROUND};
use crate::features::{label_matrix, FeatureError, FeatureOptions, FeatureTransform};
use crate::ingest::{split_indices, split_two_way, IngestError, SplitIndices, SplitSpec};
use crate::metrics::{binarize, evaluate_named, to_binary, MetricsError, MetricsReport};
use crate::nn::{train, MlpConfig, MlpModel, NnError, TrainReport};
use crate::schema::{BuildingRecord, Cell, DatasetSchema};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error("test-set isolation violated: {0}")]
    Isolation(String),
}

/// Persisted record of which rows form the held-out test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestIndexManifest {
    pub n_records: usize,
    pub split: SplitSpec,
    pub test: Vec<usize>,
    pub digest: String,
}

/// SHA-256 over the record count and the sorted test indices.
pub fn test_index_digest(n_records: usize, test: &[usize]) -> String {
    let mut sorted = test.to_vec();
    sorted.sort_unstable();
    let mut h = Sha256::new();
    h.update(format!("records={n_records};test=").as_bytes());
    for (k, i) in sorted.iter().enumerate() {
        if k > 0 {
            h.update(b",");
        }
        h.update(i.to_string().as_bytes());
    }
    hex::encode(h.finalize())
}

impl TestIndexManifest {
    pub fn new(n_records: usize, split: SplitSpec, indices: &SplitIndices) -> Self {
        Self {
            n_records,
            split,
            test: indices.test.clone(),
            digest: test_index_digest(n_records, &indices.test),
        }
    }

    /// The stored digest matches the stored indices.
    pub fn verify(&self) -> Result<(), PipelineError> {
        let actual = test_index_digest(self.n_records, &self.test);
        if actual != self.digest {
            return Err(PipelineError::Isolation(format!(
                "test index file digest {} does not match its indices ({actual})",
                self.digest
            )));
        }
        Ok(())
    }

    /// `indices` hold the same test set and train/validation never touch it.
    pub fn check(&self, n_records: usize, indices: &SplitIndices) -> Result<(), PipelineError> {
        self.verify()?;
        if n_records != self.n_records {
            return Err(PipelineError::Isolation(format!(
                "dataset has {n_records} rows, test index file was made for {}",
                self.n_records
            )));
        }
        if test_index_digest(n_records, &indices.test) != self.digest {
            return Err(PipelineError::Isolation("split test indices differ from the recorded test set".into()));
        }
        let test: BTreeSet<usize> = self.test.iter().copied().collect();
        if let Some(i) = indices.train.iter().chain(&indices.val).find(|i| test.contains(i)) {
            return Err(PipelineError::Isolation(format!("row {i} is in both the test set and the training pool")));
        }
        Ok(())
    }
}

/// Split plus its manifest.
pub fn make_split(n_records: usize, spec: SplitSpec) -> Result<(SplitIndices, TestIndexManifest), PipelineError> {
    let idx = split_indices(n_records, &spec)?;
    let manifest = TestIndexManifest::new(n_records, spec, &idx);
    Ok((idx, manifest))
}

#[derive(Debug, Clone)]
pub struct TrainingSets {
    pub train: Vec<BuildingRecord>,
    pub val: Vec<BuildingRecord>,
    pub test: Vec<BuildingRecord>,
    pub real_rows: usize,
    pub synthetic_rows: usize,
    pub test_index_digest: String,
}

fn pick(records: &[BuildingRecord], idx: &[usize]) -> Vec<BuildingRecord> {
    idx.iter().map(|&i| records[i].clone()).collect()
}

/// Real train/validation/test sets after the isolation check.
pub fn baseline_sets(
    records: &[BuildingRecord],
    indices: &SplitIndices,
    manifest: &TestIndexManifest,
) -> Result<TrainingSets, PipelineError> {
    manifest.check(records.len(), indices)?;
    Ok(TrainingSets {
        train: pick(records, &indices.train),
        val: pick(records, &indices.val),
        test: pick(records, &manifest.test),
        real_rows: indices.train.len() + indices.val.len(),
        synthetic_rows: 0,
        test_index_digest: manifest.digest.clone(),
    })
}

/// Real train+validation rows merged with `synthetic` and re-split into
/// train/validation; the test set is the recorded one, untouched.
pub fn augmented_sets(
    records: &[BuildingRecord],
    indices: &SplitIndices,
    manifest: &TestIndexManifest,
    synthetic: &[BuildingRecord],
    seed: u64,
) -> Result<TrainingSets, PipelineError> {
    manifest.check(records.len(), indices)?;
    let mut pool = pick(records, &indices.train);
    pool.extend(pick(records, &indices.val));
    let real_rows = pool.len();
    pool.extend_from_slice(synthetic);
    let (train_ix, val_ix) = split_two_way(pool.len(), manifest.split.val_fraction_of_rest, seed);
    Ok(TrainingSets {
        train: pick(&pool, &train_ix),
        val: pick(&pool, &val_ix),
        test: pick(records, &manifest.test),
        real_rows,
        synthetic_rows: synthetic.len(),
        test_index_digest: manifest.digest.clone(),
    })
}

/// Rows of the training pool (train + validation) of a split.
pub fn training_pool(records: &[BuildingRecord], indices: &SplitIndices) -> Vec<BuildingRecord> {
    let mut pool = pick(records, &indices.train);
    pool.extend(pick(records, &indices.val));
    pool
}

/// Boolean label rows in schema label order.
pub fn label_rows(records: &[BuildingRecord], schema: &DatasetSchema) -> Vec<Vec<bool>> {
    let idx = schema.label_indices();
    records
        .iter()
        .map(|r| idx.iter().map(|&i| matches!(r.values[i], Cell::Bool(true))).collect())
        .collect()
}

#[derive(Debug, Clone)]
pub struct FittedModel {
    pub transform: FeatureTransform,
    pub model: MlpModel,
    pub report: TrainReport,
    /// Encoded training inputs.
    pub train_x: Array2<f64>,
}

/// Fits transforms on `train` only, then trains the network.
pub fn fit_model(
    train_rows: &[BuildingRecord],
    val_rows: &[BuildingRecord],
    schema: &DatasetSchema,
    options: &FeatureOptions,
    config: &MlpConfig,
) -> Result<FittedModel, PipelineError> {
    let transform = FeatureTransform::fit(train_rows, schema, options)?;
    let (train_x, _) = transform.apply(train_rows, schema)?;
    let (val_x, _) = transform.apply(val_rows, schema)?;
    let train_y = label_matrix(train_rows, schema)?;
    let val_y = label_matrix(val_rows, schema)?;
    let (model, report) = train(train_x.view(), train_y.view(), config, val_x.view(), val_y.view())?;
    Ok(FittedModel {
        transform,
        model,
        report,
        train_x,
    })
}

/// Probabilities for `records`; inputs outside the training range are
/// clamped (and logged) by the transform.
pub fn predict(
    transform: &FeatureTransform,
    model: &MlpModel,
    records: &[BuildingRecord],
    schema: &DatasetSchema,
) -> Result<Array2<f64>, PipelineError> {
    let (x, _) = transform.apply(records, schema)?;
    Ok(model.forward_batch(x.view()))
}

pub fn evaluate_model(
    transform: &FeatureTransform,
    model: &MlpModel,
    test: &[BuildingRecord],
    schema: &DatasetSchema,
    threshold: f64,
) -> Result<MetricsReport, PipelineError> {
    let probs = predict(transform, model, test, schema)?;
    let pred = binarize(probs.view(), threshold)?;
    let truth = to_binary(label_matrix(test, schema)?.view())?;
    Ok(evaluate_named(pred.view(), truth.view(), &schema.label_names())?)
}

impl FittedModel {
    /// Packs the model with a Shapley background drawn from the training
    /// inputs.
    pub fn into_artifact(
        self,
        schema: &DatasetSchema,
        config: &MlpConfig,
        provenance: Provenance,
    ) -> Result<ModelArtifact, PipelineError> {
        let background = sample_background(self.train_x.view(), DEFAULT_BACKGROUND, config.seed);
        let mut a = ModelArtifact::new(schema.clone(), self.transform, self.model, config.clone(), background)?;
        a.provenance = provenance;
        Ok(a)
    }
}
