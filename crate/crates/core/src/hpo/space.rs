use serde::{Deserialize, Serialize};

use super::HpoError;
use crate::nn::{MlpConfig, MAX_HIDDEN_LAYERS, MIN_HIDDEN_LAYERS};

/// Discrete search space. Every hidden layer draws its width independently
/// from `layer_sizes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub n_layers: Vec<usize>,
    pub layer_sizes: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub batch_sizes: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            n_layers: (2..=6).collect(),
            layer_sizes: vec![32, 64, 128, 256, 512],
            learning_rates: vec![1e-4, 1e-3, 1e-2],
            batch_sizes: vec![16, 32, 64, 128],
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<(), HpoError> {
        if self.n_layers.is_empty()
            || self.layer_sizes.is_empty()
            || self.learning_rates.is_empty()
            || self.batch_sizes.is_empty()
        {
            return Err(HpoError::Space("every dimension needs at least one choice".into()));
        }
        if self
            .n_layers
            .iter()
            .any(|n| !(MIN_HIDDEN_LAYERS..=MAX_HIDDEN_LAYERS).contains(n))
        {
            return Err(HpoError::Space(format!(
                "layer counts must lie in {MIN_HIDDEN_LAYERS}..={MAX_HIDDEN_LAYERS}"
            )));
        }
        if self.layer_sizes.contains(&0) || self.batch_sizes.contains(&0) {
            return Err(HpoError::Space("sizes must be positive".into()));
        }
        if self.learning_rates.iter().any(|&lr| !(lr > 0.0 && lr.is_finite())) {
            return Err(HpoError::Space("learning rates must be positive".into()));
        }
        Ok(())
    }

    pub fn max_layers(&self) -> usize {
        self.n_layers.iter().copied().max().unwrap_or(0)
    }

    /// Number of choices of parameter `p`.
    pub(crate) fn cardinality(&self, p: Param) -> usize {
        match p {
            Param::NLayers => self.n_layers.len(),
            Param::LayerSize(_) => self.layer_sizes.len(),
            Param::LearningRate => self.learning_rates.len(),
            Param::BatchSize => self.batch_sizes.len(),
        }
    }

    pub fn contains(&self, params: &TrialParams) -> bool {
        self.n_layers.contains(&params.layer_sizes.len())
            && params.layer_sizes.iter().all(|s| self.layer_sizes.contains(s))
            && self.learning_rates.contains(&params.learning_rate)
            && self.batch_sizes.contains(&params.batch_size)
    }
}

/// One tunable dimension. Layer widths are conditional on the layer count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) enum Param {
    NLayers,
    LayerSize(usize),
    LearningRate,
    BatchSize,
}

/// A point of the space, stored as choice indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceIndices {
    pub n_layers: usize,
    pub layer_sizes: Vec<usize>,
    pub learning_rate: usize,
    pub batch_size: usize,
}

impl ChoiceIndices {
    pub(crate) fn get(&self, p: Param) -> Option<usize> {
        match p {
            Param::NLayers => Some(self.n_layers),
            Param::LayerSize(i) => self.layer_sizes.get(i).copied(),
            Param::LearningRate => Some(self.learning_rate),
            Param::BatchSize => Some(self.batch_size),
        }
    }

    pub fn resolve(&self, space: &SearchSpace) -> TrialParams {
        TrialParams {
            layer_sizes: self.layer_sizes.iter().map(|&i| space.layer_sizes[i]).collect(),
            learning_rate: space.learning_rates[self.learning_rate],
            batch_size: space.batch_sizes[self.batch_size],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialParams {
    pub layer_sizes: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl TrialParams {
    pub fn to_config(&self, seed: u64) -> MlpConfig {
        MlpConfig::new(self.layer_sizes.clone(), self.learning_rate, self.batch_size, seed)
    }
}
