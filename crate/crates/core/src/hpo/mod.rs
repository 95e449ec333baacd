//! Hyperparameter search: univariate TPE sampling with median pruning.

mod pruner;
mod space;
mod tpe;

use std::io::{BufRead, Write};

use ndarray::ArrayView2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use pruner::{median, MedianPruner};
pub use space::{ChoiceIndices, SearchSpace, TrialParams};
pub use tpe::TpeSampler;

use crate::nn::{train_with_monitor, EpochControl, MlpConfig, NnError};

#[derive(Debug, Error)]
pub enum HpoError {
    #[error("invalid search space: {0}")]
    Space(String),
    #[error("all {0} trials were pruned or diverged; raise the pruner warm-up (min_trials) or the trial count")]
    AllPruned(usize),
    #[error("trial {trial}: {source}")]
    Train {
        trial: usize,
        #[source]
        source: NnError,
    },
    #[error("trial log line {line}: {source}")]
    Log {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Running,
    Pruned,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub id: usize,
    pub choices: ChoiceIndices,
    pub params: TrialParams,
    /// Training seed of this trial.
    pub seed: u64,
    /// `(epoch, validation loss)` reported after every epoch.
    pub intermediate: Vec<(usize, f64)>,
    pub status: TrialStatus,
    /// Best validation loss; set for complete trials only.
    pub value: Option<f64>,
    pub pruned_at: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Trial {
    pub fn value_at(&self, step: usize) -> Option<f64> {
        self.intermediate
            .iter()
            .find(|(s, _)| *s == step)
            .map(|&(_, v)| v)
    }
}

/// Train/validation matrices a study fits against.
#[derive(Debug, Clone, Copy)]
pub struct TuningData<'a> {
    pub train_x: ArrayView2<'a, f64>,
    pub train_y: ArrayView2<'a, f64>,
    pub val_x: ArrayView2<'a, f64>,
    pub val_y: ArrayView2<'a, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyOptions {
    pub n_trials: usize,
    pub seed: u64,
    pub sampler: TpeSampler,
    pub pruner: MedianPruner,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
}

impl StudyOptions {
    pub fn new(n_trials: usize, seed: u64) -> Self {
        let base = MlpConfig::new(vec![], 1e-3, 1, 0);
        Self {
            n_trials,
            seed,
            sampler: TpeSampler::default(),
            pruner: MedianPruner::default(),
            max_epochs: base.max_epochs,
            patience: base.patience,
            min_delta: base.min_delta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub best_trial: usize,
    pub best_value: f64,
    pub best_config: MlpConfig,
    pub trials: Vec<Trial>,
}

pub fn optimize(
    data: TuningData<'_>,
    space: &SearchSpace,
    options: &StudyOptions,
) -> Result<StudyResult, HpoError> {
    optimize_with(data, space, options, |_| {})
}

/// [`optimize`] calling `on_trial` as each trial finishes.
pub fn optimize_with<F: FnMut(&Trial)>(
    data: TuningData<'_>,
    space: &SearchSpace,
    options: &StudyOptions,
    mut on_trial: F,
) -> Result<StudyResult, HpoError> {
    space.validate()?;
    let mut sampler_rng = ChaCha8Rng::seed_from_u64(options.seed);
    sampler_rng.set_stream(2);
    let mut history: Vec<Trial> = Vec::with_capacity(options.n_trials);

    for id in 0..options.n_trials {
        let choices = options.sampler.suggest(space, &history, &mut sampler_rng);
        let params = choices.resolve(space);
        let seed = options.seed.wrapping_add(id as u64);
        let mut config = params.to_config(seed);
        config.max_epochs = options.max_epochs;
        config.patience = options.patience;
        config.min_delta = options.min_delta;

        let mut trial = Trial {
            id,
            choices,
            params,
            seed,
            intermediate: Vec::new(),
            status: TrialStatus::Running,
            value: None,
            pruned_at: None,
            note: None,
        };
        let mut pruned_at = None;
        let outcome = train_with_monitor(
            data.train_x,
            data.train_y,
            &config,
            data.val_x,
            data.val_y,
            |epoch, val| {
                trial.intermediate.push((epoch, val));
                if options.pruner.should_prune(epoch, val, &history) {
                    pruned_at = Some(epoch);
                    EpochControl::Stop
                } else {
                    EpochControl::Continue
                }
            },
        );
        match outcome {
            Ok((_, report)) => {
                if let Some(step) = pruned_at {
                    trial.status = TrialStatus::Pruned;
                    trial.pruned_at = Some(step);
                } else {
                    trial.status = TrialStatus::Complete;
                    trial.value = Some(report.best_val_loss);
                }
            }
            Err(NnError::NonFiniteLoss { epoch, detail }) => {
                log::warn!("trial {id} diverged at epoch {epoch}: {detail}");
                trial.status = TrialStatus::Pruned;
                trial.pruned_at = Some(epoch);
                trial.note = Some(format!("diverged: {detail}"));
            }
            Err(source) => return Err(HpoError::Train { trial: id, source }),
        }
        log::info!(
            "trial {id}: {:?} lr={} batch={} -> {:?}",
            trial.params.layer_sizes,
            trial.params.learning_rate,
            trial.params.batch_size,
            trial.value.map_or("pruned".to_string(), |v| format!("{v:.5}"))
        );
        on_trial(&trial);
        history.push(trial);
    }

    let best = history
        .iter()
        .filter(|t| t.status == TrialStatus::Complete)
        .min_by(|a, b| {
            a.value
                .unwrap()
                .total_cmp(&b.value.unwrap())
                .then(a.id.cmp(&b.id))
        })
        .ok_or(HpoError::AllPruned(history.len()))?;
    let mut best_config = best.params.to_config(best.seed);
    best_config.max_epochs = options.max_epochs;
    best_config.patience = options.patience;
    best_config.min_delta = options.min_delta;
    Ok(StudyResult {
        best_trial: best.id,
        best_value: best.value.unwrap(),
        best_config,
        trials: history,
    })
}

/// One JSON object per line.
pub fn write_trial_log<W: Write>(mut w: W, trials: &[Trial]) -> std::io::Result<()> {
    for t in trials {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trial_log<R: BufRead>(r: R) -> Result<Vec<Trial>, HpoError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| HpoError::Log { line: i + 1, source })?);
    }
    Ok(out)
}
