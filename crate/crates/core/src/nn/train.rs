use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, Moments};
use super::mlp::{grad_slices, MlpModel};
use super::NnError;

pub const MIN_HIDDEN_LAYERS: usize = 2;
pub const MAX_HIDDEN_LAYERS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Hidden layer widths, input side first.
    pub hidden_layers: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_min_delta")]
    pub min_delta: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_max_epochs() -> usize {
    200
}
fn default_patience() -> usize {
    10
}
fn default_min_delta() -> f64 {
    1e-4
}

impl MlpConfig {
    pub fn new(hidden_layers: Vec<usize>, learning_rate: f64, batch_size: usize, seed: u64) -> Self {
        Self {
            hidden_layers,
            learning_rate,
            batch_size,
            max_epochs: default_max_epochs(),
            patience: default_patience(),
            min_delta: default_min_delta(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let n = self.hidden_layers.len();
        if !(MIN_HIDDEN_LAYERS..=MAX_HIDDEN_LAYERS).contains(&n) {
            return Err(NnError::Config(format!(
                "{n} hidden layers; expected {MIN_HIDDEN_LAYERS}..={MAX_HIDDEN_LAYERS}"
            )));
        }
        if self.hidden_layers.contains(&0) {
            return Err(NnError::Config("hidden layer width must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(NnError::Config(
                "batch size, max epochs and patience must be positive".into(),
            ));
        }
        if !(self.min_delta >= 0.0) {
            return Err(NnError::Config("min_delta must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Loss history of one training run. Epoch 0 holds the losses of the freshly
/// initialised network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLosses>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub best_val_loss: f64,
    /// The epoch monitor asked to stop (e.g. a pruned tuning trial).
    pub interrupted: bool,
}

impl TrainReport {
    pub fn losses_at(&self, epoch: usize) -> Option<EpochLosses> {
        self.epochs.iter().copied().find(|e| e.epoch == epoch)
    }
}

/// Verdict of an epoch monitor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochControl {
    Continue,
    Stop,
}

/// Trains with mini-batch Adam on mean BCE and early stopping on validation
/// loss; returns the parameters of the best validation epoch.
pub fn train(
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    config: &MlpConfig,
    val_x: ArrayView2<f64>,
    val_y: ArrayView2<f64>,
) -> Result<(MlpModel, TrainReport), NnError> {
    train_with_monitor(x, y, config, val_x, val_y, |_, _| EpochControl::Continue)
}

/// [`train`] with a callback receiving `(epoch, validation loss)` after
/// every epoch.
pub fn train_with_monitor<F>(
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    config: &MlpConfig,
    val_x: ArrayView2<f64>,
    val_y: ArrayView2<f64>,
    mut monitor: F,
) -> Result<(MlpModel, TrainReport), NnError>
where
    F: FnMut(usize, f64) -> EpochControl,
{
    config.validate()?;
    let n = x.nrows();
    if n == 0 || val_x.nrows() == 0 {
        return Err(NnError::EmptyData);
    }
    if y.nrows() != n || val_y.nrows() != val_x.nrows() {
        return Err(NnError::Dimension {
            expected: n,
            got: y.nrows(),
        });
    }
    if val_x.ncols() != x.ncols() || val_y.ncols() != y.ncols() {
        return Err(NnError::Dimension {
            expected: x.ncols(),
            got: val_x.ncols(),
        });
    }

    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);

    let mut model = MlpModel::init(x.ncols(), &config.hidden_layers, y.ncols(), &mut init_rng);
    let mut adam = Adam::new(config.learning_rate);
    let mut moments: Vec<Moments> = model
        .param_slices_mut()
        .iter()
        .map(|s| Moments::zeros(s.len()))
        .collect();

    let mut epochs = vec![EpochLosses {
        epoch: 0,
        train_loss: model.loss(x, y),
        val_loss: model.loss(val_x, val_y),
    }];
    let mut best_model = model.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    // reference for the patience counter: last improvement of at least min_delta
    let mut reference = f64::INFINITY;
    let mut since_improvement = 0;
    let mut interrupted = false;
    let mut stopped_epoch = 0;

    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let bx: Array2<f64> = x.select(Axis(0), chunk);
            let by: Array2<f64> = y.select(Axis(0), chunk);
            let (loss, grads) = model.loss_and_gradients(bx.view(), by.view());
            if !loss.is_finite() {
                return Err(NnError::NonFiniteLoss {
                    epoch,
                    detail: format!("batch {b} loss {loss}"),
                });
            }
            adam.tick();
            let gs = grad_slices(&grads);
            for ((p, g), m) in model.param_slices_mut().into_iter().zip(gs).zip(&mut moments) {
                adam.update(p, g, m);
            }
        }
        if !model.is_finite() {
            return Err(NnError::NonFiniteLoss {
                epoch,
                detail: "parameters diverged".into(),
            });
        }
        let train_loss = model.loss(x, y);
        let val_loss = model.loss(val_x, val_y);
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(NnError::NonFiniteLoss {
                epoch,
                detail: format!("train {train_loss}, validation {val_loss}"),
            });
        }
        epochs.push(EpochLosses {
            epoch,
            train_loss,
            val_loss,
        });
        stopped_epoch = epoch;

        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_model = model.clone();
        }
        if reference - val_loss >= config.min_delta || reference.is_infinite() {
            reference = val_loss;
            since_improvement = 0;
        } else {
            since_improvement += 1;
        }

        if monitor(epoch, val_loss) == EpochControl::Stop {
            interrupted = true;
            break;
        }
        if since_improvement >= config.patience {
            break;
        }
    }

    Ok((
        best_model,
        TrainReport {
            epochs,
            best_epoch,
            stopped_epoch,
            best_val_loss: best_val,
            interrupted,
        },
    ))
}
