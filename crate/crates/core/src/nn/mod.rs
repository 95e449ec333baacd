//! Multi-layer perceptron for multi-label classification: ReLU hidden
//! layers, sigmoid outputs, mean binary cross-entropy, Adam and early
//! stopping.

mod adam;
mod gradcheck;
mod loss;
mod mlp;
mod train;

use thiserror::Error;

pub use adam::{Adam, Moments};
pub use gradcheck::{gradient_check, GradCheck, FD_STEP};
pub use loss::{bce_loss, bce_loss_matrix, sigmoid, BCE_EPSILON};
pub use mlp::{as_row, DenseLayer, LayerGrad, MlpModel};
pub use train::{
    train, train_with_monitor, EpochControl, EpochLosses, MlpConfig, TrainReport,
    MAX_HIDDEN_LAYERS, MIN_HIDDEN_LAYERS,
};

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("input contains non-finite values")]
    NonFiniteInput,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training and validation sets must be non-empty")]
    EmptyData,
    #[error("loss became non-finite at epoch {epoch}: {detail}")]
    NonFiniteLoss { epoch: usize, detail: String },
}
