//! Conditional tabular GAN for label rebalancing.
//!
//! Continuous columns are encoded with a per-column Gaussian mixture
//! ([`ModeNormalizer`]), discrete columns one-hot. The generator is trained
//! with conditional vectors drawn by log-frequency so rare categories are
//! seen often, and [`generate`] turns a [`BalancePlan`] into rows that
//! satisfy their condition exactly by rejection.

mod balance;
mod cond;
mod gan;
mod generate;
mod gmm;
pub mod nets;
mod transformer;

pub use balance::{equalizing_budget, make_balance_plan, BalancePlan, PlanEntry};
pub use cond::{CondSampler, CondVector};
pub use gan::{train_gan, EpochLoss, GanConfig, TrainedGan, MIN_STEPS_PER_EPOCH, MIN_TRAINING_ROWS};
pub use generate::{generate, EntryStats, GenerationManifest, GenerationOutput};
pub use gmm::{Mode, ModeNormalizer, DEFAULT_MAX_MODES, DEFAULT_WEIGHT_THRESHOLD, MIN_FIT_VALUES};
pub use transformer::{Activation, ColumnTransform, DataTransformer, DiscreteColumn, Span};

#[derive(Debug, thiserror::Error)]
pub enum DatagenError {
    #[error("column {column}: need at least {MIN_FIT_VALUES} values to fit modes, got {got}")]
    TooFewValues { column: String, got: usize },
    #[error("column {0} contains non-finite values")]
    NonFinite(String),
    #[error("row {row}: missing or mistyped value in column {column}")]
    Cell { row: usize, column: String },
    #[error("column {column}: category {value:?} was not seen during fitting")]
    UnseenCategory { column: String, value: String },
    #[error("need at least {need} training rows, got {got}")]
    TooFewRows { got: usize, need: usize },
    #[error("invalid GAN configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
    #[error("{0} is not a discrete column of the trained model")]
    UnknownColumn(String),
    #[error("plan entry {0} does not name a label column")]
    NotLabel(String),
}
