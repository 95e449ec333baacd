//! Building energy-retrofit recommendation toolkit.
//!
//! A multi-label MLP maps a dwelling's EPC-style features to four retrofit
//! categories. Around it sit the pieces needed to make the recommendations
//! trustworthy: Shapley attributions ([`explain`]), a conditional tabular GAN
//! for class-imbalance repair ([`datagen`]), synthetic-data quality scoring
//! ([`quality`]) and TPE hyperparameter search ([`hpo`]).

pub mod artifact;
pub mod datagen;
pub mod explain;
pub mod features;
pub mod hpo;
pub mod fixture;
pub mod ingest;
pub mod measures;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod quality;
pub mod schema;
pub mod service;

pub use schema::{BuildingRecord, Cell, ColumnKind, ColumnRole, ColumnSpec, DatasetSchema, RetrofitLabels};
