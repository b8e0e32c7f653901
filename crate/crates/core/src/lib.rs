//! Compiler-selection harness for loop-nest kernels.
//!
//! The pipeline profiles a baseline build of every kernel, normalizes the
//! hardware counters per kilo instruction, labels each kernel with the
//! optimizer that produced its fastest code, trains a random forest on those
//! labels and reports how much speedup the predictions buy over each
//! individual optimizer.
//!
//! The learning and metric code is generic over the feature scalar (see
//! [`Scalar`]); the aliases below pin the common `f64` instantiation.

pub mod config;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod forest;
pub mod harness;
pub mod profiling;
pub mod scalar;
pub mod synthetic;
mod tabular;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Random forest over `f64` features, the default used by the pipeline.
pub type Forest = forest::RandomForestModel<f64>;
/// Random forest over `f32` features.
pub type Forest32 = forest::RandomForestModel<f32>;
/// Single decision tree over `f64` features.
pub type Tree = forest::DecisionTree<f64>;
/// PKI feature vector with `f64` storage.
pub type Features = profiling::FeatureVector<f64>;
