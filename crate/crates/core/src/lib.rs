//! Metadata-weighted encoding ensembles for crowdsourced annotations.
//!
//! The numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the experiment pipeline uses.

pub mod base_learners;
pub mod baselines;
pub mod cohort;
pub mod config;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod evaluation;
pub mod metafeatures;
pub mod optim;
pub mod persist;
mod scalar;
pub mod synthgen;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type ObservationMeta = metafeatures::ObservationMeta<f64>;
pub type VariantWeight = metafeatures::VariantWeight<f64>;
pub type EncodingVector = ensemble::EncodingVector<f64>;
pub type EnsembleModel = ensemble::EnsembleModel<f64>;
pub type BaseLearner = base_learners::BaseLearner<f64>;
pub type MaceModel = baselines::MaceModel<f64>;
pub type LogisticFit = cohort::LogisticFit<f64>;
