//! Autoregressive quantum generative model for calorimeter-style images.
//!
//! A count-sketch of the pixels generated so far conditions a small shared
//! variational circuit; its Pauli expectations are decoded block by block
//! with closed-form ridge maps, and a post-hoc residual sampler restores the
//! spread a linear decoder cannot express.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Test oracles spell out index sums the way the formulas read.
#![cfg_attr(test, allow(clippy::needless_range_loop))]

pub mod baselines;
pub mod blocks;
pub mod config;
pub mod data;
pub mod decoder;
pub mod error;
pub mod evaluation;
pub mod generation;
pub mod model;
pub mod quantum;
pub mod residual;
pub mod rng;
pub mod sketch;
pub mod theory;
pub mod training;

pub use nalgebra;

pub use blocks::BlockPartition;
pub use config::RunConfig;
pub use data::{Dataset, ShowerRecipe};
pub use error::{QfanError, Result};
pub use generation::ModelBundle;
pub use model::{FeatureKind, Model, ModelConfig};
pub use quantum::{CircuitSpec, FeatureVector, Readout, Theta};
pub use training::TrainConfig;
