//! Hierarchical generative model of self-tracked menstrual cycle lengths
//! with latent skipped-tracking counts: simulation, Monte-Carlo
//! empirical-Bayes inference of population hyperparameters, online
//! per-user posterior-predictive prediction, skip posteriors, and an
//! evaluation harness with summary-statistic baselines.

pub mod cli;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod inference;
pub mod math;
pub mod model;
pub mod predict;
pub mod quadrature;
pub mod rng;
pub mod simulate;

pub use data::{CycleHistory, Dataset};
pub use error::{ModelError, Result};
pub use model::{Hyperparameters, ModelConfig, UserParameters};
