//! Joint latent variational autoencoder for contextual anomaly detection.

pub mod baselines;
pub mod data;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod robustness;
pub mod scoring;
pub mod training;

pub use error::{Error, Result};
pub use numerics::{DenseMatrix, Scalar};

/// Double-precision aliases used throughout the pipeline.
pub type Matrix = DenseMatrix<f64>;
pub type Params = model::JlvaeParams<f64>;
