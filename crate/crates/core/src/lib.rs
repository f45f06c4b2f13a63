//! Quantized network training on the probability simplex: proximal mean-field
//! and its special cases (projected gradient with softmax or sparsemax,
//! proximal ICM, BinaryConnect), with the network engine, data loading and
//! experiment runner they need.

pub mod data;
pub mod error;
pub mod meanfield;
pub mod nn;
pub mod optimizers;
pub mod quantization;
pub mod runner;
pub mod simplex;
pub mod verify;

pub use error::{Error, Result};
pub use nn::{Network, NetworkSpec, Tensor};
pub use optimizers::{AnnealSchedule, InnerOptimizer, Method, MethodConfig, OptimizerState};
pub use quantization::{AuxField, QuantLevels, QuantizedWeights, SimplexField};
pub use runner::{ExperimentConfig, RunSummary};
pub use simplex::{ProbVector, Temperature};
