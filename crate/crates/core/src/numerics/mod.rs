//! Dense `f64` tensors, reverse-mode autodiff, the LSTM cell, Adam and
//! feature scalers.

mod graph;
mod lstm;
mod optim;
mod scaler;
mod store;
mod tensor;

pub use graph::{ComputeNode, Gradients, Graph, Var};
pub use lstm::{lstm_cell_forward, LstmVars, LstmWeights};
pub use optim::{clip_global_norm, AdamConfig, OptimizerState};
pub use scaler::{Scaler, ScalerKind};
pub use store::{WeightStore, FORMAT_VERSION, MAGIC};
pub use tensor::Tensor;

use rand::Rng;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("weight file: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(String),
}

/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialization.
pub fn uniform_init<R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}
