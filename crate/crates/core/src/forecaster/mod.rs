//! Personalized next-step load forecaster: architecture, training,
//! hyperparameter search and the model-size sweep.

mod model;
mod search;
mod sweep;
mod train;

pub use model::{build_model, load_card, sidecar_path, ForecastModel, ModelCard};
pub use search::{random_search, SearchOutcome, SearchSpace, Trial};
pub use sweep::{size_label, size_sweep, write_sweep_csv, SweepRow, BASE_PRESET, DEFAULT_SWEEP_SIZES};
pub use train::{train_forecaster, TrainedForecaster};

use crate::numerics::{NumericsError, ScalerKind};
use chrono::{Datelike, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

#[derive(Debug, thiserror::Error)]
pub enum ForecastError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid hyperparameters: {0}")]
    Hyperparams(String),
    #[error("series of {len} readings is too short (need {needed})")]
    TooShort { len: usize, needed: usize },
    #[error("training diverged at epoch {epoch} with hyperparameters {hyperparams}: {detail}")]
    Diverged { epoch: usize, hyperparams: String, detail: String },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastHyperparams {
    pub learning_rate: f64,
    pub l2: f64,
    pub lstm_nodes: usize,
    pub fc_nodes: usize,
    pub scaler: ScalerKind,
    /// Input window length `w`.
    pub window: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Training windows drawn per epoch; 0 uses every window.
    pub max_windows_per_epoch: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
}

impl Default for ForecastHyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 5e-3,
            l2: 1e-5,
            lstm_nodes: 32,
            fc_nodes: 64,
            scaler: ScalerKind::MinMax,
            window: 48,
            epochs: 30,
            batch_size: 64,
            max_windows_per_epoch: 1024,
            grad_clip: 1.0,
        }
    }
}

impl ForecastHyperparams {
    pub fn validate(&self) -> Result<(), ForecastError> {
        let bad = |m: &str| Err(ForecastError::Hyperparams(m.to_string()));
        if self.lstm_nodes == 0 || self.fc_nodes == 0 {
            return bad("lstm_nodes and fc_nodes must be >= 1");
        }
        if self.window < 2 {
            return bad("window must be >= 2");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be > 0");
        }
        if !(self.l2 >= 0.0) || !(self.grad_clip >= 0.0) {
            return bad("l2 and grad_clip must be >= 0");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be >= 1");
        }
        Ok(())
    }

    /// Same hyperparameters with a different architecture size.
    pub fn with_size(&self, lstm_nodes: usize, fc_nodes: usize) -> Self {
        Self {
            lstm_nodes,
            fc_nodes,
            ..self.clone()
        }
    }

    pub fn summary(&self) -> String {
        serde_json::to_string(self).expect("hyperparams serialize")
    }
}

pub const TIME_FEATURES: usize = 5;

/// Cyclic time encoding: half-hour of day and day of week as sin/cos pairs,
/// plus a weekend flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeFeatures(pub [f64; TIME_FEATURES]);

impl TimeFeatures {
    pub fn from_datetime(t: NaiveDateTime) -> Self {
        let slot = (t.hour() * 2 + t.minute() / 30) as f64;
        let dow = t.weekday().num_days_from_monday() as f64;
        let a = TAU * slot / 48.0;
        let b = TAU * dow / 7.0;
        let weekend = if dow >= 5.0 { 1.0 } else { 0.0 };
        Self([a.sin(), a.cos(), b.sin(), b.cos(), weekend])
    }
}
