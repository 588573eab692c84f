use super::{ForecastError, ForecastHyperparams, TimeFeatures, TIME_FEATURES};
use crate::numerics::{lstm_cell_forward, uniform_init, LstmWeights, Scaler, Tensor, WeightStore};
use crate::seed;
use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Two-branch forecaster: an LSTM over the scaled consumption window and a
/// dense `tanh` layer over the target step's time encoding, concatenated
/// into a linear head that predicts the next scaled reading.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastModel {
    pub lstm: LstmWeights,
    /// `[TIME_FEATURES, fc]`
    pub time_weight: Tensor,
    pub time_bias: Tensor,
    /// `[lstm + fc, 1]`
    pub head_weight: Tensor,
    pub head_bias: Tensor,
    pub scaler: Scaler,
    pub hyperparams: ForecastHyperparams,
    pub meter_id: Option<u64>,
}

/// JSON sidecar written next to a persisted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCard {
    pub hyperparams: ForecastHyperparams,
    pub meter_id: Option<u64>,
    pub test_mae: Option<f64>,
    pub seed: u64,
}

impl ForecastModel {
    /// Closed-form trainable parameter count.
    pub fn param_count_for(lstm: usize, fc: usize) -> usize {
        LstmWeights::param_count(1, lstm) + (TIME_FEATURES * fc + fc) + (lstm + fc + 1)
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn param_bytes(&self) -> usize {
        self.param_count() * std::mem::size_of::<f64>()
    }

    pub fn window(&self) -> usize {
        self.hyperparams.window
    }

    /// Trainable tensors in a fixed order.
    pub fn params(&self) -> [&Tensor; 7] {
        [
            &self.lstm.input,
            &self.lstm.recurrent,
            &self.lstm.bias,
            &self.time_weight,
            &self.time_bias,
            &self.head_weight,
            &self.head_bias,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 7] {
        [
            &mut self.lstm.input,
            &mut self.lstm.recurrent,
            &mut self.lstm.bias,
            &mut self.time_weight,
            &mut self.time_bias,
            &mut self.head_weight,
            &mut self.head_bias,
        ]
    }

    /// Output in scaled units for an already-scaled window.
    pub fn forward_scaled(&self, scaled_window: &[f64], target_time: &TimeFeatures) -> Result<f64, ForecastError> {
        let hidden = self.lstm.hidden();
        let mut h = vec![0.0; hidden];
        let mut c = vec![0.0; hidden];
        for x in scaled_window {
            let (hn, cn) = lstm_cell_forward(std::slice::from_ref(x), &h, &c, &self.lstm)?;
            h = hn;
            c = cn;
        }
        let fc = self.time_bias.len();
        let tw = self.time_weight.data();
        let mut out = self.head_bias.item();
        let head = self.head_weight.data();
        for (j, hv) in h.iter().enumerate() {
            out += head[j] * hv;
        }
        for j in 0..fc {
            let mut z = self.time_bias.data()[j];
            for (k, f) in target_time.0.iter().enumerate() {
                z += f * tw[k * fc + j];
            }
            out += head[hidden + j] * z.tanh();
        }
        Ok(out)
    }

    /// Next-step consumption in kWh. `times` covers the window plus the
    /// predicted step.
    pub fn predict(&self, window: &[f64], times: &[NaiveDateTime]) -> Result<f64, ForecastError> {
        let w = self.window();
        if window.len() != w {
            return Err(ForecastError::Shape(format!(
                "window has {} values, model expects {w}",
                window.len()
            )));
        }
        if times.len() != w + 1 {
            return Err(ForecastError::Shape(format!("{} timestamps, model expects {}", times.len(), w + 1)));
        }
        let target = TimeFeatures::from_datetime(times[w]);
        let scaled: Vec<f64> = window.iter().map(|v| self.scaler.apply(0, *v)).collect();
        let out = self.forward_scaled(&scaled, &target)?;
        Ok(self.scaler.invert(0, out))
    }

    pub fn to_store(&self) -> WeightStore {
        let mut s = WeightStore::new();
        s.insert("lstm.input", self.lstm.input.clone());
        s.insert("lstm.recurrent", self.lstm.recurrent.clone());
        s.insert("lstm.bias", self.lstm.bias.clone());
        s.insert("time.weight", self.time_weight.clone());
        s.insert("time.bias", self.time_bias.clone());
        s.insert("head.weight", self.head_weight.clone());
        s.insert("head.bias", self.head_bias.clone());
        s.insert_scaler("scaler", &self.scaler);
        let hp = &self.hyperparams;
        s.insert_scalar("hp.learning_rate", hp.learning_rate);
        s.insert_scalar("hp.l2", hp.l2);
        s.insert_scalar("hp.lstm_nodes", hp.lstm_nodes as f64);
        s.insert_scalar("hp.fc_nodes", hp.fc_nodes as f64);
        s.insert_scalar("hp.window", hp.window as f64);
        s.insert_scalar("hp.epochs", hp.epochs as f64);
        s.insert_scalar("hp.batch_size", hp.batch_size as f64);
        s.insert_scalar("hp.max_windows_per_epoch", hp.max_windows_per_epoch as f64);
        s.insert_scalar("hp.grad_clip", hp.grad_clip);
        if let Some(id) = self.meter_id {
            s.insert_scalar("meter_id", id as f64);
        }
        s
    }

    pub fn from_store(s: &WeightStore) -> Result<Self, ForecastError> {
        let scaler = s.scaler("scaler")?;
        let count = |name: &str| s.scalar(name).map(|v| v as usize);
        let hyperparams = ForecastHyperparams {
            learning_rate: s.scalar("hp.learning_rate")?,
            l2: s.scalar("hp.l2")?,
            lstm_nodes: count("hp.lstm_nodes")?,
            fc_nodes: count("hp.fc_nodes")?,
            scaler: scaler.kind,
            window: count("hp.window")?,
            epochs: count("hp.epochs")?,
            batch_size: count("hp.batch_size")?,
            max_windows_per_epoch: count("hp.max_windows_per_epoch")?,
            grad_clip: s.scalar("hp.grad_clip")?,
        };
        let model = Self {
            lstm: LstmWeights {
                input: s.get("lstm.input")?.clone(),
                recurrent: s.get("lstm.recurrent")?.clone(),
                bias: s.get("lstm.bias")?.clone(),
            },
            time_weight: s.get("time.weight")?.clone(),
            time_bias: s.get("time.bias")?.clone(),
            head_weight: s.get("head.weight")?.clone(),
            head_bias: s.get("head.bias")?.clone(),
            scaler,
            hyperparams,
            meter_id: s.scalar("meter_id").ok().map(|v| v as u64),
        };
        model.check_shapes()?;
        Ok(model)
    }

    fn check_shapes(&self) -> Result<(), ForecastError> {
        let (h, f) = (self.hyperparams.lstm_nodes, self.hyperparams.fc_nodes);
        let ok = self.lstm.input.shape() == [1, 4 * h]
            && self.lstm.recurrent.shape() == [h, 4 * h]
            && self.lstm.bias.shape() == [4 * h]
            && self.time_weight.shape() == [TIME_FEATURES, f]
            && self.time_bias.shape() == [f]
            && self.head_weight.shape() == [h + f, 1]
            && self.head_bias.shape() == [1];
        if !ok {
            return Err(ForecastError::Shape("stored tensors do not match hyperparameters".into()));
        }
        if self.params().iter().any(|t| !t.is_finite()) {
            return Err(ForecastError::Shape("non-finite weights".into()));
        }
        Ok(())
    }

    /// Writes `<path>` (weight container) and `<path>.json` (sidecar).
    pub fn save(&self, path: &Path, card: &ModelCard) -> Result<(), ForecastError> {
        self.to_store().save(path)?;
        let json = serde_json::to_string_pretty(card).expect("card serializes");
        std::fs::write(sidecar_path(path), json).map_err(|e| ForecastError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, ForecastError> {
        Self::from_store(&WeightStore::load(path)?)
    }
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

pub fn load_card(path: &Path) -> Result<ModelCard, ForecastError> {
    let text = std::fs::read_to_string(sidecar_path(path)).map_err(|e| ForecastError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| ForecastError::Io(e.to_string()))
}

/// Fresh model with seeded uniform initialization and an identity scaler.
pub fn build_model(hp: &ForecastHyperparams, seed: u64) -> Result<ForecastModel, ForecastError> {
    hp.validate()?;
    let mut rng = seed::rng(seed);
    let (h, f) = (hp.lstm_nodes, hp.fc_nodes);
    let lstm = LstmWeights::init(1, h, &mut rng);
    let time_weight = uniform_init(&[TIME_FEATURES, f], TIME_FEATURES, &mut rng);
    let time_bias = uniform_init(&[f], TIME_FEATURES, &mut rng);
    let head_weight = uniform_init(&[h + f, 1], h + f, &mut rng);
    let head_bias = uniform_init(&[1], h + f, &mut rng);
    let scaler = Scaler::from_parts(hp.scaler, vec![0.0], vec![1.0])?;
    Ok(ForecastModel {
        lstm,
        time_weight,
        time_bias,
        head_weight,
        head_bias,
        scaler,
        hyperparams: hp.clone(),
        meter_id: None,
    })
}
