use super::{build_model, ForecastError, ForecastHyperparams, ForecastModel, TimeFeatures, TIME_FEATURES};
use crate::dataio::HouseholdRecord;
use crate::numerics::{clip_global_norm, AdamConfig, Graph, LstmVars, NumericsError, OptimizerState, Scaler, Tensor};
use crate::seed;
use rand::seq::SliceRandom;

/// Minimum readings beyond the window needed to train and evaluate.
pub const MIN_EXTRA_READINGS: usize = 10;

/// Windows used to measure train MSE before and after training.
const EVAL_WINDOWS: usize = 256;

#[derive(Debug, Clone)]
pub struct TrainedForecaster {
    pub model: ForecastModel,
    /// Held-out MAE in kWh.
    pub test_mae: f64,
    /// Mean scaled MSE per epoch.
    pub history: Vec<f64>,
    pub initial_train_mse: f64,
    pub final_train_mse: f64,
}

/// Sliding next-step windows over one series, split chronologically.
struct Windows {
    scaled: Vec<f64>,
    raw: Vec<f64>,
    times: Vec<TimeFeatures>,
    w: usize,
    /// Window start indices; targets sit at `start + w`.
    train: Vec<usize>,
    test: Vec<usize>,
}

impl Windows {
    fn build(record: &HouseholdRecord, hp: &ForecastHyperparams) -> Result<(Self, Scaler), ForecastError> {
        let w = hp.window;
        let n = record.len();
        if n < w + MIN_EXTRA_READINGS {
            return Err(ForecastError::TooShort {
                len: n,
                needed: w + MIN_EXTRA_READINGS,
            });
        }
        // 80/20 over the windows in time order, so short series still keep
        // a test tail.
        let total = n - w;
        let n_train = (total * 4) / 5;
        let train: Vec<usize> = (0..n_train).collect();
        let test: Vec<usize> = (n_train..total).collect();
        // The scaler only sees readings that train windows touch.
        let scaler = Scaler::fit_series(hp.scaler, &record.readings[..n_train + w])?;
        let scaled = record.readings.iter().map(|v| scaler.apply(0, *v)).collect();
        let times = (0..n).map(|i| TimeFeatures::from_datetime(record.timestamp(i))).collect();
        Ok((
            Self {
                scaled,
                raw: record.readings.clone(),
                times,
                w,
                train,
                test,
            },
            scaler,
        ))
    }

    fn input(&self, start: usize) -> &[f64] {
        &self.scaled[start..start + self.w]
    }

    fn target_time(&self, start: usize) -> &TimeFeatures {
        &self.times[start + self.w]
    }
}

fn scaled_mse(model: &ForecastModel, win: &Windows, starts: &[usize]) -> Result<f64, ForecastError> {
    let mut acc = 0.0;
    for &s in starts {
        let p = model.forward_scaled(win.input(s), win.target_time(s))?;
        let d = p - win.scaled[s + win.w];
        acc += d * d;
    }
    Ok(acc / starts.len() as f64)
}

/// Evenly spaced subset of the training windows.
fn eval_subset(train: &[usize]) -> Vec<usize> {
    if train.len() <= EVAL_WINDOWS {
        return train.to_vec();
    }
    (0..EVAL_WINDOWS).map(|i| train[i * train.len() / EVAL_WINDOWS]).collect()
}

/// One minibatch forward/backward pass; returns the loss and gradients in
/// [`ForecastModel::params`] order.
fn batch_gradients(model: &ForecastModel, win: &Windows, batch: &[usize]) -> Result<(f64, Vec<Tensor>), NumericsError> {
    let b = batch.len();
    let hd = model.lstm.hidden();
    let mut g = Graph::new();
    let lstm = LstmVars::register(&mut g, &model.lstm);
    let tw = g.param(model.time_weight.clone());
    let tb = g.param(model.time_bias.clone());
    let hw = g.param(model.head_weight.clone());
    let hb = g.param(model.head_bias.clone());

    let mut h = g.constant(Tensor::zeros(&[b, hd]));
    let mut c = g.constant(Tensor::zeros(&[b, hd]));
    for t in 0..win.w {
        let xs = batch.iter().map(|s| win.scaled[s + t]).collect();
        let x = g.constant(Tensor::matrix(b, 1, xs)?);
        (h, c) = lstm.step(&mut g, x, h, c)?;
    }
    let feats = batch.iter().flat_map(|s| win.target_time(*s).0).collect();
    let tf = g.constant(Tensor::matrix(b, TIME_FEATURES, feats)?);
    let z = g.matmul(tf, tw)?;
    let z = g.add_bias(z, tb)?;
    let z = g.tanh(z);
    let joined = g.concat_cols(h, z)?;
    let out = g.matmul(joined, hw)?;
    let out = g.add_bias(out, hb)?;
    let ys = batch.iter().map(|s| win.scaled[s + win.w]).collect();
    let y = g.constant(Tensor::matrix(b, 1, ys)?);
    let loss = g.mse(out, y)?;

    let mut grads = g.backward(loss)?;
    let vars = [lstm.input, lstm.recurrent, lstm.bias, tw, tb, hw, hb];
    let list = vars
        .iter()
        .zip(model.params())
        .map(|(v, p)| grads.take(*v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    Ok((g.value(loss).item(), list))
}

/// Trains a forecaster on one household's series with MSE on next-step
/// prediction and reports the held-out MAE in kWh.
pub fn train_forecaster(record: &HouseholdRecord, hp: &ForecastHyperparams, seed: u64) -> Result<TrainedForecaster, ForecastError> {
    hp.validate()?;
    let (win, scaler) = Windows::build(record, hp)?;
    let mut model = build_model(hp, seed::derive(seed, 0))?;
    model.scaler = scaler;
    model.meter_id = Some(record.meter_id);

    let diverged = |epoch: usize, detail: String| ForecastError::Diverged {
        epoch,
        hyperparams: hp.summary(),
        detail,
    };

    let eval = eval_subset(&win.train);
    let initial_train_mse = scaled_mse(&model, &win, &eval)?;

    let owned: Vec<Tensor> = model.params().into_iter().cloned().collect();
    let mut opt = OptimizerState::new(AdamConfig::new(hp.learning_rate, hp.l2), &owned);
    let mut rng = seed::rng(seed::derive(seed, 1));
    let mut order = win.train.clone();
    let per_epoch = match hp.max_windows_per_epoch {
        0 => order.len(),
        m => m.min(order.len()),
    };
    let mut history = Vec::with_capacity(hp.epochs);

    for epoch in 0..hp.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for batch in order[..per_epoch].chunks(hp.batch_size) {
            let (loss, mut grads) = batch_gradients(&model, &win, batch)?;
            if !loss.is_finite() {
                return Err(diverged(epoch, format!("loss is {loss}")));
            }
            if hp.grad_clip > 0.0 {
                clip_global_norm(&mut grads, hp.grad_clip);
            }
            let mut params: Vec<Tensor> = model.params().into_iter().cloned().collect();
            match opt.adam_step(&mut params, &grads) {
                Ok(()) => {}
                Err(NumericsError::NonFinite(msg)) => return Err(diverged(epoch, msg)),
                Err(e) => return Err(e.into()),
            }
            if params.iter().any(|p| !p.is_finite()) {
                return Err(diverged(epoch, "non-finite weights".into()));
            }
            for (dst, src) in model.params_mut().into_iter().zip(params) {
                *dst = src;
            }
            total += loss * batch.len() as f64;
            count += batch.len();
        }
        let mean = total / count as f64;
        log::debug!("meter {} epoch {epoch}: mse {mean:.6}", record.meter_id);
        history.push(mean);
    }

    let final_train_mse = scaled_mse(&model, &win, &eval)?;
    if !final_train_mse.is_finite() {
        return Err(diverged(hp.epochs, "final train loss is not finite".into()));
    }

    let mut abs = 0.0;
    for &s in &win.test {
        let p = model.scaler.invert(0, model.forward_scaled(win.input(s), win.target_time(s))?);
        abs += (p - win.raw[s + win.w]).abs();
    }
    let test_mae = abs / win.test.len() as f64;
    if !test_mae.is_finite() {
        return Err(diverged(hp.epochs, "test predictions are not finite".into()));
    }

    Ok(TrainedForecaster {
        model,
        test_mae,
        history,
        initial_train_mse,
        final_train_mse,
    })
}
