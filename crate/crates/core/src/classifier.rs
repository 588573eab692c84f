//! Small convolutional binary classifier over 2-D matrices, shared by the
//! meta-classifiers (signature matrices) and the raw-data baseline
//! (day x half-hour matrices).
//!
//! Rows are first average-pooled down to about `stem_rows`, each column is
//! standardized with statistics from the training matrices, and the result
//! goes through three conv blocks, a mean over rows and a logistic head.

use crate::metrics::roc_auc;
use crate::numerics::{uniform_init, AdamConfig, Graph, NumericsError, OptimizerState, Scaler, ScalerKind, Tensor, Var, WeightStore};
use crate::seed;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ClassifierError {
    #[error("need at least {needed} examples of each class, got {positives} positive and {negatives} negative")]
    TooFewPerClass { needed: usize, positives: usize, negatives: usize },
    #[error("expected a {rows}x{cols} input, got {got:?}")]
    Shape { rows: usize, cols: usize, got: Vec<usize> },
    #[error("invalid classifier config: {0}")]
    Config(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    /// Target row count after the pooling stem.
    pub stem_rows: usize,
    /// Output channels of the three conv blocks.
    pub channels: [usize; 3],
    pub learning_rate: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before a fold stops.
    pub patience: usize,
    pub folds: usize,
    /// The model falls back to the constant training prior unless the
    /// cross-validated AUC exceeds chance by this many null standard
    /// deviations. Negative disables the fallback.
    pub null_z: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            stem_rows: 10,
            channels: [4, 8, 8],
            learning_rate: 0.01,
            l2: 1e-4,
            batch_size: 32,
            max_epochs: 60,
            patience: 8,
            folds: 5,
            null_z: 2.0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |m: &str| Err(ClassifierError::Config(m.into()));
        if self.stem_rows == 0 || self.channels.contains(&0) {
            return bad("stem_rows and channels must be >= 1");
        }
        if !(self.learning_rate > 0.0) || !(self.l2 >= 0.0) {
            return bad("learning rate must be > 0 and l2 >= 0");
        }
        if !self.null_z.is_finite() {
            return bad("null_z must be finite");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.folds < 2 {
            return bad("batch_size and max_epochs must be >= 1, folds >= 2");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvClassifier {
    pub input_rows: usize,
    pub input_cols: usize,
    pub pool: usize,
    /// Per-column standardization after pooling.
    pub scaler: Scaler,
    /// `[weight, bias]` for three conv layers, then head weight and bias.
    pub params: Vec<Tensor>,
    pub config: ClassifierConfig,
    /// Constant output used instead of the network when cross-validation
    /// found no signal.
    pub prior: Option<f64>,
}

/// Outcome of [`train_classifier`].
#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    pub model: ConvClassifier,
    /// AUC of out-of-fold predictions during cross-validation.
    pub cv_auc: f64,
    /// Epoch count selected by early stopping and used for the final fit.
    pub epochs: usize,
}

fn pooled_rows(rows: usize, stem_rows: usize) -> (usize, usize) {
    let pool = (rows / stem_rows).max(1);
    (pool, rows / pool)
}

/// Head input width: last conv channels times columns left after two pools.
fn flat_features(cols: usize, channels: [usize; 3]) -> usize {
    channels[2] * (cols / 4)
}

impl ConvClassifier {
    fn init(rows: usize, cols: usize, scaler: Scaler, config: &ClassifierConfig, seed: u64) -> Result<Self, ClassifierError> {
        let (pool, pr) = pooled_rows(rows, config.stem_rows);
        if pr < 4 || cols < 4 {
            return Err(ClassifierError::Config(format!(
                "{rows}x{cols} input is too small for two 2x2 pools"
            )));
        }
        let mut rng = seed::rng(seed);
        let mut params = Vec::new();
        let mut cin = 1;
        for &co in &config.channels {
            params.push(uniform_init(&[co, cin, 3, 3], cin * 9, &mut rng));
            params.push(uniform_init(&[co], cin * 9, &mut rng));
            cin = co;
        }
        let feat = flat_features(cols, config.channels);
        params.push(uniform_init(&[feat, 1], feat, &mut rng));
        params.push(Tensor::zeros(&[1]));
        Ok(Self {
            input_rows: rows,
            input_cols: cols,
            pool,
            scaler,
            params,
            config: config.clone(),
            prior: None,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|t| t.len()).sum()
    }

    fn check(&self, m: &Tensor) -> Result<(), ClassifierError> {
        if m.shape() != [self.input_rows, self.input_cols] {
            return Err(ClassifierError::Shape {
                rows: self.input_rows,
                cols: self.input_cols,
                got: m.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Pools and standardizes one matrix into the network's input plane.
    fn prepare(&self, m: &Tensor) -> Vec<f64> {
        let pooled = pool_rows(m, self.pool);
        pooled.chunks(self.input_cols).flat_map(|row| self.scaler.apply_row(row)).collect()
    }

    fn forward(&self, g: &mut Graph, vars: &[Var], planes: Vec<f64>, n: usize) -> Result<Var, NumericsError> {
        let pr = self.input_rows / self.pool;
        let mut x = g.constant(Tensor::new(vec![n, 1, pr, self.input_cols], planes)?);
        for layer in 0..3 {
            x = g.conv2d(x, vars[2 * layer], vars[2 * layer + 1])?;
            x = g.relu(x);
            if layer < 2 {
                x = g.avg_pool2d(x, 2, 2)?;
            }
        }
        let flat = g.mean_rows(x)?;
        let logits = g.matmul(flat, vars[6])?;
        g.add_bias(logits, vars[7])
    }

    /// Probability of the positive class for each matrix.
    pub fn predict_proba(&self, inputs: &[&Tensor]) -> Result<Vec<f64>, ClassifierError> {
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(64) {
            let mut planes = Vec::new();
            for m in chunk {
                self.check(m)?;
                planes.extend(self.prepare(m));
            }
            if let Some(p) = self.prior {
                out.extend(std::iter::repeat_n(p, chunk.len()));
                continue;
            }
            let mut g = Graph::new();
            let vars: Vec<Var> = self.params.iter().map(|p| g.constant(p.clone())).collect();
            let logits = self.forward(&mut g, &vars, planes, chunk.len())?;
            out.extend(g.value(logits).data().iter().map(|z| sigmoid(*z)));
        }
        Ok(out)
    }

    pub fn predict_one(&self, input: &Tensor) -> Result<f64, ClassifierError> {
        Ok(self.predict_proba(&[input])?[0])
    }

    pub fn to_store(&self) -> WeightStore {
        let mut s = WeightStore::new();
        for (i, p) in self.params.iter().enumerate() {
            s.insert(format!("param.{i}"), p.clone());
        }
        s.insert_scaler("input", &self.scaler);
        s.insert_scalar("shape.rows", self.input_rows as f64);
        s.insert_scalar("shape.cols", self.input_cols as f64);
        s.insert_scalar("shape.pool", self.pool as f64);
        let c = &self.config;
        s.insert_scalar("cfg.stem_rows", c.stem_rows as f64);
        for (i, ch) in c.channels.iter().enumerate() {
            s.insert_scalar(format!("cfg.channels.{i}"), *ch as f64);
        }
        s.insert_scalar("cfg.learning_rate", c.learning_rate);
        s.insert_scalar("cfg.l2", c.l2);
        s.insert_scalar("cfg.batch_size", c.batch_size as f64);
        s.insert_scalar("cfg.max_epochs", c.max_epochs as f64);
        s.insert_scalar("cfg.patience", c.patience as f64);
        s.insert_scalar("cfg.folds", c.folds as f64);
        s.insert_scalar("cfg.null_z", c.null_z);
        if let Some(p) = self.prior {
            s.insert_scalar("prior", p);
        }
        s
    }

    pub fn from_store(s: &WeightStore) -> Result<Self, ClassifierError> {
        let n = |k: &str| s.scalar(k).map(|v| v as usize);
        let config = ClassifierConfig {
            stem_rows: n("cfg.stem_rows")?,
            channels: [n("cfg.channels.0")?, n("cfg.channels.1")?, n("cfg.channels.2")?],
            learning_rate: s.scalar("cfg.learning_rate")?,
            l2: s.scalar("cfg.l2")?,
            batch_size: n("cfg.batch_size")?,
            max_epochs: n("cfg.max_epochs")?,
            patience: n("cfg.patience")?,
            folds: n("cfg.folds")?,
            null_z: s.scalar("cfg.null_z")?,
        };
        let params = (0..8)
            .map(|i| s.get(&format!("param.{i}")).cloned())
            .collect::<Result<Vec<_>, _>>()?;
        let model = Self {
            input_rows: n("shape.rows")?,
            input_cols: n("shape.cols")?,
            pool: n("shape.pool")?,
            scaler: s.scaler("input")?,
            params,
            config,
            prior: s.scalar("prior").ok(),
        };
        let fresh = Self::init(model.input_rows, model.input_cols, model.scaler.clone(), &model.config, 0)?;
        let shapes_match = fresh.params.iter().zip(&model.params).all(|(a, b)| a.shape() == b.shape());
        if !shapes_match || model.pool != fresh.pool || model.scaler.features() != model.input_cols {
            return Err(ClassifierError::Config("stored classifier tensors do not match its shape".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ClassifierError> {
        Ok(self.to_store().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, ClassifierError> {
        Self::from_store(&WeightStore::load(path)?)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Averages groups of `pool` consecutive rows; trailing rows are dropped.
fn pool_rows(m: &Tensor, pool: usize) -> Vec<f64> {
    let (rows, cols) = (m.shape()[0], m.shape()[1]);
    let out_rows = rows / pool;
    let mut out = vec![0.0; out_rows * cols];
    for r in 0..out_rows * pool {
        let src = &m.data()[r * cols..(r + 1) * cols];
        let dst = &mut out[(r / pool) * cols..(r / pool + 1) * cols];
        for (d, s) in dst.iter_mut().zip(src) {
            *d += s / pool as f64;
        }
    }
    out
}

fn fit_scaler(inputs: &[&Tensor], idx: &[usize], pool: usize) -> Result<Scaler, NumericsError> {
    let cols = inputs[0].shape()[1];
    let rows: Vec<Vec<f64>> = idx
        .iter()
        .flat_map(|i| pool_rows(inputs[*i], pool).chunks(cols).map(|r| r.to_vec()).collect::<Vec<_>>())
        .collect();
    Scaler::fit(ScalerKind::Standard, &rows)
}

struct Fit {
    model: ConvClassifier,
    /// Validation BCE after each epoch (empty without validation data).
    val_curve: Vec<f64>,
    /// Validation probabilities after each epoch.
    val_probs: Vec<Vec<f64>>,
    best_epoch: usize,
}

/// Trains on `train` for up to `epochs`, tracking validation loss on `val`
/// and keeping the weights of the best validation epoch.
fn fit(
    inputs: &[&Tensor],
    targets: &[f64],
    train: &[usize],
    val: &[usize],
    epochs: usize,
    config: &ClassifierConfig,
    seed: u64,
) -> Result<Fit, ClassifierError> {
    let (rows, cols) = (inputs[0].shape()[0], inputs[0].shape()[1]);
    let (pool, _) = pooled_rows(rows, config.stem_rows);
    let scaler = fit_scaler(inputs, train, pool)?;
    let mut model = ConvClassifier::init(rows, cols, scaler, config, seed::derive(seed, 0))?;
    let prepared: Vec<Vec<f64>> = inputs.iter().map(|m| model.prepare(m)).collect();
    let mut opt = OptimizerState::new(AdamConfig::new(config.learning_rate, config.l2), &model.params);
    let mut rng = seed::rng(seed::derive(seed, 1));
    let mut order = train.to_vec();
    let mut val_curve = Vec::new();
    let mut val_probs = Vec::new();
    let (mut best_loss, mut best_epoch, mut best_params) = (f64::INFINITY, epochs, model.params.clone());

    for epoch in 1..=epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let mut g = Graph::new();
            let vars: Vec<Var> = model.params.iter().map(|p| g.param(p.clone())).collect();
            let planes = batch.iter().flat_map(|i| prepared[*i].iter().copied()).collect();
            let logits = model.forward(&mut g, &vars, planes, batch.len())?;
            let ys: Vec<f64> = batch.iter().map(|i| targets[*i]).collect();
            let loss = g.bce_with_logits(logits, &ys)?;
            if !g.value(loss).item().is_finite() {
                return Err(ClassifierError::Diverged(format!(
                    "loss is {} at epoch {epoch}",
                    g.value(loss).item()
                )));
            }
            let mut grads = g.backward(loss)?;
            let list: Vec<Tensor> = vars
                .iter()
                .zip(&model.params)
                .map(|(v, p)| grads.take(*v).unwrap_or_else(|| Tensor::zeros(p.shape())))
                .collect();
            opt.adam_step(&mut model.params, &list)
                .map_err(|e| ClassifierError::Diverged(e.to_string()))?;
        }
        if val.is_empty() {
            continue;
        }
        let refs: Vec<&Tensor> = val.iter().map(|i| inputs[*i]).collect();
        let probs = model.predict_proba(&refs)?;
        let loss = val
            .iter()
            .zip(&probs)
            .map(|(i, p)| {
                let p = p.clamp(1e-12, 1.0 - 1e-12);
                -(targets[*i] * p.ln() + (1.0 - targets[*i]) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / val.len() as f64;
        val_curve.push(loss);
        val_probs.push(probs);
        if loss < best_loss {
            best_loss = loss;
            best_epoch = epoch;
            best_params = model.params.clone();
        } else if epoch - best_epoch >= config.patience {
            break;
        }
    }
    if !val.is_empty() {
        model.params = best_params;
    }
    Ok(Fit {
        model,
        val_curve,
        val_probs,
        best_epoch,
    })
}

/// Stratified fold assignment: each class is shuffled and dealt round-robin.
fn stratified_folds(labels: &[bool], folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = seed::rng(seed);
    let mut out = vec![Vec::new(); folds];
    let mut k = 0;
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|i| labels[*i] == class).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            out[k % folds].push(i);
            k += 1;
        }
    }
    for f in &mut out {
        f.sort_unstable();
    }
    out
}

/// Minimum examples of each class [`train_classifier`] accepts.
pub const MIN_PER_CLASS: usize = 2;

/// Standard deviation of the AUC of an uninformative scorer.
pub fn null_auc_sd(positives: usize, negatives: usize) -> f64 {
    let (p, n) = (positives as f64, negatives as f64);
    ((p + n + 1.0) / (12.0 * p * n)).sqrt()
}

/// Trains with k-fold cross-validated early stopping. Every fold records its
/// best validation epoch and the median of those is the shared epoch count.
/// `cv_auc` scores the out-of-fold predictions at that shared epoch, and the
/// final model is refit on all examples for that many epochs. When `cv_auc`
/// is not `null_z` null deviations above one half, the model predicts the
/// training prior instead.
pub fn train_classifier(
    inputs: &[&Tensor],
    labels: &[bool],
    config: &ClassifierConfig,
    seed: u64,
) -> Result<TrainedClassifier, ClassifierError> {
    config.validate()?;
    let positives = labels.iter().filter(|l| **l).count();
    let negatives = labels.len() - positives;
    if positives < MIN_PER_CLASS || negatives < MIN_PER_CLASS || inputs.len() != labels.len() {
        return Err(ClassifierError::TooFewPerClass {
            needed: MIN_PER_CLASS,
            positives,
            negatives,
        });
    }
    let shape = inputs[0].shape().to_vec();
    if shape.len() != 2 {
        return Err(ClassifierError::Shape {
            rows: 0,
            cols: 0,
            got: shape,
        });
    }
    if let Some(m) = inputs.iter().find(|m| m.shape() != shape.as_slice()) {
        return Err(ClassifierError::Shape {
            rows: shape[0],
            cols: shape[1],
            got: m.shape().to_vec(),
        });
    }
    let targets: Vec<f64> = labels.iter().map(|l| if *l { 1.0 } else { 0.0 }).collect();
    let folds = config.folds.min(positives).min(negatives);
    let assignment = stratified_folds(labels, folds, seed::derive(seed, 100));

    let jobs: Vec<usize> = (0..folds).collect();
    let fits = crate::par_map(&jobs, |k| {
        let val = &assignment[*k];
        let train: Vec<usize> = (0..labels.len()).filter(|i| val.binary_search(i).is_err()).collect();
        fit(
            inputs,
            &targets,
            &train,
            val,
            config.max_epochs,
            config,
            seed::derive(seed, *k as u64 + 1),
        )
    });
    let fits = fits.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut best_epochs: Vec<usize> = fits.iter().map(|f| f.best_epoch).collect();
    best_epochs.sort_unstable();
    let epochs = best_epochs[best_epochs.len() / 2];
    let mut oof = vec![0.0; labels.len()];
    for (k, f) in fits.iter().enumerate() {
        log::debug!("fold {k}: best epoch {} of {}", f.best_epoch, f.val_curve.len());
        let at = epochs.min(f.val_probs.len()) - 1;
        for (i, p) in assignment[k].iter().zip(&f.val_probs[at]) {
            oof[*i] = *p;
        }
    }
    let cv_auc = roc_auc(&oof, labels).map_err(|e| ClassifierError::Config(e.to_string()))?;

    let all: Vec<usize> = (0..labels.len()).collect();
    let mut model = fit(inputs, &targets, &all, &[], epochs, config, seed::derive(seed, 0))?.model;
    if config.null_z >= 0.0 && cv_auc <= 0.5 + config.null_z * null_auc_sd(positives, negatives) {
        log::info!("cv auc {cv_auc:.3} is within chance; predicting the prior");
        model.prior = Some(positives as f64 / labels.len() as f64);
    }
    Ok(TrainedClassifier { model, cv_auc, epochs })
}
