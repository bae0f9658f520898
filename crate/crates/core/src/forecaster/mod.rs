//! Univariate LSTM regression over windowed close prices.
//!
//! A window of `lookback` scaled closes runs through two stacked LSTM layers
//! with dropout after each, a ReLU dense layer, and a sigmoid scalar head.
//! Training minimizes Huber loss with adaptive-moment updates; gradients come
//! from backpropagation through time (see [`train`]).

mod model;
mod train;

pub use model::{
    load_checkpoint, lstm_cell_forward, save_checkpoint, LstmLayerParams, LstmModel, Mat,
    SampleMasks, CHECKPOINT_VERSION,
};
pub use train::{backward, batch_eval, grid_search, train, BatchEval, Gradients};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::PriceSeries;

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("series {ticker} too short: {len} closes, need at least lookback + 2 = {need}")]
    SeriesTooShort {
        ticker: String,
        len: usize,
        need: usize,
    },
    #[error("degenerate scaler: min {min} >= max {max}")]
    DegenerateScaler { min: f64, max: f64 },
    #[error("dropout rate {0} outside [0, 1)")]
    BadDropoutRate(f64),
    #[error("huber delta must be positive, got {0}")]
    BadDelta(f64),
    #[error("window length {got} does not match lookback {want}")]
    WindowLength { got: usize, want: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("training partition is empty")]
    EmptyTrainPartition,
    #[error("empty hyperparameter grid")]
    EmptyGrid,
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("checkpoint at {path}: {detail}")]
    Checkpoint { path: String, detail: String },
    #[error("checkpoint version {got} unsupported (expected {want})")]
    CheckpointVersion { got: u32, want: u32 },
}

/// Network and training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Days of history per input window.
    #[serde(default = "default_lookback")]
    pub lookback: usize,
    /// Hidden units per LSTM layer.
    #[serde(default = "default_lstm_units")]
    pub lstm_units: usize,
    /// Number of stacked LSTM layers.
    #[serde(default = "default_lstm_layers")]
    pub lstm_layers: usize,
    /// Fraction of activations dropped after each LSTM layer while training.
    #[serde(default = "default_dropout_rate")]
    pub dropout_rate: f64,
    /// Width of the ReLU dense layer before the scalar head.
    #[serde(default = "default_dense_units")]
    pub dense_units: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_huber_delta")]
    pub huber_delta: f64,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Forecast steps ahead; steps beyond 1 iterate one-day predictions.
    #[serde(default = "default_horizon")]
    pub horizon: usize,
}

fn default_lookback() -> usize {
    50
}
fn default_lstm_units() -> usize {
    256
}
fn default_lstm_layers() -> usize {
    2
}
fn default_dropout_rate() -> f64 {
    0.3
}
fn default_dense_units() -> usize {
    256
}
fn default_batch_size() -> usize {
    64
}
fn default_epochs() -> usize {
    100
}
fn default_huber_delta() -> f64 {
    1.0
}
fn default_learning_rate() -> f64 {
    1e-3
}
fn default_seed() -> u64 {
    42
}
fn default_horizon() -> usize {
    1
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            lookback: default_lookback(),
            lstm_units: default_lstm_units(),
            lstm_layers: default_lstm_layers(),
            dropout_rate: default_dropout_rate(),
            dense_units: default_dense_units(),
            batch_size: default_batch_size(),
            epochs: default_epochs(),
            huber_delta: default_huber_delta(),
            learning_rate: default_learning_rate(),
            seed: default_seed(),
            horizon: default_horizon(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ForecastError> {
        let fail = |msg: String| Err(ForecastError::BadConfig(msg));
        if self.lookback == 0 {
            return fail("lookback must be >= 1".into());
        }
        if self.lstm_units == 0 || self.dense_units == 0 {
            return fail("layer widths must be >= 1".into());
        }
        if self.lstm_layers == 0 {
            return fail("lstm_layers must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if self.epochs == 0 {
            return fail("epochs must be >= 1".into());
        }
        if self.huber_delta <= 0.0 {
            return fail(format!("huber_delta {} must be positive", self.huber_delta));
        }
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return fail(format!("learning_rate {} invalid", self.learning_rate));
        }
        if self.horizon == 0 {
            return fail("horizon must be >= 1".into());
        }
        Ok(())
    }
}

/// Min-max price scaler fitted on the training partition only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: f64,
    pub max: f64,
}

impl MinMaxScaler {
    pub fn fit(values: &[f64]) -> Result<Self, ForecastError> {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(max > min) {
            return Err(ForecastError::DegenerateScaler { min, max });
        }
        Ok(Self { min, max })
    }

    /// `(x - min) / (max - min)`; training-range prices land in [0, 1].
    pub fn scale(&self, x: f64) -> f64 {
        (x - self.min) / (self.max - self.min)
    }

    pub fn inverse(&self, y: f64) -> f64 {
        self.min + y * (self.max - self.min)
    }
}

/// Scaled windows and next-day targets with a chronological train/validation
/// boundary. `inputs[k]` holds the `lookback` closes immediately preceding
/// `targets[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    /// Windows `0..split` are the training partition; the rest validate.
    pub split: usize,
    pub scaler: MinMaxScaler,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn train_slices(&self) -> (&[Vec<f64>], &[f64]) {
        (&self.inputs[..self.split], &self.targets[..self.split])
    }

    pub fn val_slices(&self) -> (&[Vec<f64>], &[f64]) {
        (&self.inputs[self.split..], &self.targets[self.split..])
    }
}

/// Slices a price series into `T - lookback` windows with next-day targets,
/// splits chronologically at `split_fraction`, and min-max scales everything
/// with statistics from the training partition alone.
pub fn window(
    prices: &PriceSeries,
    lookback: usize,
    split_fraction: f64,
) -> Result<WindowedDataset, ForecastError> {
    let closes = prices.closes();
    let t = closes.len();
    if lookback == 0 || t < lookback + 2 {
        return Err(ForecastError::SeriesTooShort {
            ticker: prices.ticker().to_string(),
            len: t,
            need: lookback + 2,
        });
    }
    let m = t - lookback;
    // Keep both partitions non-empty.
    let split = ((m as f64 * split_fraction).floor() as usize).clamp(1, m - 1);

    // The training partition touches closes[0 .. split + lookback).
    let scaler = MinMaxScaler::fit(&closes[..split + lookback])?;

    let mut inputs = Vec::with_capacity(m);
    let mut targets = Vec::with_capacity(m);
    for k in 0..m {
        inputs.push(closes[k..k + lookback].iter().map(|&c| scaler.scale(c)).collect());
        targets.push(scaler.scale(closes[k + lookback]));
    }
    Ok(WindowedDataset {
        inputs,
        targets,
        split,
        scaler,
    })
}

/// Inverted dropout: while training, each element is zeroed independently
/// with probability `rate` and survivors scale by `1/(1-rate)`; at inference
/// the input passes through unchanged.
pub fn dropout(
    v: &[f64],
    rate: f64,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, ForecastError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(ForecastError::BadDropoutRate(rate));
    }
    if !training || rate == 0.0 {
        return Ok(v.to_vec());
    }
    let keep = 1.0 - rate;
    Ok(v.iter()
        .map(|&x| {
            if rng.gen::<f64>() < rate {
                0.0
            } else {
                x / keep
            }
        })
        .collect())
}

/// Huber loss of one error: quadratic inside `delta`, linear outside.
pub fn huber_loss(pred: f64, target: f64, delta: f64) -> Result<f64, ForecastError> {
    if delta <= 0.0 {
        return Err(ForecastError::BadDelta(delta));
    }
    let e = pred - target;
    Ok(if e.abs() <= delta {
        0.5 * e * e
    } else {
        delta * (e.abs() - 0.5 * delta)
    })
}

/// d(huber)/d(pred): the error clamped to [-delta, delta].
pub(crate) fn huber_grad(error: f64, delta: f64) -> f64 {
    error.clamp(-delta, delta)
}

/// Per-epoch training and validation metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_mae: f64,
    pub val_loss: f64,
    pub val_mae: f64,
}

/// One entry per completed epoch.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochMetrics>,
}

impl TrainHistory {
    pub fn final_val_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.val_loss)
    }

    /// CSV with header `epoch,train_loss,train_mae,val_loss,val_mae`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_mae,val_loss,val_mae\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.epoch, e.train_loss, e.train_mae, e.val_loss, e.val_mae
            ));
        }
        out
    }
}
