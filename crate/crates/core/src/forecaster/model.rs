//! Model parameters, the forward pass, and checkpoint I/O.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ForecastError, MinMaxScaler, ModelConfig};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Uniform init on (-bound, bound).
    fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Self {
        Self {
            rows,
            cols,
            data: (0..rows * cols)
                .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * bound)
                .collect(),
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// `out += self * x`
    pub fn matvec_add(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let mut acc = 0.0;
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            out[r] += acc;
        }
    }

    /// `out += self^T * y`
    pub fn matvec_t_add(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let yr = y[r];
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * yr;
            }
        }
    }
}

/// Gate parameters for one LSTM layer. Rows of `w_ih`/`w_hh` and entries of
/// `bias` stack the four gates in the order input, forget, cell, output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayerParams {
    /// 4H x input_width
    pub w_ih: Mat,
    /// 4H x H
    pub w_hh: Mat,
    /// 4H
    pub bias: Vec<f64>,
}

impl LstmLayerParams {
    pub fn hidden(&self) -> usize {
        self.w_hh.cols
    }

    pub fn input_width(&self) -> usize {
        self.w_ih.cols
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Gate activations and prior state for one timestep, kept for
/// backpropagation through time.
#[derive(Debug, Clone)]
pub(crate) struct CellStep {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    /// tanh of the updated cell state.
    pub tanh_c: Vec<f64>,
}

impl CellStep {
    pub fn h_new(&self) -> Vec<f64> {
        self.o
            .iter()
            .zip(&self.tanh_c)
            .map(|(o, tc)| o * tc)
            .collect()
    }

    pub fn c_new(&self) -> Vec<f64> {
        self.f
            .iter()
            .zip(&self.c_prev)
            .zip(self.i.iter().zip(&self.g))
            .map(|((f, cp), (i, g))| f * cp + i * g)
            .collect()
    }
}

pub(crate) fn cell_step(
    params: &LstmLayerParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> CellStep {
    let h = params.hidden();
    let mut z = params.bias.clone();
    params.w_ih.matvec_add(x, &mut z);
    params.w_hh.matvec_add(h_prev, &mut z);

    let mut step = CellStep {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        i: vec![0.0; h],
        f: vec![0.0; h],
        g: vec![0.0; h],
        o: vec![0.0; h],
        tanh_c: vec![0.0; h],
    };
    for k in 0..h {
        step.i[k] = sigmoid(z[k]);
        step.f[k] = sigmoid(z[h + k]);
        step.g[k] = z[2 * h + k].tanh();
        step.o[k] = sigmoid(z[3 * h + k]);
        let c_new = step.f[k] * c_prev[k] + step.i[k] * step.g[k];
        step.tanh_c[k] = c_new.tanh();
    }
    step
}

/// One LSTM cell update: input/forget/output gates through the logistic
/// sigmoid, candidate cell through tanh, then
/// `c_t = f o c_prev + i o g` and `h_t = o o tanh(c_t)`.
pub fn lstm_cell_forward(
    params: &LstmLayerParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), ForecastError> {
    let h = params.hidden();
    if x.len() != params.input_width() || h_prev.len() != h || c_prev.len() != h {
        return Err(ForecastError::WindowLength {
            got: x.len(),
            want: params.input_width(),
        });
    }
    let step = cell_step(params, x, h_prev, c_prev);
    Ok((step.h_new(), step.c_new()))
}

/// Everything the backward pass needs from one sample's forward run.
#[derive(Debug, Clone)]
pub(crate) struct SampleCache {
    /// `[layer][t]` cell intermediates.
    pub layer_steps: Vec<Vec<CellStep>>,
    /// Post-dropout vector feeding the dense layer.
    pub v: Vec<f64>,
    /// Dense pre-activation.
    pub pre_dense: Vec<f64>,
    /// Dense ReLU output.
    pub dense_out: Vec<f64>,
    /// Sigmoid output in (0, 1).
    pub yhat: f64,
}

/// Per-timestep dropout masks for one sample: entries are 0 or `1/(1-rate)`.
/// `after_layer[l][t]` masks layer `l`'s hidden vector at step `t`; only the
/// final step of the last layer feeds the head, so its other steps are
/// irrelevant and masked anyway for uniformity.
#[derive(Debug, Clone)]
pub struct SampleMasks {
    pub after_layer: Vec<Vec<Vec<f64>>>,
}

impl SampleMasks {
    pub fn sample(rng: &mut ChaCha8Rng, rate: f64, layers: usize, steps: usize, units: usize) -> Self {
        let keep = 1.0 - rate;
        let mask = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..units)
                .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { 1.0 / keep })
                .collect()
        };
        Self {
            after_layer: (0..layers)
                .map(|_| (0..steps).map(|_| mask(rng)).collect())
                .collect(),
        }
    }
}

/// The full network: stacked LSTM layers, dense ReLU layer, sigmoid scalar
/// head, plus the fitted price scaler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmModel {
    pub layers: Vec<LstmLayerParams>,
    /// dense_units x lstm_units
    pub dense_w: Mat,
    pub dense_b: Vec<f64>,
    /// dense_units
    pub head_w: Vec<f64>,
    pub head_b: f64,
    pub scaler: MinMaxScaler,
    pub config: ModelConfig,
}

impl LstmModel {
    /// Seeded initialization: weights uniform on (-1/sqrt(fan_in),
    /// 1/sqrt(fan_in)), biases zero except the forget-gate slice at +1.
    pub fn init(config: &ModelConfig, scaler: MinMaxScaler) -> Result<Self, ForecastError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let h = config.lstm_units;

        let mut layers = Vec::with_capacity(config.lstm_layers);
        for l in 0..config.lstm_layers {
            let input_width = if l == 0 { 1 } else { h };
            let w_ih = Mat::uniform(&mut rng, 4 * h, input_width, 1.0 / (input_width as f64).sqrt());
            let w_hh = Mat::uniform(&mut rng, 4 * h, h, 1.0 / (h as f64).sqrt());
            let mut bias = vec![0.0; 4 * h];
            for b in bias.iter_mut().skip(h).take(h) {
                *b = 1.0;
            }
            layers.push(LstmLayerParams { w_ih, w_hh, bias });
        }

        let dense_w = Mat::uniform(
            &mut rng,
            config.dense_units,
            h,
            1.0 / (h as f64).sqrt(),
        );
        let dense_b = vec![0.0; config.dense_units];
        let bound = 1.0 / (config.dense_units as f64).sqrt();
        let head_w = (0..config.dense_units)
            .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * bound)
            .collect();

        Ok(Self {
            layers,
            dense_w,
            dense_b,
            head_w,
            head_b: 0.0,
            scaler,
            config: config.clone(),
        })
    }

    /// All parameter tensors as mutable slices, in a fixed order shared with
    /// [`super::Gradients`].
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.layers {
            out.push(&mut layer.w_ih.data);
            out.push(&mut layer.w_hh.data);
            out.push(&mut layer.bias);
        }
        out.push(&mut self.dense_w.data);
        out.push(&mut self.dense_b);
        out.push(&mut self.head_w);
        out.push(std::slice::from_mut(&mut self.head_b));
        out
    }

    pub fn param_count(&self) -> usize {
        let per_layer: usize = self
            .layers
            .iter()
            .map(|l| l.w_ih.data.len() + l.w_hh.data.len() + l.bias.len())
            .sum();
        per_layer + self.dense_w.data.len() + self.dense_b.len() + self.head_w.len() + 1
    }

    /// Forward pass through the unrolled network. Masks, when given, are the
    /// per-layer inverted-dropout masks; `None` means inference (dropout is
    /// the identity).
    pub(crate) fn forward_cached(
        &self,
        window: &[f64],
        masks: Option<&SampleMasks>,
    ) -> Result<SampleCache, ForecastError> {
        if window.len() != self.config.lookback {
            return Err(ForecastError::WindowLength {
                got: window.len(),
                want: self.config.lookback,
            });
        }
        let h = self.config.lstm_units;
        let steps = window.len();

        // Inputs to the current layer, one vector per timestep.
        let mut layer_inputs: Vec<Vec<f64>> = window.iter().map(|&x| vec![x]).collect();
        let mut layer_steps = Vec::with_capacity(self.layers.len());

        for (l, params) in self.layers.iter().enumerate() {
            let mut steps_cache = Vec::with_capacity(steps);
            let mut h_state = vec![0.0; h];
            let mut c_state = vec![0.0; h];
            let mut outputs = Vec::with_capacity(steps);
            for x in &layer_inputs {
                let step = cell_step(params, x, &h_state, &c_state);
                h_state = step.h_new();
                c_state = step.c_new();
                let mut out = h_state.clone();
                if let Some(m) = masks {
                    for (v, mk) in out.iter_mut().zip(&m.after_layer[l][steps_cache.len()]) {
                        *v *= mk;
                    }
                }
                outputs.push(out);
                steps_cache.push(step);
            }
            layer_steps.push(steps_cache);
            layer_inputs = outputs;
        }

        // The head consumes the (masked) final hidden state of the last layer.
        let v = layer_inputs.last().unwrap().clone();

        let mut pre_dense = self.dense_b.clone();
        self.dense_w.matvec_add(&v, &mut pre_dense);
        let dense_out: Vec<f64> = pre_dense.iter().map(|&z| z.max(0.0)).collect();

        let mut s = self.head_b;
        for (w, d) in self.head_w.iter().zip(&dense_out) {
            s += w * d;
        }
        let yhat = sigmoid(s);

        Ok(SampleCache {
            layer_steps,
            v,
            pre_dense,
            dense_out,
            yhat,
        })
    }

    /// Inference forward pass: dropout is the identity, output in (0, 1).
    pub fn forward(&self, window: &[f64]) -> Result<f64, ForecastError> {
        Ok(self.forward_cached(window, None)?.yhat)
    }

    /// Forward pass with dropout active, for training-time evaluation.
    pub fn forward_dropout(
        &self,
        window: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Result<f64, ForecastError> {
        let masks = SampleMasks::sample(
            rng,
            self.config.dropout_rate,
            self.layers.len(),
            self.config.lookback,
            self.config.lstm_units,
        );
        Ok(self.forward_cached(window, Some(&masks))?.yhat)
    }

    /// Predicts the next close in price units from the last `lookback`
    /// closes.
    pub fn predict_next(&self, last_closes: &[f64]) -> Result<f64, ForecastError> {
        if last_closes.len() != self.config.lookback {
            return Err(ForecastError::WindowLength {
                got: last_closes.len(),
                want: self.config.lookback,
            });
        }
        let scaled: Vec<f64> = last_closes.iter().map(|&c| self.scaler.scale(c)).collect();
        Ok(self.scaler.inverse(self.forward(&scaled)?))
    }

    /// Iterates one-day predictions `steps` times, feeding each prediction
    /// back into the window.
    pub fn predict_horizon(&self, last_closes: &[f64], steps: usize) -> Result<f64, ForecastError> {
        let mut window = last_closes.to_vec();
        let mut out = self.predict_next(&window)?;
        for _ in 1..steps {
            window.rotate_left(1);
            *window.last_mut().unwrap() = out;
            out = self.predict_next(&window)?;
        }
        Ok(out)
    }
}

const fn checkpoint_version() -> u32 {
    1
}

/// Version the checkpoint format; readers reject anything else.
pub const CHECKPOINT_VERSION: u32 = checkpoint_version();

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    config: ModelConfig,
    scaler: MinMaxScaler,
    layers: Vec<LstmLayerParams>,
    dense_w: Mat,
    dense_b: Vec<f64>,
    head_w: Vec<f64>,
    head_b: f64,
}

/// Writes the model as a self-describing JSON checkpoint.
pub fn save_checkpoint(model: &LstmModel, path: impl AsRef<Path>) -> Result<(), ForecastError> {
    let path = path.as_ref();
    let ckpt = Checkpoint {
        version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        scaler: model.scaler,
        layers: model.layers.clone(),
        dense_w: model.dense_w.clone(),
        dense_b: model.dense_b.clone(),
        head_w: model.head_w.clone(),
        head_b: model.head_b,
    };
    let text = serde_json::to_string(&ckpt).map_err(|e| ForecastError::Checkpoint {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| ForecastError::Checkpoint {
                path: path.display().to_string(),
                detail: e.to_string(),
            })?;
        }
    }
    fs::write(path, text).map_err(|e| ForecastError::Checkpoint {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

/// Reads a checkpoint written by [`save_checkpoint`], rejecting unknown
/// versions and shape mismatches.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<LstmModel, ForecastError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| ForecastError::Checkpoint {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| ForecastError::Checkpoint {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(ForecastError::CheckpointVersion {
            got: ckpt.version,
            want: CHECKPOINT_VERSION,
        });
    }
    let model = LstmModel {
        layers: ckpt.layers,
        dense_w: ckpt.dense_w,
        dense_b: ckpt.dense_b,
        head_w: ckpt.head_w,
        head_b: ckpt.head_b,
        scaler: ckpt.scaler,
        config: ckpt.config,
    };
    let h = model.config.lstm_units;
    let shapes_ok = model.layers.len() == model.config.lstm_layers
        && model.layers.iter().enumerate().all(|(l, p)| {
            let input_width = if l == 0 { 1 } else { h };
            p.w_ih.rows == 4 * h
                && p.w_ih.cols == input_width
                && p.w_hh.rows == 4 * h
                && p.w_hh.cols == h
                && p.bias.len() == 4 * h
        })
        && model.dense_w.rows == model.config.dense_units
        && model.dense_w.cols == h
        && model.dense_b.len() == model.config.dense_units
        && model.head_w.len() == model.config.dense_units
        && model.scaler.max > model.scaler.min;
    if !shapes_ok {
        return Err(ForecastError::Checkpoint {
            path: path.display().to_string(),
            detail: "parameter shapes inconsistent with config".into(),
        });
    }
    Ok(model)
}
