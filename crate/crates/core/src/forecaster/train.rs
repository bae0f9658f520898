//! Backpropagation through time, adaptive-moment updates, the training loop,
//! and grid search.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{LstmLayerParams, LstmModel, Mat, SampleMasks};
use super::{
    huber_grad, huber_loss, EpochMetrics, ForecastError, ModelConfig, TrainHistory,
    WindowedDataset,
};

/// Mean Huber loss and mean absolute error over one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchEval {
    pub loss: f64,
    pub mae: f64,
}

/// Gradient of the mean batch loss for every parameter tensor, shaped exactly
/// like the model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LstmLayerParams>,
    pub dense_w: Mat,
    pub dense_b: Vec<f64>,
    pub head_w: Vec<f64>,
    pub head_b: f64,
}

impl Gradients {
    pub fn zeros_like(model: &LstmModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| LstmLayerParams {
                    w_ih: Mat::zeros(l.w_ih.rows, l.w_ih.cols),
                    w_hh: Mat::zeros(l.w_hh.rows, l.w_hh.cols),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
            dense_w: Mat::zeros(model.dense_w.rows, model.dense_w.cols),
            dense_b: vec![0.0; model.dense_b.len()],
            head_w: vec![0.0; model.head_w.len()],
            head_b: 0.0,
        }
    }

    /// Tensor slices in the same fixed order as
    /// [`LstmModel::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for layer in &self.layers {
            out.push(&layer.w_ih.data);
            out.push(&layer.w_hh.data);
            out.push(&layer.bias);
        }
        out.push(&self.dense_w.data);
        out.push(&self.dense_b);
        out.push(&self.head_w);
        out.push(std::slice::from_ref(&self.head_b));
        out
    }
}

fn outer_add(mat: &mut Mat, y: &[f64], x: &[f64]) {
    debug_assert_eq!(y.len(), mat.rows);
    debug_assert_eq!(x.len(), mat.cols);
    for (r, yr) in y.iter().enumerate() {
        if *yr == 0.0 {
            continue;
        }
        let row = &mut mat.data[r * mat.cols..(r + 1) * mat.cols];
        for (m, xi) in row.iter_mut().zip(x) {
            *m += yr * xi;
        }
    }
}

/// Forward and backward over a batch: returns the mean Huber loss / MAE and
/// the gradient of the mean loss with respect to every parameter. `masks`
/// activates inverted dropout (one mask set per sample); `None` runs the
/// deterministic network.
pub fn backward(
    model: &LstmModel,
    inputs: &[Vec<f64>],
    targets: &[f64],
    masks: Option<&[SampleMasks]>,
) -> Result<(BatchEval, Gradients), ForecastError> {
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(ForecastError::EmptyBatch);
    }
    let delta = model.config.huber_delta;
    let batch = inputs.len() as f64;
    let hidden = model.config.lstm_units;
    let n_layers = model.layers.len();

    let mut grads = Gradients::zeros_like(model);
    let mut loss = 0.0;
    let mut mae = 0.0;

    for (b, (window, &target)) in inputs.iter().zip(targets).enumerate() {
        let sample_masks = masks.map(|m| &m[b]);
        let cache = model.forward_cached(window, sample_masks)?;
        let steps = cache.layer_steps[0].len();

        let error = cache.yhat - target;
        loss += huber_loss(cache.yhat, target, delta)?;
        mae += error.abs();

        // d(mean loss)/d(yhat) for this sample.
        let dyhat = huber_grad(error, delta) / batch;
        let ds = dyhat * cache.yhat * (1.0 - cache.yhat);

        // Head.
        grads.head_b += ds;
        for ((gw, d), w) in grads
            .head_w
            .iter_mut()
            .zip(&cache.dense_out)
            .zip(&model.head_w)
        {
            let _ = w;
            *gw += ds * d;
        }

        // Dense layer (ReLU).
        let mut dpre = vec![0.0; model.dense_b.len()];
        for (j, dp) in dpre.iter_mut().enumerate() {
            if cache.pre_dense[j] > 0.0 {
                *dp = ds * model.head_w[j];
            }
        }
        outer_add(&mut grads.dense_w, &dpre, &cache.v);
        for (gb, dp) in grads.dense_b.iter_mut().zip(&dpre) {
            *gb += dp;
        }
        let mut dv = vec![0.0; hidden];
        model.dense_w.matvec_t_add(&dpre, &mut dv);

        // External gradient on each layer's hidden sequence. The dense head
        // feeds from the top layer's final (masked) state only.
        let mut dh_ext = vec![vec![0.0; hidden]; steps];
        {
            let top = n_layers - 1;
            let last = &mut dh_ext[steps - 1];
            match sample_masks {
                Some(m) => {
                    for ((d, dvk), mk) in
                        last.iter_mut().zip(&dv).zip(&m.after_layer[top][steps - 1])
                    {
                        *d = dvk * mk;
                    }
                }
                None => last.copy_from_slice(&dv),
            }
        }

        // BPTT from the top layer down.
        for l in (0..n_layers).rev() {
            let params = &model.layers[l];
            let gl = &mut grads.layers[l];
            let layer_cache = &cache.layer_steps[l];
            let in_width = params.input_width();

            let mut dh_next = vec![0.0; hidden];
            let mut dc_next = vec![0.0; hidden];
            let mut dx_per_t: Vec<Vec<f64>> = vec![Vec::new(); steps];

            for t in (0..steps).rev() {
                let step = &layer_cache[t];
                let mut d_raw = vec![0.0; 4 * hidden];
                let mut dc = vec![0.0; hidden];
                for k in 0..hidden {
                    let dh = dh_ext[t][k] + dh_next[k];
                    let tc = step.tanh_c[k];
                    let dck = dh * step.o[k] * (1.0 - tc * tc) + dc_next[k];
                    dc[k] = dck;
                    d_raw[k] = dck * step.g[k] * step.i[k] * (1.0 - step.i[k]);
                    d_raw[hidden + k] = dck * step.c_prev[k] * step.f[k] * (1.0 - step.f[k]);
                    d_raw[2 * hidden + k] = dck * step.i[k] * (1.0 - step.g[k] * step.g[k]);
                    d_raw[3 * hidden + k] = dh * tc * step.o[k] * (1.0 - step.o[k]);
                }

                outer_add(&mut gl.w_ih, &d_raw, &step.x);
                outer_add(&mut gl.w_hh, &d_raw, &step.h_prev);
                for (gb, dr) in gl.bias.iter_mut().zip(&d_raw) {
                    *gb += dr;
                }

                let mut dx = vec![0.0; in_width];
                params.w_ih.matvec_t_add(&d_raw, &mut dx);
                dh_next = vec![0.0; hidden];
                params.w_hh.matvec_t_add(&d_raw, &mut dh_next);
                for k in 0..hidden {
                    dc_next[k] = dc[k] * step.f[k];
                }
                dx_per_t[t] = dx;
            }

            // Gradient w.r.t. this layer's input is the gradient on the layer
            // below's masked hidden output.
            if l > 0 {
                for t in 0..steps {
                    match sample_masks {
                        Some(m) => {
                            for k in 0..hidden {
                                dh_ext[t][k] = dx_per_t[t][k] * m.after_layer[l - 1][t][k];
                            }
                        }
                        None => dh_ext[t].copy_from_slice(&dx_per_t[t]),
                    }
                }
            }
        }
    }

    Ok((
        BatchEval {
            loss: loss / batch,
            mae: mae / batch,
        },
        grads,
    ))
}

/// Mean Huber loss and MAE over a batch with the deterministic network
/// (dropout off).
pub fn batch_eval(
    model: &LstmModel,
    inputs: &[Vec<f64>],
    targets: &[f64],
) -> Result<BatchEval, ForecastError> {
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(ForecastError::EmptyBatch);
    }
    let delta = model.config.huber_delta;
    let mut loss = 0.0;
    let mut mae = 0.0;
    for (window, &target) in inputs.iter().zip(targets) {
        let yhat = model.forward(window)?;
        loss += huber_loss(yhat, target, delta)?;
        mae += (yhat - target).abs();
    }
    let batch = inputs.len() as f64;
    Ok(BatchEval {
        loss: loss / batch,
        mae: mae / batch,
    })
}

/// Adaptive-moment estimation with bias correction.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    lr: f64,
    step: u64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(param_count: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            lr,
            step: 0,
        }
    }

    fn apply(&mut self, model: &mut LstmModel, grads: &Gradients) {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - ADAM_BETA1.powf(t);
        let bc2 = 1.0 - ADAM_BETA2.powf(t);
        let mut k = 0;
        let grad_slices = grads.slices();
        let mut g_iter = grad_slices.iter().flat_map(|s| s.iter());
        for slice in model.param_slices_mut() {
            for p in slice {
                let g = *g_iter.next().expect("gradient/parameter shape mismatch");
                self.m[k] = ADAM_BETA1 * self.m[k] + (1.0 - ADAM_BETA1) * g;
                self.v[k] = ADAM_BETA2 * self.v[k] + (1.0 - ADAM_BETA2) * g * g;
                let mhat = self.m[k] / bc1;
                let vhat = self.v[k] / bc2;
                *p -= self.lr * mhat / (vhat.sqrt() + ADAM_EPS);
                k += 1;
            }
        }
    }
}

/// Trains a freshly initialized model on the dataset's training partition.
///
/// Mini-batches are drawn in a seeded shuffled order each epoch with dropout
/// active; per-epoch metrics are evaluated with dropout off, over both
/// partitions. Identical `(data, config)` reproduce identical results.
pub fn train(
    data: &WindowedDataset,
    config: &ModelConfig,
) -> Result<(LstmModel, TrainHistory), ForecastError> {
    config.validate()?;
    if data.split == 0 {
        return Err(ForecastError::EmptyTrainPartition);
    }
    let mut model = LstmModel::init(config, data.scaler)?;
    let (train_x, train_y) = data.train_slices();
    let (val_x, val_y) = data.val_slices();

    // Distinct stream from parameter initialization.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let mut adam = Adam::new(model.param_count(), config.learning_rate);
    let mut history = TrainHistory::default();
    let mut indices: Vec<usize> = (0..train_x.len()).collect();

    for epoch in 1..=config.epochs {
        indices.shuffle(&mut rng);
        for chunk in indices.chunks(config.batch_size) {
            let batch_x: Vec<Vec<f64>> = chunk.iter().map(|&i| train_x[i].clone()).collect();
            let batch_y: Vec<f64> = chunk.iter().map(|&i| train_y[i]).collect();
            let masks: Option<Vec<SampleMasks>> = (config.dropout_rate > 0.0).then(|| {
                chunk
                    .iter()
                    .map(|_| {
                        SampleMasks::sample(
                            &mut rng,
                            config.dropout_rate,
                            model.layers.len(),
                            config.lookback,
                            config.lstm_units,
                        )
                    })
                    .collect()
            });
            let (_, grads) = backward(&model, &batch_x, &batch_y, masks.as_deref())?;
            adam.apply(&mut model, &grads);
        }

        let train_eval = batch_eval(&model, train_x, train_y)?;
        let val_eval = batch_eval(&model, val_x, val_y)?;
        history.epochs.push(EpochMetrics {
            epoch,
            train_loss: train_eval.loss,
            train_mae: train_eval.mae,
            val_loss: val_eval.loss,
            val_mae: val_eval.mae,
        });
    }

    Ok((model, history))
}

/// Trains every candidate and returns the config with the lowest final
/// validation loss; ties keep the earliest candidate.
pub fn grid_search(
    candidates: &[ModelConfig],
    data: &WindowedDataset,
) -> Result<ModelConfig, ForecastError> {
    if candidates.is_empty() {
        return Err(ForecastError::EmptyGrid);
    }
    let mut best: Option<(f64, &ModelConfig)> = None;
    for config in candidates {
        let (_, history) = train(data, config)?;
        let loss = history
            .final_val_loss()
            .ok_or(ForecastError::EmptyTrainPartition)?;
        if best.map_or(true, |(b, _)| loss < b) {
            best = Some((loss, config));
        }
    }
    Ok(best.unwrap().1.clone())
}

#[cfg(test)]
mod tests {
    use super::super::{window, MinMaxScaler};
    use super::*;
    use crate::ingest::{PriceBar, PriceSeries};
    use chrono::NaiveDate;

    fn tiny_config(units: usize, lookback: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            lookback,
            lstm_units: units,
            lstm_layers: 2,
            dropout_rate: 0.0,
            dense_units: units,
            batch_size: 4,
            epochs: 1,
            huber_delta: 1.0,
            learning_rate: 1e-3,
            seed,
            horizon: 1,
        }
    }

    fn random_batch(config: &ModelConfig, seed: u64, count: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = (0..count)
            .map(|_| (0..config.lookback).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let targets = (0..count).map(|_| rng.gen::<f64>()).collect();
        (inputs, targets)
    }

    /// Central finite difference of the mean batch loss w.r.t. flat
    /// parameter `k`.
    fn numeric_grad(
        model: &mut LstmModel,
        inputs: &[Vec<f64>],
        targets: &[f64],
        k: usize,
        h: f64,
    ) -> f64 {
        let read = |m: &LstmModel, inputs: &[Vec<f64>], targets: &[f64]| {
            batch_eval(m, inputs, targets).unwrap().loss
        };
        set_flat(model, k, h);
        let plus = read(model, inputs, targets);
        set_flat(model, k, -2.0 * h);
        let minus = read(model, inputs, targets);
        set_flat(model, k, h);
        (plus - minus) / (2.0 * h)
    }

    fn set_flat(model: &mut LstmModel, k: usize, delta: f64) {
        let mut remaining = k;
        for slice in model.param_slices_mut() {
            if remaining < slice.len() {
                slice[remaining] += delta;
                return;
            }
            remaining -= slice.len();
        }
        panic!("flat index out of range");
    }

    fn flat_grads(grads: &Gradients) -> Vec<f64> {
        grads.slices().iter().flat_map(|s| s.iter().copied()).collect()
    }

    #[test]
    fn zero_error_quadratic_branch_gives_zero_head_gradients() {
        let config = tiny_config(3, 4, 1);
        let mut model = LstmModel::init(&config, MinMaxScaler { min: 0.0, max: 1.0 }).unwrap();
        for slice in model.param_slices_mut() {
            for v in slice {
                *v = 0.0;
            }
        }
        // Zero parameters predict exactly 0.5; targets equal predictions.
        let inputs = vec![vec![0.3; 4], vec![0.8; 4]];
        let targets = vec![0.5, 0.5];
        let (eval, grads) = backward(&model, &inputs, &targets, None).unwrap();
        assert_eq!(eval.loss, 0.0);
        assert_eq!(grads.head_b, 0.0);
        assert!(grads.head_w.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        // Desk-scale check over a couple of seeds; the acceptance suite runs
        // the full sweep.
        for seed in [3, 17] {
            let config = tiny_config(3, 4, seed);
            let mut model =
                LstmModel::init(&config, MinMaxScaler { min: 0.0, max: 1.0 }).unwrap();
            let (inputs, targets) = random_batch(&config, seed + 100, 3);
            let (_, grads) = backward(&model, &inputs, &targets, None).unwrap();
            let flat = flat_grads(&grads);
            assert_eq!(flat.len(), model.param_count());

            let mut worst = 0.0f64;
            for k in 0..flat.len() {
                let numeric = numeric_grad(&mut model, &inputs, &targets, k, 1e-5);
                let denom = flat[k].abs().max(numeric.abs()).max(1e-4);
                worst = worst.max((flat[k] - numeric).abs() / denom);
            }
            assert!(worst <= 1e-4, "seed {seed}: max rel err {worst}");
        }
    }

    #[test]
    fn doubling_quadratic_errors_doubles_head_gradient() {
        let config = tiny_config(3, 4, 5);
        let model = LstmModel::init(&config, MinMaxScaler { min: 0.0, max: 1.0 }).unwrap();
        let inputs = vec![vec![0.2; 4], vec![0.7; 4]];
        let preds: Vec<f64> = inputs.iter().map(|w| model.forward(w).unwrap()).collect();

        let e = 0.05;
        let targets1: Vec<f64> = preds.iter().map(|p| p - e).collect();
        let targets2: Vec<f64> = preds.iter().map(|p| p - 2.0 * e).collect();
        let (_, g1) = backward(&model, &inputs, &targets1, None).unwrap();
        let (_, g2) = backward(&model, &inputs, &targets2, None).unwrap();

        assert!((g2.head_b - 2.0 * g1.head_b).abs() <= 1e-12 * g1.head_b.abs().max(1.0));
        for (a, b) in g1.head_w.iter().zip(&g2.head_w) {
            assert!((b - 2.0 * a).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn backward_rejects_empty_batch() {
        let config = tiny_config(2, 3, 1);
        let model = LstmModel::init(&config, MinMaxScaler { min: 0.0, max: 1.0 }).unwrap();
        assert!(matches!(
            backward(&model, &[], &[], None),
            Err(ForecastError::EmptyBatch)
        ));
    }

    fn sine_series(len: usize) -> PriceSeries {
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        PriceSeries::new(
            "SIN",
            (0..len)
                .map(|t| PriceBar {
                    date: start + chrono::Duration::days(t as i64),
                    close: 50.0 + 10.0 * (t as f64 * std::f64::consts::TAU / 20.0).sin(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_at_init() {
        let data = window(&sine_series(40), 10, 0.8).unwrap();
        let config = ModelConfig {
            learning_rate: 0.0,
            epochs: 1,
            ..tiny_config(4, 10, 7)
        };
        let (trained, history) = train(&data, &config).unwrap();
        let fresh = LstmModel::init(&config, data.scaler).unwrap();
        assert_eq!(trained, fresh);
        assert_eq!(history.epochs.len(), 1);
    }

    #[test]
    fn training_is_deterministic() {
        let data = window(&sine_series(60), 10, 0.8).unwrap();
        let config = ModelConfig {
            epochs: 3,
            dropout_rate: 0.2,
            learning_rate: 5e-3,
            ..tiny_config(4, 10, 11)
        };
        let (m1, h1) = train(&data, &config).unwrap();
        let (m2, h2) = train(&data, &config).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(m1, m2);
    }

    #[test]
    fn training_reduces_loss_on_sine() {
        let data = window(&sine_series(120), 10, 0.8).unwrap();
        let config = ModelConfig {
            epochs: 30,
            learning_rate: 1e-2,
            batch_size: 32,
            ..tiny_config(8, 10, 13)
        };
        let (_, history) = train(&data, &config).unwrap();
        let first = history.epochs.first().unwrap().train_loss;
        let last = history.epochs.last().unwrap().train_loss;
        assert!(
            last < first / 2.0,
            "loss did not improve: {first} -> {last}"
        );
    }

    #[test]
    fn empty_training_partition_is_error() {
        let mut data = window(&sine_series(40), 10, 0.8).unwrap();
        data.split = 0;
        let config = tiny_config(2, 10, 1);
        assert!(matches!(
            train(&data, &config),
            Err(ForecastError::EmptyTrainPartition)
        ));
    }

    #[test]
    fn grid_search_selection_rules() {
        let data = window(&sine_series(50), 10, 0.8).unwrap();
        let base = ModelConfig {
            epochs: 2,
            ..tiny_config(3, 10, 21)
        };

        // Single candidate comes straight back.
        let best = grid_search(std::slice::from_ref(&base), &data).unwrap();
        assert_eq!(best, base);

        // Duplicates tie; the first wins (and equals either).
        let best = grid_search(&[base.clone(), base.clone()], &data).unwrap();
        assert_eq!(best, base);

        assert!(matches!(
            grid_search(&[], &data),
            Err(ForecastError::EmptyGrid)
        ));
    }

    #[test]
    fn grid_search_prefers_learning_over_frozen() {
        let data = window(&sine_series(80), 10, 0.8).unwrap();
        let frozen = ModelConfig {
            learning_rate: 0.0,
            epochs: 10,
            ..tiny_config(6, 10, 23)
        };
        let learning = ModelConfig {
            learning_rate: 1e-2,
            ..frozen.clone()
        };
        let best = grid_search(&[frozen, learning.clone()], &data).unwrap();
        assert_eq!(best, learning);
    }
}
