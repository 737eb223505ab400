//! Single-hidden-layer perceptron trained by mini-batch Adam.
//!
//! Training minimises half the mean squared error plus an L2 penalty on the
//! weights (not the biases). The loop stops after `max_epochs`, or once the
//! epoch loss has failed to improve by `tolerance` for more than
//! `n_iter_no_change` consecutive epochs.
//!
//! Prediction uses a fixed-order row-wise forward pass, so a batch prediction
//! and a single-row prediction of the same input are bitwise identical.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden_width: usize,
    pub activation: Activation,
    pub learning_rate: f64,
    /// Mini-batch size; `None` means `min(200, rows)`.
    pub batch_size: Option<usize>,
    pub max_epochs: usize,
    pub l2_penalty: f64,
    pub seed: u64,
    /// Minimum epoch-loss improvement that resets the plateau counter.
    pub tolerance: f64,
    pub n_iter_no_change: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden_width: 100,
            activation: Activation::Relu,
            learning_rate: 1e-3,
            batch_size: None,
            max_epochs: 200,
            l2_penalty: 1e-4,
            seed: 0,
            tolerance: 1e-4,
            n_iter_no_change: 10,
        }
    }
}

impl MlpConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.hidden_width == 0 {
            return Err(Error::InvalidParameter("hidden_width must be at least 1".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::InvalidParameter("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter("learning_rate must be positive".into()));
        }
        if !(self.l2_penalty >= 0.0) || !(self.tolerance >= 0.0) {
            return Err(Error::InvalidParameter(
                "l2_penalty and tolerance must be non-negative".into(),
            ));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidParameter("max_epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Output transform and matching loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub(crate) enum Output {
    /// Identity output, squared error.
    Linear,
    /// Softmax output, cross-entropy against one-hot targets.
    Softmax,
}

/// Raw weights of a one-hidden-layer network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Network {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub output: Output,
}

/// Per-parameter gradients, same shapes as [`Network`].
struct Gradients {
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
}

fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

impl Network {
    fn glorot(input: usize, hidden: usize, output: usize, kind: Output, seed: u64) -> Self {
        let mut rng = seed::derived_rng(seed, &["mlp", "init"]);
        let mut uniform = |rows: usize, cols: usize, fan: f64| {
            let limit = (6.0 / fan).sqrt();
            Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..limit))
        };
        let fan1 = (input + hidden) as f64;
        let fan2 = (hidden + output) as f64;
        let w1 = uniform(input, hidden, fan1);
        let b1 = uniform(1, hidden, fan1).remove_axis(Axis(0));
        let w2 = uniform(hidden, output, fan2);
        let b2 = uniform(1, output, fan2).remove_axis(Axis(0));
        Self {
            w1,
            b1,
            w2,
            b2,
            output: kind,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.ncols()
    }

    fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Batched forward pass: returns `(hidden activations, outputs)`.
    fn forward(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
        let mut hidden = x.dot(&self.w1) + &self.b1;
        hidden.mapv_inplace(|v| v.max(0.0));
        let mut out = hidden.dot(&self.w2) + &self.b2;
        if self.output == Output::Softmax {
            softmax_rows(&mut out);
        }
        (hidden, out)
    }

    fn l2_norm_sq(&self) -> f64 {
        self.w1.iter().chain(self.w2.iter()).map(|w| w * w).sum()
    }

    /// Loss as reported in the training curve: mean per-element data loss plus
    /// the L2 term scaled by the batch size.
    fn reported_loss(&self, out: &Array2<f64>, y: ArrayView2<'_, f64>, l2: f64) -> f64 {
        let n = y.nrows() as f64;
        let data = match self.output {
            Output::Linear => {
                Zip::from(out).and(y).fold(0.0, |acc, &p, &t| acc + (p - t) * (p - t))
                    / (2.0 * out.len() as f64)
            }
            Output::Softmax => {
                -Zip::from(out).and(y).fold(0.0, |acc, &p, &t| {
                    if t > 0.0 {
                        acc + t * p.max(1e-300).ln()
                    } else {
                        acc
                    }
                }) / n
            }
        };
        data + 0.5 * l2 * self.l2_norm_sq() / n
    }

    /// Gradient of `sum_rows(loss_row) / n + l2 * |W|^2 / (2n)` over the batch.
    fn backward(
        &self,
        x: ArrayView2<'_, f64>,
        y: ArrayView2<'_, f64>,
        hidden: &Array2<f64>,
        out: &Array2<f64>,
        l2: f64,
    ) -> Gradients {
        let n = x.nrows() as f64;
        let delta_out = out - &y;
        let w2 = (hidden.t().dot(&delta_out) + &(&self.w2 * l2)) / n;
        let b2 = delta_out.sum_axis(Axis(0)) / n;
        let mut delta_hidden = delta_out.dot(&self.w2.t());
        Zip::from(&mut delta_hidden).and(hidden).for_each(|d, &h| {
            if h <= 0.0 {
                *d = 0.0;
            }
        });
        let w1 = (x.t().dot(&delta_hidden) + &(&self.w1 * l2)) / n;
        let b1 = delta_hidden.sum_axis(Axis(0)) / n;
        Gradients { w1, b1, w2, b2 }
    }

    /// Objective whose exact gradient [`Network::backward`] computes.
    fn objective(&self, x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, l2: f64) -> f64 {
        let n = x.nrows() as f64;
        let (_, out) = self.forward(x);
        let data = match self.output {
            Output::Linear => {
                Zip::from(&out).and(y).fold(0.0, |acc, &p, &t| acc + (p - t) * (p - t)) / (2.0 * n)
            }
            Output::Softmax => {
                -Zip::from(&out).and(y).fold(0.0, |acc, &p, &t| acc + t * p.max(1e-300).ln()) / n
            }
        };
        data + 0.5 * l2 * self.l2_norm_sq() / n
    }

    fn params_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }

    /// Forward pass for one row with a fixed summation order.
    pub fn predict_into(&self, x: &[f64], hidden: &mut [f64], out: &mut [f64]) {
        hidden.copy_from_slice(self.b1.as_slice().expect("standard layout"));
        for (xi, row) in x.iter().zip(self.w1.rows()) {
            for (h, w) in hidden.iter_mut().zip(row.iter()) {
                *h += xi * w;
            }
        }
        out.copy_from_slice(self.b2.as_slice().expect("standard layout"));
        for (h, row) in hidden.iter().zip(self.w2.rows()) {
            let a = h.max(0.0);
            if a == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(row.iter()) {
                *o += a * w;
            }
        }
        if self.output == Output::Softmax {
            let max = out.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut sum = 0.0;
            for o in out.iter_mut() {
                *o = (*o - max).exp();
                sum += *o;
            }
            for o in out.iter_mut() {
                *o /= sum;
            }
        }
    }

    pub fn predict_rows(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros((x.nrows(), self.output_dim()));
        let mut hidden = vec![0.0; self.b1.len()];
        let mut row_buf = vec![0.0; x.ncols()];
        for (xr, mut or) in x.rows().into_iter().zip(out.rows_mut()) {
            row_buf.iter_mut().zip(xr.iter()).for_each(|(b, v)| *b = *v);
            self.predict_into(&row_buf, &mut hidden, or.as_slice_mut().expect("standard layout"));
        }
        out
    }
}

struct Moments {
    m: Network,
    v: Network,
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    moments: Moments,
}

fn adam_update<D: ndarray::Dimension>(
    param: &mut ndarray::Array<f64, D>,
    grad: &ndarray::Array<f64, D>,
    m: &mut ndarray::Array<f64, D>,
    v: &mut ndarray::Array<f64, D>,
    (b1, b2, eps, lr_t): (f64, f64, f64, f64),
) {
    Zip::from(param).and(grad).and(m).and(v).for_each(|p, &g, m, v| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        *p -= lr_t * *m / (v.sqrt() + eps);
    });
}

impl Adam {
    fn new(net: &Network, lr: f64) -> Self {
        let zeros = || Network {
            w1: Array2::zeros(net.w1.raw_dim()),
            b1: Array1::zeros(net.b1.raw_dim()),
            w2: Array2::zeros(net.w2.raw_dim()),
            b2: Array1::zeros(net.b2.raw_dim()),
            output: net.output,
        };
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            moments: Moments { m: zeros(), v: zeros() },
        }
    }

    fn step(&mut self, net: &mut Network, g: &Gradients) {
        self.t += 1;
        let lr_t = self.lr * (1.0 - self.beta2.powi(self.t)).sqrt() / (1.0 - self.beta1.powi(self.t));
        let hp = (self.beta1, self.beta2, self.eps, lr_t);
        let Moments { m, v } = &mut self.moments;
        adam_update(&mut net.w1, &g.w1, &mut m.w1, &mut v.w1, hp);
        adam_update(&mut net.b1, &g.b1, &mut m.b1, &mut v.b1, hp);
        adam_update(&mut net.w2, &g.w2, &mut m.w2, &mut v.w2, hp);
        adam_update(&mut net.b2, &g.b2, &mut m.b2, &mut v.b2, hp);
    }
}

fn check_training_data(inputs: &Array2<f64>, targets: &Array2<f64>) -> Result<()> {
    if inputs.nrows() != targets.nrows() {
        return Err(Error::InvalidInput(format!(
            "inputs have {} rows but targets have {}",
            inputs.nrows(),
            targets.nrows()
        )));
    }
    if inputs.nrows() == 0 || inputs.ncols() == 0 || targets.ncols() == 0 {
        return Err(Error::InvalidInput("training data must be non-empty".into()));
    }
    if !inputs.iter().chain(targets.iter()).all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("training data contains non-finite values".into()));
    }
    Ok(())
}

/// Fit a network; returns it with the per-epoch loss curve.
pub(crate) fn fit_network(
    inputs: &Array2<f64>,
    targets: &Array2<f64>,
    config: &MlpConfig,
    output: Output,
) -> Result<(Network, Vec<f64>)> {
    config.validate()?;
    check_training_data(inputs, targets)?;
    let n = inputs.nrows();
    let mut net = Network::glorot(inputs.ncols(), config.hidden_width, targets.ncols(), output, config.seed);
    let mut adam = Adam::new(&net, config.learning_rate);
    let batch = config.batch_size.unwrap_or(200).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = seed::derived_rng(config.seed, &["mlp", "shuffle"]);
    let mut curve = Vec::new();
    let mut best = f64::INFINITY;
    let mut stale = 0usize;

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut accumulated = 0.0;
        for chunk in order.chunks(batch) {
            let xb = inputs.select(Axis(0), chunk);
            let yb = targets.select(Axis(0), chunk);
            let (hidden, out) = net.forward(xb.view());
            accumulated += net.reported_loss(&out, yb.view(), config.l2_penalty) * chunk.len() as f64;
            let grads = net.backward(xb.view(), yb.view(), &hidden, &out, config.l2_penalty);
            adam.step(&mut net, &grads);
        }
        let loss = accumulated / n as f64;
        if !loss.is_finite() || !net.w1.iter().chain(net.w2.iter()).all(|w| w.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        curve.push(loss);
        if loss > best - config.tolerance {
            stale += 1;
        } else {
            stale = 0;
        }
        best = best.min(loss);
        if stale > config.n_iter_no_change {
            break;
        }
    }
    Ok((net, curve))
}

/// A fitted multi-output regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedRegressor {
    network: Network,
    config: MlpConfig,
    loss_curve: Vec<f64>,
}

impl TrainedRegressor {
    /// A network with every weight and bias zero; it predicts zeros.
    pub fn zeros(input_dim: usize, output_dim: usize, hidden_width: usize) -> Self {
        Self {
            network: Network {
                w1: Array2::zeros((input_dim, hidden_width)),
                b1: Array1::zeros(hidden_width),
                w2: Array2::zeros((hidden_width, output_dim)),
                b2: Array1::zeros(output_dim),
                output: Output::Linear,
            },
            config: MlpConfig {
                hidden_width,
                ..Default::default()
            },
            loss_curve: Vec::new(),
        }
    }

    /// The untrained, seeded initialisation `train_mlp` would start from.
    pub fn initialized(input_dim: usize, output_dim: usize, config: &MlpConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            network: Network::glorot(input_dim, config.hidden_width, output_dim, Output::Linear, config.seed),
            config: *config,
            loss_curve: Vec::new(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.network.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.network.output_dim()
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn loss_curve(&self) -> &[f64] {
        &self.loss_curve
    }

    /// Flattened parameters in `w1, b1, w2, b2` order.
    pub fn parameters(&self) -> Vec<f64> {
        let net = &self.network;
        net.w1
            .iter()
            .chain(net.b1.iter())
            .chain(net.w2.iter())
            .chain(net.b2.iter())
            .copied()
            .collect()
    }

    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::InvalidInput(format!(
                "expected {} features, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        let mut hidden = vec![0.0; self.network.b1.len()];
        let mut out = vec![0.0; self.output_dim()];
        self.network.predict_into(input, &mut hidden, &mut out);
        Ok(out)
    }

    /// Row-wise prediction; row `i` equals `predict(inputs.row(i))` exactly.
    pub fn predict_batch(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::InvalidInput(format!(
                "expected {} features, got {}",
                self.input_dim(),
                inputs.ncols()
            )));
        }
        Ok(self.network.predict_rows(inputs))
    }

    /// Training objective and its analytic gradient (flattened like [`Self::parameters`]).
    pub fn objective_gradient(
        &self,
        inputs: &Array2<f64>,
        targets: &Array2<f64>,
        l2_penalty: f64,
    ) -> Result<(f64, Vec<f64>)> {
        check_training_data(inputs, targets)?;
        self.check_dims(inputs, targets)?;
        let net = &self.network;
        let (hidden, out) = net.forward(inputs.view());
        let g = net.backward(inputs.view(), targets.view(), &hidden, &out, l2_penalty);
        let flat = g
            .w1
            .iter()
            .chain(g.b1.iter())
            .chain(g.w2.iter())
            .chain(g.b2.iter())
            .copied()
            .collect();
        Ok((net.objective(inputs.view(), targets.view(), l2_penalty), flat))
    }

    fn check_dims(&self, inputs: &Array2<f64>, targets: &Array2<f64>) -> Result<()> {
        if inputs.ncols() != self.input_dim() || targets.ncols() != self.output_dim() {
            return Err(Error::InvalidInput(format!(
                "network is {}->{}, data is {}->{}",
                self.input_dim(),
                self.output_dim(),
                inputs.ncols(),
                targets.ncols()
            )));
        }
        Ok(())
    }
}

/// Train a regressor mapping `inputs` rows to `targets` rows.
pub fn train_mlp(inputs: &Array2<f64>, targets: &Array2<f64>, config: &MlpConfig) -> Result<TrainedRegressor> {
    let (network, loss_curve) = fit_network(inputs, targets, config, Output::Linear)?;
    Ok(TrainedRegressor {
        network,
        config: *config,
        loss_curve,
    })
}

/// Largest relative disagreement between backpropagation and central finite
/// differences (step `1e-6`) over every parameter of a freshly initialised network.
pub fn gradient_check(config: &MlpConfig, inputs: &Array2<f64>, targets: &Array2<f64>) -> Result<f64> {
    if inputs.nrows() > 32 {
        return Err(Error::InvalidInput(format!(
            "gradient probes are limited to 32 rows, got {}",
            inputs.nrows()
        )));
    }
    let model = TrainedRegressor::initialized(inputs.ncols(), targets.ncols(), config)?;
    relative_gradient_error(&model, inputs, targets, config.l2_penalty)
}

/// As [`gradient_check`], for an explicit network.
pub fn relative_gradient_error(
    model: &TrainedRegressor,
    inputs: &Array2<f64>,
    targets: &Array2<f64>,
    l2_penalty: f64,
) -> Result<f64> {
    const STEP: f64 = 1e-6;
    // gradients smaller than this are compared in absolute terms
    const FLOOR: f64 = 1e-6;
    let (_, analytic) = model.objective_gradient(inputs, targets, l2_penalty)?;
    let mut probe = model.network.clone();
    let sizes = [probe.w1.len(), probe.b1.len(), probe.w2.len(), probe.b2.len()];
    debug_assert_eq!(analytic.len(), probe.param_count());
    let mut worst: f64 = 0.0;
    let mut flat = 0;
    for (block, &size) in sizes.iter().enumerate() {
        for i in 0..size {
            let original = probe.params_mut()[block][i];
            probe.params_mut()[block][i] = original + STEP;
            let up = probe.objective(inputs.view(), targets.view(), l2_penalty);
            probe.params_mut()[block][i] = original - STEP;
            let down = probe.objective(inputs.view(), targets.view(), l2_penalty);
            probe.params_mut()[block][i] = original;
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic[flat];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max(rel);
            flat += 1;
        }
    }
    Ok(worst)
}
