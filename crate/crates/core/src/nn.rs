//! Dense binary classifier trained with binary cross-entropy.
//!
//! Hidden layers apply ReLU then inverted dropout; the output is a sigmoid.
//! Backprop and SGD are written by hand.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor2;

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` inside the loss.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Input width, four hidden widths, output width 1.
    pub layer_sizes: Vec<usize>,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub seed: u64,
    /// Mini-batch size for plain SGD; `None` trains full-batch.
    pub batch_size: Option<usize>,
}

impl NetworkConfig {
    pub const HIDDEN: [usize; 4] = [64, 32, 16, 8];

    pub fn for_inputs(n_features: usize) -> Self {
        let mut layer_sizes = vec![n_features];
        layer_sizes.extend_from_slice(&Self::HIDDEN);
        layer_sizes.push(1);
        Self {
            layer_sizes,
            dropout_rate: 0.3,
            learning_rate: 0.01,
            seed: 0,
            batch_size: Some(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() != 6 {
            return Err(Error::Config(format!(
                "layer_sizes must list 6 widths (5 dense layers), got {}",
                self.layer_sizes.len()
            )));
        }
        if let Some(i) = self.layer_sizes.iter().position(|&w| w == 0) {
            return Err(Error::Config(format!("layer_sizes[{i}] is zero")));
        }
        if *self.layer_sizes.last().unwrap() != 1 {
            return Err(Error::Config("output width must be 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// Shape `(fan_in, fan_out)`.
    pub weights: Tensor2,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn fan_in(&self) -> usize {
        self.weights.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.cols()
    }
}

/// Ordered dense-layer parameters. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub layers: Vec<DenseLayer>,
}

impl ModelParams {
    pub fn zeros(layer_sizes: &[usize]) -> Self {
        let layers = layer_sizes
            .windows(2)
            .map(|w| DenseLayer {
                weights: Tensor2::zeros(w[0], w[1]),
                bias: vec![0.0; w[1]],
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.layer_sizes())
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes: Vec<usize> = self.layers.iter().map(DenseLayer::fan_in).collect();
        if let Some(last) = self.layers.last() {
            sizes.push(last.fan_out());
        }
        sizes
    }

    /// `(rows, cols)` of every weight matrix.
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| l.weights.shape()).collect()
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.shapes() == other.shapes()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.data().len() + l.bias.len()).sum()
    }

    /// Every entry in layer-major order: weights row-major, then bias.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.data().iter().chain(l.bias.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| {
            let DenseLayer { weights, bias } = l;
            weights.data_mut().iter_mut().chain(bias.iter_mut())
        })
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    /// Global L2 norm over all entries.
    pub fn l2_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|v| *v *= factor);
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, other: &ModelParams, alpha: f64) -> Result<()> {
        self.check_shape(other)?;
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &ModelParams) -> f64 {
        self.values()
            .zip(other.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn check_shape(&self, other: &ModelParams) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "parameter shapes {:?} vs {:?}",
                self.shapes(),
                other.shapes()
            )))
        }
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_network(config: &NetworkConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::zeros(&config.layer_sizes);
    for layer in &mut params.layers {
        let bound = (6.0 / (layer.fan_in() + layer.fan_out()) as f64).sqrt();
        for w in layer.weights.data_mut() {
            *w = rng.random_range(-bound..bound);
        }
    }
    Ok(params)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Train { dropout: f64 },
    Eval,
}

/// Intermediate values needed by backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input batch; `activations[l + 1]` is the output of layer `l`.
    pub activations: Vec<Tensor2>,
    pub pre_activations: Vec<Tensor2>,
    /// One keep-mask per hidden layer, row-major `batch x width`.
    pub masks: Vec<Vec<bool>>,
    /// Inverted-dropout scale applied to kept units.
    pub keep_scale: f64,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.activations[0].rows()
    }

    pub fn predictions(&self) -> Vec<f64> {
        self.activations.last().map(|a| a.column(0)).unwrap_or_default()
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `out = input · weights + bias`, one row per example.
fn affine(input: &Tensor2, layer: &DenseLayer) -> Tensor2 {
    let (batch, fan_in) = input.shape();
    let fan_out = layer.fan_out();
    let mut out = Tensor2::zeros(batch, fan_out);
    for r in 0..batch {
        let x = input.row(r);
        let o = out.row_mut(r);
        o.copy_from_slice(&layer.bias);
        for (k, &xk) in x.iter().enumerate().take(fan_in) {
            if xk == 0.0 {
                continue;
            }
            let w = layer.weights.row(k);
            for (oj, &wj) in o.iter_mut().zip(w) {
                *oj += xk * wj;
            }
        }
    }
    out
}

pub fn forward<R: Rng + ?Sized>(
    params: &ModelParams,
    inputs: &Tensor2,
    mode: Mode,
    rng: &mut R,
) -> Result<(Vec<f64>, ForwardCache)> {
    let Some(first) = params.layers.first() else {
        return Err(Error::Config("network has no layers".into()));
    };
    if inputs.cols() != first.fan_in() {
        return Err(Error::Dimension(format!(
            "inputs have {} columns, network expects {}",
            inputs.cols(),
            first.fan_in()
        )));
    }
    let dropout = match mode {
        Mode::Train { dropout } if dropout > 0.0 => {
            if !(0.0..1.0).contains(&dropout) {
                return Err(Error::Config(format!("dropout {dropout} outside [0, 1)")));
            }
            dropout
        }
        _ => 0.0,
    };
    let keep_scale = 1.0 / (1.0 - dropout);
    let n_layers = params.layers.len();
    let mut activations = Vec::with_capacity(n_layers + 1);
    let mut pre_activations = Vec::with_capacity(n_layers);
    let mut masks = Vec::with_capacity(n_layers.saturating_sub(1));
    activations.push(inputs.clone());

    for (l, layer) in params.layers.iter().enumerate() {
        let z = affine(activations.last().unwrap(), layer);
        let mut a = z.clone();
        if l + 1 < n_layers {
            let mut mask = vec![true; a.data().len()];
            for (v, keep) in a.data_mut().iter_mut().zip(mask.iter_mut()) {
                let relu = v.max(0.0);
                if dropout > 0.0 {
                    *keep = rng.random::<f64>() >= dropout;
                }
                *v = if *keep { relu * keep_scale } else { 0.0 };
            }
            masks.push(mask);
        } else {
            a.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
        }
        pre_activations.push(z);
        activations.push(a);
    }

    let cache = ForwardCache {
        activations,
        pre_activations,
        masks,
        keep_scale,
    };
    Ok((cache.predictions(), cache))
}

/// Deterministic eval-mode predictions.
pub fn predict(params: &ModelParams, inputs: &Tensor2) -> Result<Vec<f64>> {
    // Eval mode never draws from the generator.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    forward(params, inputs, Mode::Eval, &mut rng).map(|(p, _)| p)
}

/// Mean binary cross-entropy.
pub fn bce_loss(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Domain("loss of an empty batch".into()));
    }
    if predictions.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let total: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / predictions.len() as f64)
}

fn check_cache(params: &ModelParams, cache: &ForwardCache, inputs: &Tensor2, labels: &[f64]) -> Result<()> {
    let n_layers = params.layers.len();
    if cache.pre_activations.len() != n_layers || cache.activations.len() != n_layers + 1 {
        return Err(Error::Consistency(format!(
            "cache holds {} layers, network has {n_layers}",
            cache.pre_activations.len()
        )));
    }
    for (l, (z, layer)) in cache.pre_activations.iter().zip(&params.layers).enumerate() {
        if z.cols() != layer.fan_out() || z.rows() != inputs.rows() {
            return Err(Error::Consistency(format!("layer {l} cache shape {:?}", z.shape())));
        }
    }
    if cache.activations[0] != *inputs {
        return Err(Error::Consistency("cache was produced from different inputs".into()));
    }
    if labels.len() != inputs.rows() {
        return Err(Error::Dimension(format!(
            "{} labels for {} examples",
            labels.len(),
            inputs.rows()
        )));
    }
    Ok(())
}

/// Per-example error signals `dLoss_i/dz` for every layer.
fn error_signals(params: &ModelParams, cache: &ForwardCache, labels: &[f64]) -> Vec<Tensor2> {
    let n_layers = params.layers.len();
    let mut deltas: Vec<Tensor2> = Vec::with_capacity(n_layers);
    let out = cache.activations.last().unwrap();
    let mut delta = Tensor2::zeros(out.rows(), 1);
    for (r, &y) in labels.iter().enumerate() {
        delta.set(r, 0, out.get(r, 0) - y);
    }
    deltas.push(delta);
    for l in (0..n_layers - 1).rev() {
        let next = &params.layers[l + 1];
        let upstream = deltas.last().unwrap();
        let z = &cache.pre_activations[l];
        let mask = &cache.masks[l];
        let width = z.cols();
        let mut d = Tensor2::zeros(z.rows(), width);
        for r in 0..z.rows() {
            let up = upstream.row(r);
            let zr = z.row(r);
            let dr = d.row_mut(r);
            for j in 0..width {
                let idx = r * width + j;
                if zr[j] <= 0.0 || !mask[idx] {
                    continue;
                }
                let w = next.weights.row(j);
                let s: f64 = w.iter().zip(up).map(|(a, b)| a * b).sum();
                dr[j] = s * cache.keep_scale;
            }
        }
        deltas.push(d);
    }
    deltas.reverse();
    deltas
}

/// Accumulates `scale * a_iᵀ δ_i` over the given example rows into `grads`.
fn accumulate(
    grads: &mut ModelParams,
    cache: &ForwardCache,
    deltas: &[Tensor2],
    rows: std::ops::Range<usize>,
    scale: f64,
) {
    for (l, layer) in grads.layers.iter_mut().enumerate() {
        let a = &cache.activations[l];
        let d = &deltas[l];
        for r in rows.clone() {
            let ar = a.row(r);
            let dr = d.row(r);
            for (k, &ak) in ar.iter().enumerate() {
                if ak == 0.0 {
                    continue;
                }
                let g = layer.weights.row_mut(k);
                for (gj, &dj) in g.iter_mut().zip(dr) {
                    *gj += scale * ak * dj;
                }
            }
            for (b, &dj) in layer.bias.iter_mut().zip(dr) {
                *b += scale * dj;
            }
        }
    }
}

/// Gradient of the mean BCE over the batch, given the masks in `cache`.
pub fn backward(params: &ModelParams, cache: &ForwardCache, inputs: &Tensor2, labels: &[f64]) -> Result<ModelParams> {
    check_cache(params, cache, inputs, labels)?;
    let batch = inputs.rows();
    if batch == 0 {
        return Err(Error::Domain("gradient of an empty batch".into()));
    }
    let deltas = error_signals(params, cache, labels);
    let mut grads = params.zeros_like();
    accumulate(&mut grads, cache, &deltas, 0..batch, 1.0 / batch as f64);
    Ok(grads)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerExampleGrads {
    pub grads: Vec<ModelParams>,
}

impl PerExampleGrads {
    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn mean(&self) -> Result<ModelParams> {
        let first = self
            .grads
            .first()
            .ok_or_else(|| Error::Domain("mean of zero gradients".into()))?;
        let mut acc = first.zeros_like();
        for g in &self.grads {
            acc.add_scaled(g, 1.0)?;
        }
        acc.scale(1.0 / self.grads.len() as f64);
        Ok(acc)
    }
}

/// One gradient per example, all from a single batched forward pass so that
/// each example sees exactly the dropout mask the batch would have used.
pub fn per_example_backward<R: Rng + ?Sized>(
    params: &ModelParams,
    inputs: &Tensor2,
    labels: &[f64],
    mode: Mode,
    rng: &mut R,
) -> Result<PerExampleGrads> {
    let (_, cache) = forward(params, inputs, mode, rng)?;
    check_cache(params, &cache, inputs, labels)?;
    let deltas = error_signals(params, &cache, labels);
    let grads = (0..inputs.rows())
        .map(|r| {
            let mut g = params.zeros_like();
            accumulate(&mut g, &cache, &deltas, r..r + 1, 1.0);
            g
        })
        .collect();
    Ok(PerExampleGrads { grads })
}

/// `w ← w − η·g` for every entry.
pub fn sgd_step(params: &ModelParams, grads: &ModelParams, learning_rate: f64) -> Result<ModelParams> {
    params.check_shape(grads)?;
    if !grads.is_finite() {
        return Err(Error::Numerical("non-finite gradient; step aborted".into()));
    }
    let mut next = params.clone();
    for (w, g) in next.values_mut().zip(grads.values()) {
        *w -= learning_rate * g;
    }
    if !next.is_finite() {
        return Err(Error::Numerical("parameters overflowed during step".into()));
    }
    Ok(next)
}
