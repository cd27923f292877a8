//! Feedforward multiclass network: ReLU hidden layers, softmax output,
//! softmax cross-entropy loss, backpropagation, plain mini-batch SGD.
//!
//! Training is single-threaded and fully deterministic given (data, config,
//! seed); weight init is uniform [-sqrt(1/fan_in), +sqrt(1/fan_in)] with
//! zero biases, and the epoch shuffles draw from the same seeded stream.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forest::argmax_smallest_f64;
use crate::rng::Xorshift64Star;

#[derive(Debug, Error)]
pub enum MlpError {
    #[error("expected input of length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("class id {id} out of range (C = {class_count})")]
    BadClassId { id: usize, class_count: usize },
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("need >= 2 classes and n >= batch size")]
    DegenerateInput,
    #[error("training diverged: non-finite loss at epoch {epoch}")]
    Diverged { epoch: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Softmax,
}

/// Dense layer; weights stored row-major as out x in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl LayerParams {
    fn affine(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.biases.clone();
        for (o, w_row) in out.iter_mut().zip(self.weights.chunks(self.input_dim)) {
            *o += w_row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden_sizes: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden_sizes: vec![100],
            learning_rate: 0.001,
            epochs: 200,
            batch_size: 64,
            seed: 42,
            shuffle: true,
        }
    }
}

impl MlpConfig {
    fn validate(&self) -> Result<(), MlpError> {
        if self.learning_rate <= 0.0 {
            return Err(MlpError::BadConfig("learning_rate must be > 0".into()));
        }
        if self.epochs == 0 {
            return Err(MlpError::BadConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(MlpError::BadConfig("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epoch_loss: Vec<f64>,
    pub epoch_accuracy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layers: Vec<LayerParams>,
    pub input_dim: usize,
    pub class_count: usize,
    pub train_log: TrainLog,
}

/// Per-layer activations cached by a forward pass, consumed by backward.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// inputs[l] is the input to layer l; inputs[0] is x itself.
    inputs: Vec<Vec<f64>>,
    /// pre[l] is layer l's pre-activation (v = Wx + b).
    pre: Vec<Vec<f64>>,
    probs: Vec<f64>,
}

impl ForwardCache {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Per-layer pre-activations; lets callers detect inputs sitting on
    /// the ReLU kink where the loss is not differentiable.
    pub fn pre(&self) -> &[Vec<f64>] {
        &self.pre
    }
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub d_weights: Vec<f64>,
    pub d_biases: Vec<f64>,
}

fn softmax_stable(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

impl MlpModel {
    pub fn forward(&self, x: &[f64]) -> Result<ForwardCache, MlpError> {
        if x.len() != self.input_dim {
            return Err(MlpError::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        let mut inputs = vec![x.to_vec()];
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = x.to_vec();
        let mut probs = Vec::new();
        for layer in &self.layers {
            let v = layer.affine(&current);
            pre.push(v.clone());
            current = match layer.activation {
                Activation::Relu => v.iter().map(|&z| z.max(0.0)).collect(),
                Activation::Softmax => {
                    probs = softmax_stable(&v);
                    probs.clone()
                }
            };
            inputs.push(current.clone());
        }
        Ok(ForwardCache { inputs, pre, probs })
    }

    pub fn probabilities(cache: &ForwardCache) -> &[f64] {
        &cache.probs
    }

    /// e = onehot(target) - probabilities. For softmax + cross-entropy this
    /// is the negative gradient of the loss w.r.t. the output logits.
    pub fn output_error(&self, probs: &[f64], target: usize) -> Result<Vec<f64>, MlpError> {
        if target >= self.class_count {
            return Err(MlpError::BadClassId {
                id: target,
                class_count: self.class_count,
            });
        }
        Ok(probs
            .iter()
            .enumerate()
            .map(|(j, p)| if j == target { 1.0 - p } else { -p })
            .collect())
    }

    /// Reverse accumulation of cross-entropy gradients through every layer.
    /// ReLU subgradient at exactly 0 is 0.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        error: &[f64],
    ) -> Result<Vec<LayerGrads>, MlpError> {
        if error.len() != self.class_count || cache.pre.len() != self.layers.len() {
            return Err(MlpError::DimensionMismatch {
                expected: self.class_count,
                got: error.len(),
            });
        }
        // d(loss)/d(logits) = probs - onehot = -error
        let mut delta: Vec<f64> = error.iter().map(|e| -e).collect();
        let mut grads: Vec<LayerGrads> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[l];
            let mut d_weights = vec![0.0; layer.weights.len()];
            for (j, dj) in delta.iter().enumerate() {
                let row = &mut d_weights[j * layer.input_dim..(j + 1) * layer.input_dim];
                for (dw, xi) in row.iter_mut().zip(input) {
                    *dw = dj * xi;
                }
            }
            let d_biases = delta.clone();
            if l > 0 {
                let mut prev = vec![0.0; layer.input_dim];
                for (j, dj) in delta.iter().enumerate() {
                    let row = &layer.weights[j * layer.input_dim..(j + 1) * layer.input_dim];
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += w * dj;
                    }
                }
                for (p, v) in prev.iter_mut().zip(&cache.pre[l - 1]) {
                    if *v <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
            grads.push(LayerGrads {
                d_weights,
                d_biases,
            });
        }
        grads.reverse();
        Ok(grads)
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<usize>, MlpError> {
        x.iter()
            .map(|row| Ok(argmax_smallest_f64(&self.forward(row)?.probs)))
            .collect()
    }

    pub fn predict_proba(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, MlpError> {
        x.iter().map(|row| Ok(self.forward(row)?.probs)).collect()
    }
}

/// w <- w - eta * grad, in place.
pub fn sgd_step(layers: &mut [LayerParams], grads: &[LayerGrads], learning_rate: f64) {
    for (layer, g) in layers.iter_mut().zip(grads) {
        for (w, dw) in layer.weights.iter_mut().zip(&g.d_weights) {
            *w -= learning_rate * dw;
        }
        for (b, db) in layer.biases.iter_mut().zip(&g.d_biases) {
            *b -= learning_rate * db;
        }
    }
}

pub fn init_layers(
    input_dim: usize,
    hidden_sizes: &[usize],
    class_count: usize,
    rng: &mut Xorshift64Star,
) -> Vec<LayerParams> {
    let mut dims = vec![input_dim];
    dims.extend_from_slice(hidden_sizes);
    dims.push(class_count);
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for w in dims.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = (1.0 / fan_in as f64).sqrt();
        let weights = (0..fan_in * fan_out)
            .map(|_| rng.uniform(-bound, bound))
            .collect();
        let is_last = layers.len() == dims.len() - 2;
        layers.push(LayerParams {
            weights,
            biases: vec![0.0; fan_out],
            input_dim: fan_in,
            output_dim: fan_out,
            activation: if is_last {
                Activation::Softmax
            } else {
                Activation::Relu
            },
        });
    }
    layers
}

pub fn fit_mlp(
    x: &[Vec<f64>],
    y: &[usize],
    class_count: usize,
    config: &MlpConfig,
) -> Result<MlpModel, MlpError> {
    config.validate()?;
    let n = x.len();
    let present: std::collections::BTreeSet<usize> = y.iter().copied().collect();
    if present.len() < 2 || n < config.batch_size {
        return Err(MlpError::DegenerateInput);
    }
    let input_dim = x[0].len();
    let mut rng = Xorshift64Star::new(config.seed);
    let mut model = MlpModel {
        layers: init_layers(input_dim, &config.hidden_sizes, class_count, &mut rng),
        input_dim,
        class_count,
        train_log: TrainLog::default(),
    };

    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..config.epochs {
        if config.shuffle {
            rng.shuffle(&mut order);
        }
        let mut epoch_loss = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let mut acc: Option<Vec<LayerGrads>> = None;
            for &i in batch {
                let cache = model.forward(&x[i])?;
                let p_target = cache.probs[y[i]];
                epoch_loss += -p_target.ln();
                if argmax_smallest_f64(&cache.probs) == y[i] {
                    correct += 1;
                }
                let error = model.output_error(&cache.probs, y[i])?;
                let grads = model.backward(&cache, &error)?;
                match &mut acc {
                    None => acc = Some(grads),
                    Some(a) => {
                        for (ag, g) in a.iter_mut().zip(&grads) {
                            for (x, y) in ag.d_weights.iter_mut().zip(&g.d_weights) {
                                *x += y;
                            }
                            for (x, y) in ag.d_biases.iter_mut().zip(&g.d_biases) {
                                *x += y;
                            }
                        }
                    }
                }
            }
            if let Some(mut grads) = acc {
                let scale = 1.0 / batch.len() as f64;
                for g in &mut grads {
                    for v in &mut g.d_weights {
                        *v *= scale;
                    }
                    for v in &mut g.d_biases {
                        *v *= scale;
                    }
                }
                sgd_step(&mut model.layers, &grads, config.learning_rate);
            }
        }
        let mean_loss = epoch_loss / n as f64;
        if !mean_loss.is_finite() {
            return Err(MlpError::Diverged { epoch });
        }
        model.train_log.epoch_loss.push(mean_loss);
        model
            .train_log
            .epoch_accuracy
            .push(correct as f64 / n as f64);
    }
    Ok(model)
}
