//! A small dense classifier trained with mini-batch SGD.
//!
//! The model is a stack of fully connected layers with ReLU activations and
//! a softmax head, optimised against negative log-likelihood. Gradients are
//! computed analytically by backpropagation. Everything here is a pure
//! function of its inputs: given the same parameters, data, and seed,
//! [`local_train`] returns bit-identical results.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fmath;
use crate::rng;

/// Probabilities below this are clamped before taking a logarithm.
const PROB_FLOOR: f64 = 1e-12;

/// Hyper-parameters for one client's local training pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!(
                "learning rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// One fully connected layer, row-major `outputs x inputs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    weights: Vec<f64>,
    bias: Vec<f64>,
    inputs: usize,
    outputs: usize,
}

impl Layer {
    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }
}

/// All parameters of a classifier; the unit that clients exchange with the
/// server, flattened to a length-`N` vector during aggregation.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    layers: Vec<Layer>,
}

impl ModelParams {
    /// All-zero parameters for the layer widths `dims = [in, hidden.., out]`.
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::build(dims, |_| 0.0)
    }

    /// Seeded initialisation, uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn seeded_init(dims: &[usize], seed: u64) -> Result<Self> {
        let mut rng = rng::seeded(seed);
        Self::build(dims, |fan_in| {
            let b = 1.0 / fmath::sqrt(fan_in as f64);
            rng.random_range(-b..=b)
        })
    }

    fn build(dims: &[usize], mut value: impl FnMut(usize) -> f64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidConfig(
                "model needs at least an input and an output dimension".into(),
            ));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (inputs, outputs) = (w[0], w[1]);
            let weights = (0..inputs * outputs).map(|_| value(inputs)).collect();
            let bias = (0..outputs).map(|_| value(inputs)).collect();
            layers.push(Layer {
                weights,
                bias,
                inputs,
                outputs,
            });
        }
        Ok(ModelParams { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Layer widths `[in, hidden.., out]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].inputs];
        dims.extend(self.layers.iter().map(|l| l.outputs));
        dims
    }

    pub fn feature_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn class_count(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    /// Total number of parameters `N`.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Serialises all parameters into one vector, layer by layer, weights
    /// before biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            flat.extend_from_slice(&layer.weights);
            flat.extend_from_slice(&layer.bias);
        }
        flat
    }

    /// Rebuilds parameters with this model's shape from a flat vector.
    pub fn unflatten(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                actual: flat.len(),
                context: "unflatten",
            });
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut at = 0;
        for layer in &self.layers {
            let nw = layer.weights.len();
            let nb = layer.bias.len();
            layers.push(Layer {
                weights: flat[at..at + nw].to_vec(),
                bias: flat[at + nw..at + nw + nb].to_vec(),
                inputs: layer.inputs,
                outputs: layer.outputs,
            });
            at += nw + nb;
        }
        Ok(ModelParams { layers })
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.inputs == b.inputs && a.outputs == b.outputs)
    }
}

/// A labelled mini-batch, features stored row-major `len x feature_dim`.
#[derive(Clone, Debug)]
pub struct Batch {
    features: Vec<f64>,
    labels: Vec<usize>,
    feature_dim: usize,
}

impl Batch {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, feature_dim: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyInput("batch"));
        }
        if features.len() != labels.len() * feature_dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * feature_dim,
                actual: features.len(),
                context: "batch features",
            });
        }
        Ok(Batch {
            features,
            labels,
            feature_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }
}

/// Work buffers reused across samples of a batch.
struct Scratch {
    /// Post-activation output of each layer.
    activations: Vec<Vec<f64>>,
    /// Backpropagated error for each layer's output.
    deltas: Vec<Vec<f64>>,
}

impl Scratch {
    fn for_model(params: &ModelParams) -> Self {
        let activations = params.layers.iter().map(|l| vec![0.0; l.outputs]).collect();
        let deltas = params.layers.iter().map(|l| vec![0.0; l.outputs]).collect();
        Scratch {
            activations,
            deltas,
        }
    }
}

fn forward_into(params: &ModelParams, features: &[f64], scratch: &mut Scratch) {
    let last = params.layers.len() - 1;
    for (k, layer) in params.layers.iter().enumerate() {
        // Split scratch so the previous layer's output can be read while the
        // current one is written.
        let (done, rest) = scratch.activations.split_at_mut(k);
        let input: &[f64] = if k == 0 { features } else { &done[k - 1] };
        let out = &mut rest[0];
        for o in 0..layer.outputs {
            let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
            let mut z = layer.bias[o];
            for (w, x) in row.iter().zip(input) {
                z += w * x;
            }
            out[o] = if k == last { z } else { z.max(0.0) };
        }
    }
    softmax_in_place(&mut scratch.activations[last]);
}

/// Numerically stable softmax (shifts by the max logit).
fn softmax_in_place(logits: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for &z in logits.iter() {
        max = max.max(z);
    }
    let mut sum = 0.0;
    for z in logits.iter_mut() {
        *z = fmath::exp(*z - max);
        sum += *z;
    }
    for z in logits.iter_mut() {
        *z /= sum;
    }
}

/// Class probabilities for a single feature vector.
pub fn mlp_forward(params: &ModelParams, features: &[f64]) -> Result<Vec<f64>> {
    if features.len() != params.feature_dim() {
        return Err(Error::DimensionMismatch {
            expected: params.feature_dim(),
            actual: features.len(),
            context: "forward features",
        });
    }
    let mut scratch = Scratch::for_model(params);
    forward_into(params, features, &mut scratch);
    Ok(scratch.activations.pop().expect("model has layers"))
}

/// Negative log-likelihood of the true class, `-ln(probs[label])`.
///
/// The probability is clamped from below so a confidently wrong model yields
/// a large finite loss instead of infinity.
pub fn nll_loss(probs: &[f64], label: usize) -> Result<f64> {
    if label >= probs.len() {
        return Err(Error::InvalidConfig(alloc::format!(
            "label {label} out of range for {} classes",
            probs.len()
        )));
    }
    Ok(-fmath::ln(probs[label].max(PROB_FLOOR)))
}

/// Accumulates one sample's gradient (scaled by `scale`) into `grad`.
fn accumulate_sample(
    params: &ModelParams,
    features: &[f64],
    label: usize,
    scale: f64,
    grad: &mut ModelParams,
    scratch: &mut Scratch,
) {
    forward_into(params, features, scratch);
    let last = params.layers.len() - 1;

    // Softmax + NLL collapse to (p - onehot) at the output.
    scratch.deltas[last].copy_from_slice(&scratch.activations[last]);
    scratch.deltas[last][label] -= 1.0;

    for k in (0..params.layers.len()).rev() {
        let layer = &params.layers[k];
        let (before, from_k) = scratch.deltas.split_at_mut(k);
        let delta = &from_k[0];
        let input: &[f64] = if k == 0 {
            features
        } else {
            &scratch.activations[k - 1]
        };
        let glayer = &mut grad.layers[k];
        for o in 0..layer.outputs {
            let d = delta[o] * scale;
            if d != 0.0 {
                let grow = &mut glayer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (g, x) in grow.iter_mut().zip(input) {
                    *g += d * x;
                }
            }
            glayer.bias[o] += d;
        }
        if k > 0 {
            let prev = &mut before[k - 1];
            for p in prev.iter_mut() {
                *p = 0.0;
            }
            for o in 0..layer.outputs {
                let d = delta[o];
                if d != 0.0 {
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
            }
            // ReLU gate: no gradient where the unit was inactive.
            for (p, &a) in prev.iter_mut().zip(&scratch.activations[k - 1]) {
                if a <= 0.0 {
                    *p = 0.0;
                }
            }
        }
    }
}

/// Mean gradient of the NLL loss over a batch, same shape as `params`.
pub fn gradient(params: &ModelParams, batch: &Batch) -> Result<ModelParams> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("batch"));
    }
    if batch.feature_dim != params.feature_dim() {
        return Err(Error::DimensionMismatch {
            expected: params.feature_dim(),
            actual: batch.feature_dim,
            context: "batch features",
        });
    }
    let classes = params.class_count();
    let mut grad = ModelParams::zeros(&params.dims())?;
    let mut scratch = Scratch::for_model(params);
    let scale = 1.0 / batch.len() as f64;
    for i in 0..batch.len() {
        let label = batch.label(i);
        if label >= classes {
            return Err(Error::InvalidConfig(alloc::format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        accumulate_sample(params, batch.row(i), label, scale, &mut grad, &mut scratch);
    }
    Ok(grad)
}

/// One gradient-descent step: `params - learning_rate * grad`, elementwise.
pub fn sgd_step(params: &ModelParams, grad: &ModelParams, learning_rate: f64) -> Result<ModelParams> {
    if !params.same_shape(grad) {
        return Err(Error::DimensionMismatch {
            expected: params.param_count(),
            actual: grad.param_count(),
            context: "sgd step",
        });
    }
    let mut next = params.clone();
    step_in_place(&mut next, grad, learning_rate);
    Ok(next)
}

fn step_in_place(params: &mut ModelParams, grad: &ModelParams, learning_rate: f64) {
    for (layer, glayer) in params.layers.iter_mut().zip(&grad.layers) {
        for (w, g) in layer.weights.iter_mut().zip(&glayer.weights) {
            *w -= learning_rate * g;
        }
        for (b, g) in layer.bias.iter_mut().zip(&glayer.bias) {
            *b -= learning_rate * g;
        }
    }
}

/// Runs `cfg.local_epochs` passes of mini-batch SGD over `data`.
///
/// Sample order is reshuffled every epoch from the seeded generator; a short
/// final batch is trained on rather than dropped. Deterministic per seed.
pub fn local_train(params: &ModelParams, data: &Dataset, cfg: &TrainConfig) -> Result<ModelParams> {
    cfg.validate()?;
    if cfg.local_epochs == 0 {
        return Ok(params.clone());
    }
    if data.is_empty() {
        return Err(Error::EmptyInput("training data"));
    }
    if data.feature_dim() != params.feature_dim() {
        return Err(Error::DimensionMismatch {
            expected: params.feature_dim(),
            actual: data.feature_dim(),
            context: "training data",
        });
    }
    let classes = params.class_count();
    let mut current = params.clone();
    let mut rng = rng::seeded(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = ModelParams::zeros(&params.dims())?;
    let mut scratch = Scratch::for_model(params);

    for _ in 0..cfg.local_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            for layer in &mut grad.layers {
                layer.weights.iter_mut().for_each(|g| *g = 0.0);
                layer.bias.iter_mut().for_each(|g| *g = 0.0);
            }
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let label = data.label(i);
                if label >= classes {
                    return Err(Error::InvalidConfig(alloc::format!(
                        "label {label} out of range for {classes} classes"
                    )));
                }
                accumulate_sample(&current, data.row(i), label, scale, &mut grad, &mut scratch);
            }
            step_in_place(&mut current, &grad, cfg.learning_rate);
        }
    }
    Ok(current)
}

/// Mean NLL loss of the model over a dataset.
pub fn mean_loss(params: &ModelParams, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput("dataset"));
    }
    let mut scratch = Scratch::for_model(params);
    let last = params.layers.len() - 1;
    let mut total = 0.0;
    for i in 0..data.len() {
        forward_into(params, data.row(i), &mut scratch);
        total += nll_loss(&scratch.activations[last], data.label(i))?;
    }
    Ok(total / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_dataset, DataSpec};

    fn identity_2x2() -> ModelParams {
        let params = ModelParams::zeros(&[2, 2]).unwrap();
        params.unflatten(&[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap()
    }

    #[test]
    fn zero_params_give_uniform_probs() {
        let params = ModelParams::zeros(&[3, 2]).unwrap();
        let probs = mlp_forward(&params, &[0.7, -1.0, 4.0]).unwrap();
        assert_eq!(probs, vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_of_identity_layer() {
        let probs = mlp_forward(&identity_2x2(), &[2.0, 0.0]).unwrap();
        assert!((probs[0] - 0.8807970779778824).abs() < 1e-12);
        assert!((probs[1] - 0.11920292202211755).abs() < 1e-12);
    }

    #[test]
    fn probs_sum_to_one_for_random_params() {
        let params = ModelParams::seeded_init(&[5, 8, 3], 11).unwrap();
        let probs = mlp_forward(&params, &[0.3, -2.0, 1.5, 0.0, 9.0]).unwrap();
        let sum: f64 = probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(probs.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn forward_rejects_wrong_input_width() {
        let params = ModelParams::zeros(&[3, 2]).unwrap();
        assert!(matches!(
            mlp_forward(&params, &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn nll_examples() {
        assert!((nll_loss(&[0.5, 0.5], 1).unwrap() - core::f64::consts::LN_2).abs() < 1e-12);
        let loss = nll_loss(&[0.8807970779778824, 0.11920292202211755], 0).unwrap();
        assert!((loss - 0.12692801104297252).abs() < 1e-9);
        assert_eq!(nll_loss(&[0.0, 1.0], 1).unwrap(), 0.0);
        // Zero probability is clamped, not infinite.
        let clamped = nll_loss(&[0.0, 1.0], 0).unwrap();
        assert!(clamped.is_finite() && clamped > 20.0);
    }

    #[test]
    fn zero_params_balanced_batch_has_zero_output_bias_gradient() {
        let params = ModelParams::zeros(&[2, 4, 2]).unwrap();
        let batch = Batch::new(vec![1.0, 2.0, 1.0, 2.0], vec![0, 1], 2).unwrap();
        let grad = gradient(&params, &batch).unwrap();
        let out_bias = grad.layers().last().unwrap().bias();
        assert!(out_bias.iter().all(|&g| g.abs() < 1e-15));
    }

    #[test]
    fn gradient_shape_matches_params() {
        let params = ModelParams::seeded_init(&[4, 6, 3], 5).unwrap();
        let batch = Batch::new(vec![0.1; 8], vec![0, 2], 4).unwrap();
        let grad = gradient(&params, &batch).unwrap();
        assert_eq!(grad.dims(), params.dims());
        assert_eq!(grad.param_count(), params.param_count());
    }

    #[test]
    fn sgd_step_examples() {
        let params = ModelParams::zeros(&[1, 1])
            .unwrap()
            .unflatten(&[1.0, 0.0])
            .unwrap();
        let grad = params.unflatten(&[0.5, 0.0]).unwrap();
        let next = sgd_step(&params, &grad, 0.01).unwrap();
        assert!((next.flatten()[0] - 0.995).abs() < 1e-15);

        let zero_grad = params.unflatten(&[0.0, 0.0]).unwrap();
        assert_eq!(sgd_step(&params, &zero_grad, 0.5).unwrap(), params);
        assert_eq!(sgd_step(&params, &grad, 0.0).unwrap(), params);
    }

    fn toy_separable() -> Dataset {
        synth_dataset(&DataSpec {
            classes: 2,
            feature_dim: 4,
            per_class: 30,
            separation: 5.0,
            noise_std: 0.5,
            seed: 3,
        })
        .unwrap()
    }

    #[test]
    fn local_train_zero_epochs_is_identity() {
        let params = ModelParams::seeded_init(&[4, 2], 9).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.1,
            local_epochs: 0,
            batch_size: 8,
            seed: 1,
        };
        assert_eq!(local_train(&params, &toy_separable(), &cfg).unwrap(), params);
    }

    #[test]
    fn local_train_is_deterministic() {
        let params = ModelParams::seeded_init(&[4, 8, 2], 9).unwrap();
        let data = toy_separable();
        let cfg = TrainConfig {
            learning_rate: 0.05,
            local_epochs: 3,
            batch_size: 7,
            seed: 1234,
        };
        let a = local_train(&params, &data, &cfg).unwrap();
        let b = local_train(&params, &data, &cfg).unwrap();
        assert_eq!(a.flatten(), b.flatten());
    }

    #[test]
    fn local_train_reduces_loss_on_separable_data() {
        let params = ModelParams::seeded_init(&[4, 8, 2], 9).unwrap();
        let data = toy_separable();
        let cfg = TrainConfig {
            learning_rate: 0.05,
            local_epochs: 10,
            batch_size: 8,
            seed: 7,
        };
        let trained = local_train(&params, &data, &cfg).unwrap();
        assert!(mean_loss(&trained, &data).unwrap() < mean_loss(&params, &data).unwrap());
    }

    #[test]
    fn local_train_rejects_empty_data_with_epochs() {
        let params = ModelParams::zeros(&[4, 2]).unwrap();
        let empty = Dataset::new(Vec::new(), Vec::new(), 4, 2).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.1,
            local_epochs: 1,
            batch_size: 4,
            seed: 0,
        };
        assert!(matches!(
            local_train(&params, &empty, &cfg),
            Err(Error::EmptyInput(_))
        ));
    }
}
