//! Minimal SGD trainer over the canonical architecture.
//!
//! Plain minibatch SGD on softmax cross-entropy, no momentum or
//! augmentation. It exists to produce a credible baseline from scratch;
//! externally trained weights load through the weights container instead.
//! Everything is deterministic in the seed: initialization draws layer by
//! layer in model order and the epoch shuffle comes from the same stream.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::mnist::Dataset;
use crate::model::{classify, forward, LayerKind, ModelError, ModelSpec, Parameters};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("loss became non-finite at step {step}")]
    Diverged { step: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// The documented baseline recipe: 10k-sample subset, 3 epochs, lr 0.1,
/// batch 32, seed 42.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f32,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            lr: 0.1,
            batch_size: 32,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: Parameters,
    pub epoch_losses: Vec<f32>,
}

/// Uniform init in +/- sqrt(6 / (fan_in + fan_out)), biases zero.
pub fn init_params(m: &ModelSpec, seed: u64) -> Parameters {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Parameters::new();
    for layer in &m.layers {
        let (fan_in, fan_out) = match layer.kind {
            LayerKind::Conv2d { out_ch, kh, kw, .. } => {
                let (wdims, _) = m.param_shapes(&layer.name).unwrap();
                (wdims[1] * kh * kw, out_ch * kh * kw)
            }
            LayerKind::Dense { out_features } => {
                let (wdims, _) = m.param_shapes(&layer.name).unwrap();
                (wdims[1], out_features)
            }
            _ => continue,
        };
        let (wdims, blen) = m.param_shapes(&layer.name).unwrap();
        let limit = (6.0 / (fan_in + fan_out) as f32).sqrt();
        let n: usize = wdims.iter().product();
        let data = (0..n).map(|_| rng.random_range(-limit..=limit)).collect();
        params.insert(
            &layer.name,
            Tensor::from_dims(&wdims, data).unwrap(),
            Tensor::zeros(Shape::new(vec![blen]).unwrap()),
        );
    }
    params
}

/// Per-layer weight and bias gradients, keyed like the parameters.
type Grads = std::collections::BTreeMap<String, (Vec<f32>, Vec<f32>)>;

/// Flattened per-layer gradients: (layer, weight grads, bias grads).
pub type LayerGrads = Vec<(String, Vec<f32>, Vec<f32>)>;

/// Forward pass keeping each layer's input, for the backward sweep.
fn forward_cached(
    m: &ModelSpec,
    p: &Parameters,
    input: &Tensor,
) -> Result<(Vec<Tensor>, Tensor), ModelError> {
    let mut inputs = Vec::with_capacity(m.layers.len());
    let mut t = input.clone();
    for layer in &m.layers {
        inputs.push(t.clone());
        t = crate::model::forward_layer(layer, p, &t)?;
    }
    Ok((inputs, t))
}

fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f32 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Loss and logits gradient of softmax cross-entropy for one sample.
fn cross_entropy_backward(logits: &Tensor, label: u8) -> (f32, Tensor) {
    let probs = softmax(logits.data());
    let loss = -probs[label as usize].max(1e-30).ln();
    let grad: Vec<f32> = probs
        .iter()
        .enumerate()
        .map(|(i, &p)| if i == label as usize { p - 1.0 } else { p })
        .collect();
    (loss, Tensor::new(logits.shape().clone(), grad).unwrap())
}

/// Backward sweep accumulating parameter gradients into `grads`.
fn accumulate_gradients(
    m: &ModelSpec,
    p: &Parameters,
    inputs: &[Tensor],
    mut grad: Tensor,
    grads: &mut Grads,
) -> Result<(), ModelError> {
    for (layer, input) in m.layers.iter().zip(inputs).rev() {
        grad = match &layer.kind {
            LayerKind::Relu => {
                let data = grad
                    .data()
                    .iter()
                    .zip(input.data())
                    .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                    .collect();
                Tensor::new(input.shape().clone(), data).unwrap()
            }
            LayerKind::Flatten => grad.reshaped(input.shape().dims())?,
            LayerKind::Dense { .. } => {
                let lp = p.get(&layer.name).unwrap();
                let wd = lp.weights.shape().dims();
                let (out_f, in_f) = (wd[0], wd[1]);
                let entry = grads
                    .entry(layer.name.clone())
                    .or_insert_with(|| (vec![0.0; out_f * in_f], vec![0.0; out_f]));
                let mut dx = vec![0.0f32; in_f];
                for o in 0..out_f {
                    let g = grad.data()[o];
                    entry.1[o] += g;
                    let row = &lp.weights.data()[o * in_f..(o + 1) * in_f];
                    let grow = &mut entry.0[o * in_f..(o + 1) * in_f];
                    for i in 0..in_f {
                        grow[i] += g * input.data()[i];
                        dx[i] += g * row[i];
                    }
                }
                Tensor::from_dims(&[in_f], dx)?
            }
            LayerKind::AvgPool { k, stride } => {
                let d = input.shape().dims();
                let (ch, in_h, in_w) = (d[0], d[1], d[2]);
                let od = grad.shape().dims();
                let (out_h, out_w) = (od[1], od[2]);
                let norm = 1.0 / (k * k) as f32;
                let mut dx = vec![0.0f32; ch * in_h * in_w];
                for c in 0..ch {
                    for y in 0..out_h {
                        for x in 0..out_w {
                            let g = grad.data()[c * out_h * out_w + y * out_w + x] * norm;
                            for i in 0..*k {
                                for j in 0..*k {
                                    dx[c * in_h * in_w
                                        + (y * stride + i) * in_w
                                        + (x * stride + j)] += g;
                                }
                            }
                        }
                    }
                }
                Tensor::from_dims(&[ch, in_h, in_w], dx)?
            }
            LayerKind::Conv2d {
                stride, padding, ..
            } => {
                let lp = p.get(&layer.name).unwrap();
                let wd = lp.weights.shape().dims();
                let (out_ch, in_ch, kh, kw) = (wd[0], wd[1], wd[2], wd[3]);
                let id = input.shape().dims();
                let (in_h, in_w) = (id[1], id[2]);
                let od = grad.shape().dims();
                let (out_h, out_w) = (od[1], od[2]);
                let entry = grads.entry(layer.name.clone()).or_insert_with(|| {
                    (vec![0.0; out_ch * in_ch * kh * kw], vec![0.0; out_ch])
                });
                let mut dx = vec![0.0f32; in_ch * in_h * in_w];
                for o in 0..out_ch {
                    for y in 0..out_h {
                        for x in 0..out_w {
                            let g = grad.data()[o * out_h * out_w + y * out_w + x];
                            entry.1[o] += g;
                            for c in 0..in_ch {
                                for i in 0..kh {
                                    let iy = (y * stride + i) as isize - *padding as isize;
                                    if iy < 0 || iy >= in_h as isize {
                                        continue;
                                    }
                                    for j in 0..kw {
                                        let ix = (x * stride + j) as isize - *padding as isize;
                                        if ix < 0 || ix >= in_w as isize {
                                            continue;
                                        }
                                        let xin =
                                            input.data()[c * in_h * in_w + iy as usize * in_w + ix as usize];
                                        let widx = ((o * in_ch + c) * kh + i) * kw + j;
                                        entry.0[widx] += g * xin;
                                        dx[c * in_h * in_w + iy as usize * in_w + ix as usize] +=
                                            g * lp.weights.data()[widx];
                                    }
                                }
                            }
                        }
                    }
                }
                Tensor::from_dims(&[in_ch, in_h, in_w], dx)?
            }
        };
    }
    Ok(())
}

/// Loss and gradients of one sample under the current parameters.
pub fn sample_gradients(
    m: &ModelSpec,
    p: &Parameters,
    image: &Tensor,
    label: u8,
) -> Result<(f32, LayerGrads), TrainError> {
    let (inputs, logits) = forward_cached(m, p, image)?;
    let (loss, grad) = cross_entropy_backward(&logits, label);
    let mut grads = Grads::new();
    accumulate_gradients(m, p, &inputs, grad, &mut grads)?;
    Ok((
        loss,
        grads.into_iter().map(|(k, (w, b))| (k, w, b)).collect(),
    ))
}

fn apply_step(p: &mut Parameters, grads: &Grads, scale: f32) {
    let names: Vec<String> = grads.keys().cloned().collect();
    for name in names {
        let (gw, gb) = &grads[&name];
        let lp = p.get(&name).unwrap();
        let new_w: Vec<f32> = lp
            .weights
            .data()
            .iter()
            .zip(gw)
            .map(|(&w, &g)| w - scale * g)
            .collect();
        let new_b: Vec<f32> = lp
            .bias
            .data()
            .iter()
            .zip(gb)
            .map(|(&b, &g)| b - scale * g)
            .collect();
        let w = Tensor::new(lp.weights.shape().clone(), new_w).unwrap();
        let b = Tensor::new(lp.bias.shape().clone(), new_b).unwrap();
        p.insert(&name, w, b);
    }
}

/// Train from the fixed initialization; deterministic in `cfg.seed`.
pub fn train_baseline(
    m: &ModelSpec,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut params = init_params(m, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5351_7566);
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for _ in 0..cfg.epochs {
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        for batch in indices.chunks(cfg.batch_size) {
            let mut grads = Grads::new();
            let mut batch_loss = 0.0f32;
            for &idx in batch {
                let (inputs, logits) = forward_cached(m, &params, &dataset.images[idx])?;
                let (loss, grad) = cross_entropy_backward(&logits, dataset.labels[idx]);
                batch_loss += loss;
                accumulate_gradients(m, &params, &inputs, grad, &mut grads)?;
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::Diverged { step });
            }
            apply_step(&mut params, &grads, cfg.lr / batch.len() as f32);
            epoch_loss += batch_loss as f64;
            step += 1;
        }
        epoch_losses.push((epoch_loss / dataset.len() as f64) as f32);
    }
    Ok(TrainOutcome {
        params,
        epoch_losses,
    })
}

/// Argmax accuracy of the float forward pass over a dataset.
pub fn evaluate(m: &ModelSpec, p: &Parameters, dataset: &Dataset) -> Result<(usize, usize), ModelError> {
    let mut correct = 0usize;
    for (image, &label) in dataset.images.iter().zip(&dataset.labels) {
        let logits = forward(m, p, image)?;
        if classify(&logits)? == label as usize {
            correct += 1;
        }
    }
    Ok((correct, dataset.len()))
}
