//! Layer kernels, architecture description, and the reference float forward
//! pass.
//!
//! Convolution is cross-correlation (no kernel flip) with zero padding, and
//! every kernel accumulates in f32 in a fixed order (channel, then kernel
//! row, then kernel column). The fixed order is what makes filter-split
//! execution bit-identical to the unsplit layer: each output channel runs
//! the exact same operation sequence no matter how the filter bank is
//! grouped.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Shape, Tensor, TensorError};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("layer {layer}: output dimension collapses to zero or below")]
    DegenerateOutput { layer: String },
    #[error("duplicate layer name {0}")]
    DuplicateLayer(String),
    #[error("layer {layer}: expected {expected} input channels, got {got}")]
    ChannelMismatch {
        layer: String,
        expected: usize,
        got: usize,
    },
    #[error("weights for {layer} have shape {got}, expected {expected}")]
    WeightShape {
        layer: String,
        got: String,
        expected: String,
    },
    #[error("bias for {layer} has {got} elements, expected {expected}")]
    BiasShape {
        layer: String,
        got: usize,
        expected: usize,
    },
    #[error("missing parameters for layer {0}")]
    MissingParams(String),
    #[error("dense input length {input} does not match weight columns {columns}")]
    DenseMismatch { input: usize, columns: usize },
    #[error("pool window {k} larger than input {dim}")]
    PoolTooLarge { k: usize, dim: usize },
    #[error("classify requires a non-empty rank-1 tensor")]
    EmptyLogits,
}

/// What a layer computes. Sizes are the layer's own; input sizes come from
/// shape inference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv2d {
        out_ch: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: usize,
    },
    AvgPool {
        k: usize,
        stride: usize,
    },
    Dense {
        out_features: usize,
    },
    Relu,
    Flatten,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn is_parameterized(&self) -> bool {
        matches!(
            self.kind,
            LayerKind::Conv2d { .. } | LayerKind::Dense { .. }
        )
    }
}

/// Ordered layer chain plus the input shape it expects.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub layers: Vec<LayerSpec>,
    pub input_shape: Shape,
}

impl ModelSpec {
    pub fn new(layers: Vec<LayerSpec>, input_shape: Shape) -> Result<Self, ModelError> {
        let mut seen = std::collections::BTreeSet::new();
        for layer in &layers {
            if !seen.insert(layer.name.as_str()) {
                return Err(ModelError::DuplicateLayer(layer.name.clone()));
            }
        }
        let m = ModelSpec {
            layers,
            input_shape,
        };
        infer_shapes(&m)?;
        Ok(m)
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    pub fn parameterized_layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers.iter().filter(|l| l.is_parameterized())
    }

    /// Weight and bias shapes of a parameterized layer, given the model's
    /// inferred input to that layer.
    pub fn param_shapes(&self, name: &str) -> Option<(Vec<usize>, usize)> {
        let idx = self.layer_index(name)?;
        let shapes = infer_shapes(self).ok()?;
        let input = if idx == 0 {
            &self.input_shape
        } else {
            &shapes[idx - 1]
        };
        match self.layers[idx].kind {
            LayerKind::Conv2d { out_ch, kh, kw, .. } => {
                Some((vec![out_ch, input.dims()[0], kh, kw], out_ch))
            }
            LayerKind::Dense { out_features } => {
                Some((vec![out_features, input.dims()[0]], out_features))
            }
            _ => None,
        }
    }

    /// Parameter element count (weights + bias) of one layer; 0 for
    /// unparameterized layers.
    pub fn param_count(&self, name: &str) -> usize {
        self.param_shapes(name)
            .map(|(w, b)| w.iter().product::<usize>() + b)
            .unwrap_or(0)
    }
}

/// The LeNet-5 variant every experiment runs: 28x28 input, 6 then 16 valid
/// 5x5 convolutions with 2x2 average pooling, dense 120/84/10, ReLU after
/// conv1, conv2, fc1 and fc2.
pub fn lenet5() -> ModelSpec {
    let layer = |name: &str, kind: LayerKind| LayerSpec {
        name: name.to_string(),
        kind,
    };
    ModelSpec::new(
        vec![
            layer(
                "conv1",
                LayerKind::Conv2d {
                    out_ch: 6,
                    kh: 5,
                    kw: 5,
                    stride: 1,
                    padding: 0,
                },
            ),
            layer("relu1", LayerKind::Relu),
            layer("pool1", LayerKind::AvgPool { k: 2, stride: 2 }),
            layer(
                "conv2",
                LayerKind::Conv2d {
                    out_ch: 16,
                    kh: 5,
                    kw: 5,
                    stride: 1,
                    padding: 0,
                },
            ),
            layer("relu2", LayerKind::Relu),
            layer("pool2", LayerKind::AvgPool { k: 2, stride: 2 }),
            layer("flatten", LayerKind::Flatten),
            layer("fc1", LayerKind::Dense { out_features: 120 }),
            layer("relu3", LayerKind::Relu),
            layer("fc2", LayerKind::Dense { out_features: 84 }),
            layer("relu4", LayerKind::Relu),
            layer("fc3", LayerKind::Dense { out_features: 10 }),
        ],
        Shape::new(vec![1, 28, 28]).unwrap(),
    )
    .expect("canonical LeNet-5 is well-formed")
}

/// Weight and bias tensors for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Per-layer parameter store, keyed by layer name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Parameters {
    entries: BTreeMap<String, LayerParams>,
}

impl Parameters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, weights: Tensor, bias: Tensor) {
        self.entries
            .insert(name.into(), LayerParams { weights, bias });
    }

    pub fn get(&self, name: &str) -> Option<&LayerParams> {
        self.entries.get(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &LayerParams)> {
        self.entries.iter()
    }

    pub fn layer_names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    /// Every parameterized layer present with the exact shapes the model
    /// implies.
    pub fn validate_against(&self, m: &ModelSpec) -> Result<(), ModelError> {
        for layer in m.parameterized_layers() {
            let Some(p) = self.get(&layer.name) else {
                return Err(ModelError::MissingParams(layer.name.clone()));
            };
            let (wdims, blen) = m
                .param_shapes(&layer.name)
                .expect("parameterized layer has param shapes");
            if p.weights.shape().dims() != wdims.as_slice() {
                return Err(ModelError::WeightShape {
                    layer: layer.name.clone(),
                    got: p.weights.shape().to_string(),
                    expected: Shape::new(wdims).unwrap().to_string(),
                });
            }
            if p.bias.rank() != 1 || p.bias.elem_count() != blen {
                return Err(ModelError::BiasShape {
                    layer: layer.name.clone(),
                    got: p.bias.elem_count(),
                    expected: blen,
                });
            }
        }
        Ok(())
    }
}

fn conv_out_dim(input: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Output shape after every layer, in order. Activation layers repeat their
/// input shape.
pub fn infer_shapes(m: &ModelSpec) -> Result<Vec<Shape>, ModelError> {
    let mut shapes = Vec::with_capacity(m.layers.len());
    let mut current = m.input_shape.clone();
    for layer in &m.layers {
        let next = match &layer.kind {
            LayerKind::Conv2d {
                out_ch,
                kh,
                kw,
                stride,
                padding,
            } => {
                let d = current.dims();
                if d.len() != 3 {
                    return Err(TensorError::RankMismatch {
                        expected: 3,
                        got: d.len(),
                    }
                    .into());
                }
                let h = conv_out_dim(d[1], *kh, *stride, *padding);
                let w = conv_out_dim(d[2], *kw, *stride, *padding);
                match (h, w) {
                    (Some(h), Some(w)) if h > 0 && w > 0 => {
                        Shape::new(vec![*out_ch, h, w])?
                    }
                    _ => {
                        return Err(ModelError::DegenerateOutput {
                            layer: layer.name.clone(),
                        })
                    }
                }
            }
            LayerKind::AvgPool { k, stride } => {
                let d = current.dims();
                if d.len() != 3 {
                    return Err(TensorError::RankMismatch {
                        expected: 3,
                        got: d.len(),
                    }
                    .into());
                }
                if *k > d[1] || *k > d[2] {
                    return Err(ModelError::PoolTooLarge {
                        k: *k,
                        dim: d[1].min(d[2]),
                    });
                }
                let h = (d[1] - k) / stride + 1;
                let w = (d[2] - k) / stride + 1;
                Shape::new(vec![d[0], h, w])?
            }
            LayerKind::Dense { out_features } => {
                if current.rank() != 1 {
                    return Err(TensorError::RankMismatch {
                        expected: 1,
                        got: current.rank(),
                    }
                    .into());
                }
                Shape::new(vec![*out_features])?
            }
            LayerKind::Relu => current.clone(),
            LayerKind::Flatten => Shape::new(vec![current.elem_count()])?,
        };
        shapes.push(next.clone());
        current = next;
    }
    Ok(shapes)
}

/// 2-D cross-correlation with zero padding.
///
/// `out[o,y,x] = bias[o] + sum over (c,i,j) of
/// input[c, y*stride - padding + i, x*stride - padding + j] * weights[o,c,i,j]`
/// with out-of-bounds input reading as zero. The (c,i,j) accumulation order
/// is fixed so grouped filter execution reproduces these bits exactly.
pub fn conv2d(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor, ModelError> {
    let id = input.shape().dims();
    let wd = weights.shape().dims();
    if id.len() != 3 {
        return Err(TensorError::RankMismatch {
            expected: 3,
            got: id.len(),
        }
        .into());
    }
    if wd.len() != 4 {
        return Err(TensorError::RankMismatch {
            expected: 4,
            got: wd.len(),
        }
        .into());
    }
    let (in_ch, in_h, in_w) = (id[0], id[1], id[2]);
    let (out_ch, w_in_ch, kh, kw) = (wd[0], wd[1], wd[2], wd[3]);
    if w_in_ch != in_ch {
        return Err(ModelError::ChannelMismatch {
            layer: "conv2d".to_string(),
            expected: w_in_ch,
            got: in_ch,
        });
    }
    if bias.rank() != 1 || bias.elem_count() != out_ch {
        return Err(ModelError::BiasShape {
            layer: "conv2d".to_string(),
            got: bias.elem_count(),
            expected: out_ch,
        });
    }
    let out_h = conv_out_dim(in_h, kh, stride, padding);
    let out_w = conv_out_dim(in_w, kw, stride, padding);
    let (Some(out_h), Some(out_w)) = (out_h, out_w) else {
        return Err(ModelError::DegenerateOutput {
            layer: "conv2d".to_string(),
        });
    };

    let x = input.data();
    let w = weights.data();
    let b = bias.data();
    let mut out = vec![0.0f32; out_ch * out_h * out_w];
    for o in 0..out_ch {
        let w_filter = &w[o * in_ch * kh * kw..(o + 1) * in_ch * kh * kw];
        for y in 0..out_h {
            for xo in 0..out_w {
                let mut acc = b[o];
                for c in 0..in_ch {
                    let plane = &x[c * in_h * in_w..(c + 1) * in_h * in_w];
                    let w_chan = &w_filter[c * kh * kw..(c + 1) * kh * kw];
                    for i in 0..kh {
                        let iy = (y * stride + i) as isize - padding as isize;
                        if iy < 0 || iy >= in_h as isize {
                            continue;
                        }
                        let row = &plane[iy as usize * in_w..(iy as usize + 1) * in_w];
                        for j in 0..kw {
                            let ix = (xo * stride + j) as isize - padding as isize;
                            if ix < 0 || ix >= in_w as isize {
                                continue;
                            }
                            acc += row[ix as usize] * w_chan[i * kw + j];
                        }
                    }
                }
                out[o * out_h * out_w + y * out_w + xo] = acc;
            }
        }
    }
    Ok(Tensor::new(Shape::new(vec![out_ch, out_h, out_w])?, out)?)
}

/// Mean over each k-by-k window; non-overlapping when `stride == k`.
pub fn avgpool(input: &Tensor, k: usize, stride: usize) -> Result<Tensor, ModelError> {
    let d = input.shape().dims();
    if d.len() != 3 {
        return Err(TensorError::RankMismatch {
            expected: 3,
            got: d.len(),
        }
        .into());
    }
    let (ch, in_h, in_w) = (d[0], d[1], d[2]);
    if k > in_h || k > in_w {
        return Err(ModelError::PoolTooLarge {
            k,
            dim: in_h.min(in_w),
        });
    }
    let out_h = (in_h - k) / stride + 1;
    let out_w = (in_w - k) / stride + 1;
    let x = input.data();
    let norm = 1.0 / (k * k) as f32;
    let mut out = vec![0.0f32; ch * out_h * out_w];
    for c in 0..ch {
        let plane = &x[c * in_h * in_w..(c + 1) * in_h * in_w];
        for y in 0..out_h {
            for xo in 0..out_w {
                let mut acc = 0.0f32;
                for i in 0..k {
                    for j in 0..k {
                        acc += plane[(y * stride + i) * in_w + (xo * stride + j)];
                    }
                }
                out[c * out_h * out_w + y * out_w + xo] = acc * norm;
            }
        }
    }
    Ok(Tensor::new(Shape::new(vec![ch, out_h, out_w])?, out)?)
}

/// `out[o] = bias[o] + sum_i weights[o,i] * input[i]` over a rank-1 input.
pub fn dense(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor, ModelError> {
    if input.rank() != 1 {
        return Err(TensorError::RankMismatch {
            expected: 1,
            got: input.rank(),
        }
        .into());
    }
    let wd = weights.shape().dims();
    if wd.len() != 2 {
        return Err(TensorError::RankMismatch {
            expected: 2,
            got: wd.len(),
        }
        .into());
    }
    let (out_features, in_features) = (wd[0], wd[1]);
    if input.elem_count() != in_features {
        return Err(ModelError::DenseMismatch {
            input: input.elem_count(),
            columns: in_features,
        });
    }
    if bias.rank() != 1 || bias.elem_count() != out_features {
        return Err(ModelError::BiasShape {
            layer: "dense".to_string(),
            got: bias.elem_count(),
            expected: out_features,
        });
    }
    let x = input.data();
    let w = weights.data();
    let mut out = Vec::with_capacity(out_features);
    for o in 0..out_features {
        let row = &w[o * in_features..(o + 1) * in_features];
        let mut acc = bias.data()[o];
        for i in 0..in_features {
            acc += row[i] * x[i];
        }
        out.push(acc);
    }
    Ok(Tensor::new(Shape::new(vec![out_features])?, out)?)
}

/// Elementwise `max(0, x)`.
pub fn relu(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(input.shape().clone(), data).expect("same shape")
}

/// Full forward pass. Deterministic: identical inputs and parameters give
/// bit-identical logits.
pub fn forward(m: &ModelSpec, p: &Parameters, input: &Tensor) -> Result<Tensor, ModelError> {
    let mut current = input.clone();
    for layer in &m.layers {
        current = forward_layer(layer, p, &current)?;
    }
    Ok(current)
}

/// One layer of the forward pass; the pipeline executors drive this directly.
pub fn forward_layer(
    layer: &LayerSpec,
    p: &Parameters,
    input: &Tensor,
) -> Result<Tensor, ModelError> {
    match &layer.kind {
        LayerKind::Conv2d {
            stride, padding, ..
        } => {
            let lp = p
                .get(&layer.name)
                .ok_or_else(|| ModelError::MissingParams(layer.name.clone()))?;
            conv2d(input, &lp.weights, &lp.bias, *stride, *padding)
        }
        LayerKind::AvgPool { k, stride } => avgpool(input, *k, *stride),
        LayerKind::Dense { .. } => {
            let lp = p
                .get(&layer.name)
                .ok_or_else(|| ModelError::MissingParams(layer.name.clone()))?;
            dense(input, &lp.weights, &lp.bias)
        }
        LayerKind::Relu => Ok(relu(input)),
        LayerKind::Flatten => Ok(input.reshaped(&[input.elem_count()])?),
    }
}

/// Index of the maximum logit; ties break toward the lowest index.
pub fn classify(logits: &Tensor) -> Result<usize, ModelError> {
    if logits.rank() != 1 || logits.elem_count() == 0 {
        return Err(ModelError::EmptyLogits);
    }
    let mut best = 0usize;
    for (i, &v) in logits.data().iter().enumerate().skip(1) {
        if v > logits.data()[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Multiply-accumulate count of each layer; zero for layers without MACs.
pub fn per_layer_macs(m: &ModelSpec) -> Result<Vec<u64>, ModelError> {
    let shapes = infer_shapes(m)?;
    let mut macs = Vec::with_capacity(m.layers.len());
    let mut input = m.input_shape.clone();
    for (layer, out) in m.layers.iter().zip(&shapes) {
        macs.push(match &layer.kind {
            LayerKind::Conv2d { kh, kw, .. } => {
                let per_out = input.dims()[0] * kh * kw;
                (out.elem_count() * per_out) as u64
            }
            LayerKind::Dense { .. } => (out.elem_count() * input.elem_count()) as u64,
            _ => 0,
        });
        input = out.clone();
    }
    Ok(macs)
}

/// Total multiply-accumulate count of one forward pass; the simulators'
/// compute-time unit.
pub fn mac_count(m: &ModelSpec) -> Result<u64, ModelError> {
    Ok(per_layer_macs(m)?.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
        let n: usize = dims.iter().product();
        let data = (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        Tensor::from_dims(dims, data).unwrap()
    }

    /// Scalar reference convolution: materializes the zero-padded input and
    /// walks every index without the slicing tricks of the production path.
    fn conv_oracle(
        input: &Tensor,
        weights: &Tensor,
        bias: &Tensor,
        stride: usize,
        padding: usize,
    ) -> Tensor {
        let id = input.shape().dims();
        let wd = weights.shape().dims();
        let (in_ch, in_h, in_w) = (id[0], id[1], id[2]);
        let (out_ch, _, kh, kw) = (wd[0], wd[1], wd[2], wd[3]);
        let ph = in_h + 2 * padding;
        let pw = in_w + 2 * padding;
        let mut padded = vec![0.0f32; in_ch * ph * pw];
        for c in 0..in_ch {
            for y in 0..in_h {
                for x in 0..in_w {
                    padded[c * ph * pw + (y + padding) * pw + (x + padding)] =
                        input.data()[c * in_h * in_w + y * in_w + x];
                }
            }
        }
        let out_h = (ph - kh) / stride + 1;
        let out_w = (pw - kw) / stride + 1;
        let mut out = vec![0.0f32; out_ch * out_h * out_w];
        for o in 0..out_ch {
            for y in 0..out_h {
                for x in 0..out_w {
                    let mut acc = bias.data()[o];
                    for c in 0..in_ch {
                        for i in 0..kh {
                            for j in 0..kw {
                                acc += padded[c * ph * pw + (y * stride + i) * pw + (x * stride + j)]
                                    * weights.data()[((o * in_ch + c) * kh + i) * kw + j];
                            }
                        }
                    }
                    out[o * out_h * out_w + y * out_w + x] = acc;
                }
            }
        }
        Tensor::from_dims(&[out_ch, out_h, out_w], out).unwrap()
    }

    #[test]
    fn lenet5_shape_ladder() {
        let m = lenet5();
        let shapes = infer_shapes(&m).unwrap();
        let dims: Vec<Vec<usize>> = shapes.iter().map(|s| s.dims().to_vec()).collect();
        assert_eq!(
            dims,
            vec![
                vec![6, 24, 24],
                vec![6, 24, 24],
                vec![6, 12, 12],
                vec![16, 8, 8],
                vec![16, 8, 8],
                vec![16, 4, 4],
                vec![256],
                vec![120],
                vec![120],
                vec![84],
                vec![84],
                vec![10],
            ]
        );
    }

    #[test]
    fn conv_shape_on_28x28_with_six_5x5_filters() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&mut rng, &[1, 28, 28]);
        let w = rand_tensor(&mut rng, &[6, 1, 5, 5]);
        let b = rand_tensor(&mut rng, &[6]);
        let out = conv2d(&x, &w, &b, 1, 0).unwrap();
        assert_eq!(out.shape().dims(), &[6, 24, 24]);
    }

    #[test]
    fn conv_identity_kernel_passes_input_through() {
        let x = Tensor::from_dims(&[1, 3, 3], (1..=9).map(|v| v as f32).collect()).unwrap();
        let w = Tensor::from_dims(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let b = Tensor::from_dims(&[1], vec![0.0]).unwrap();
        let out = conv2d(&x, &w, &b, 1, 0).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn conv_hand_example_2x2_ones() {
        let x = Tensor::from_dims(&[1, 3, 3], (1..=9).map(|v| v as f32).collect()).unwrap();
        let w = Tensor::from_dims(&[1, 1, 2, 2], vec![1.0; 4]).unwrap();
        let b = Tensor::from_dims(&[1], vec![0.0]).unwrap();
        let out = conv2d(&x, &w, &b, 1, 0).unwrap();
        assert_eq!(out.data(), &[12.0, 16.0, 24.0, 28.0]);
    }

    #[test]
    fn conv_matches_oracle_with_padding_and_stride() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(in_ch, h, w, out_ch, k, stride, padding) in &[
            (1usize, 6usize, 6usize, 3usize, 3usize, 1usize, 0usize),
            (2, 7, 5, 4, 3, 2, 1),
            (3, 5, 5, 2, 5, 1, 2),
            (1, 28, 28, 6, 5, 1, 0),
        ] {
            let x = rand_tensor(&mut rng, &[in_ch, h, w]);
            let wt = rand_tensor(&mut rng, &[out_ch, in_ch, k, k]);
            let b = rand_tensor(&mut rng, &[out_ch]);
            let got = conv2d(&x, &wt, &b, stride, padding).unwrap();
            let want = conv_oracle(&x, &wt, &b, stride, padding);
            assert_eq!(got, want);
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor::zeros(Shape::new(vec![2, 4, 4]).unwrap());
        let w = Tensor::zeros(Shape::new(vec![1, 3, 2, 2]).unwrap());
        let b = Tensor::zeros(Shape::new(vec![1]).unwrap());
        assert!(matches!(
            conv2d(&x, &w, &b, 1, 0),
            Err(ModelError::ChannelMismatch { .. })
        ));
    }

    #[test]
    fn conv_linearity_with_zero_bias() {
        let x = Tensor::from_dims(&[1, 4, 4], (0..16).map(|v| v as f32).collect()).unwrap();
        let w = Tensor::from_dims(&[2, 1, 2, 2], (0..8).map(|v| (v % 3) as f32).collect()).unwrap();
        let b = Tensor::zeros(Shape::new(vec![2]).unwrap());
        let scaled =
            Tensor::from_dims(&[1, 4, 4], x.data().iter().map(|v| v * 2.0).collect()).unwrap();
        let lhs = conv2d(&scaled, &w, &b, 1, 0).unwrap();
        let rhs = conv2d(&x, &w, &b, 1, 0).unwrap();
        for (l, r) in lhs.data().iter().zip(rhs.data()) {
            assert_eq!(*l, r * 2.0, "integer-valued data keeps scaling exact");
        }

        // Non-integer data: scaling commutes within floating-point slack.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = rand_tensor(&mut rng, &[2, 6, 6]);
        let w = rand_tensor(&mut rng, &[3, 2, 3, 3]);
        let b = Tensor::zeros(Shape::new(vec![3]).unwrap());
        let a = 1.7f32;
        let scaled =
            Tensor::from_dims(&[2, 6, 6], x.data().iter().map(|v| v * a).collect()).unwrap();
        let lhs = conv2d(&scaled, &w, &b, 1, 0).unwrap();
        let rhs = conv2d(&x, &w, &b, 1, 0).unwrap();
        for (l, r) in lhs.data().iter().zip(rhs.data()) {
            let want = r * a;
            assert!(
                (l - want).abs() <= 1e-5 * want.abs().max(1.0),
                "{l} vs {want}"
            );
        }
    }

    #[test]
    fn infer_shapes_rejects_collapsing_layers() {
        let m = ModelSpec {
            layers: vec![LayerSpec {
                name: "huge".into(),
                kind: LayerKind::Conv2d {
                    out_ch: 1,
                    kh: 29,
                    kw: 29,
                    stride: 1,
                    padding: 0,
                },
            }],
            input_shape: Shape::new(vec![1, 28, 28]).unwrap(),
        };
        assert_eq!(
            infer_shapes(&m),
            Err(ModelError::DegenerateOutput {
                layer: "huge".into()
            })
        );
    }

    #[test]
    fn avgpool_constant_and_mean() {
        let c = Tensor::filled(Shape::new(vec![2, 4, 4]).unwrap(), 3.5);
        let out = avgpool(&c, 2, 2).unwrap();
        assert!(out.data().iter().all(|&v| v == 3.5));

        let t = Tensor::from_dims(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = avgpool(&t, 2, 2).unwrap();
        assert_eq!(out.data(), &[2.5]);
    }

    #[test]
    fn avgpool_matches_windowed_mean_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = rand_tensor(&mut rng, &[6, 24, 24]);
        let out = avgpool(&t, 2, 2).unwrap();
        for c in 0..6 {
            for y in 0..12 {
                for x in 0..12 {
                    let mut acc = 0.0f32;
                    for i in 0..2 {
                        for j in 0..2 {
                            acc += t.data()[c * 24 * 24 + (2 * y + i) * 24 + (2 * x + j)];
                        }
                    }
                    assert_eq!(out.data()[c * 12 * 12 + y * 12 + x], acc * 0.25);
                }
            }
        }
    }

    #[test]
    fn avgpool_window_too_large() {
        let t = Tensor::zeros(Shape::new(vec![1, 2, 2]).unwrap());
        assert!(matches!(
            avgpool(&t, 3, 1),
            Err(ModelError::PoolTooLarge { .. })
        ));
    }

    #[test]
    fn dense_identity_and_hand_example() {
        let x = Tensor::from_dims(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let eye = Tensor::from_dims(
            &[3, 3],
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        let zero = Tensor::zeros(Shape::new(vec![3]).unwrap());
        assert_eq!(dense(&x, &eye, &zero).unwrap().data(), x.data());

        let w = Tensor::from_dims(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let x = Tensor::from_dims(&[2], vec![1.0, 1.0]).unwrap();
        let b = Tensor::zeros(Shape::new(vec![2]).unwrap());
        assert_eq!(dense(&x, &w, &b).unwrap().data(), &[3.0, 7.0]);
    }

    #[test]
    fn dense_matches_dot_product_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, &[256]);
        let w = rand_tensor(&mut rng, &[120, 256]);
        let b = rand_tensor(&mut rng, &[120]);
        let out = dense(&x, &w, &b).unwrap();
        for o in 0..120 {
            let mut acc = b.data()[o];
            for i in 0..256 {
                acc += w.data()[o * 256 + i] * x.data()[i];
            }
            assert_eq!(out.data()[o], acc);
        }
    }

    #[test]
    fn dense_dimension_mismatch() {
        let x = Tensor::zeros(Shape::new(vec![4]).unwrap());
        let w = Tensor::zeros(Shape::new(vec![2, 3]).unwrap());
        let b = Tensor::zeros(Shape::new(vec![2]).unwrap());
        assert!(matches!(
            dense(&x, &w, &b),
            Err(ModelError::DenseMismatch { .. })
        ));
    }

    #[test]
    fn relu_cases() {
        let t = Tensor::from_dims(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&t).data(), &[0.0, 0.0, 2.0]);
        let neg = Tensor::from_dims(&[2], vec![-5.0, -0.125]).unwrap();
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
        let pos = Tensor::from_dims(&[2], vec![5.0, 0.125]).unwrap();
        assert_eq!(relu(&pos).data(), pos.data());
    }

    fn random_lenet_params(seed: u64) -> Parameters {
        let m = lenet5();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Parameters::new();
        for layer in m.parameterized_layers() {
            let (wdims, blen) = m.param_shapes(&layer.name).unwrap();
            let w = rand_tensor(&mut rng, &wdims);
            let b = rand_tensor(&mut rng, &[blen]);
            p.insert(&layer.name, w, b);
        }
        p
    }

    #[test]
    fn forward_zero_params_gives_zero_logits() {
        let m = lenet5();
        let mut p = Parameters::new();
        for layer in m.parameterized_layers() {
            let (wdims, blen) = m.param_shapes(&layer.name).unwrap();
            p.insert(
                &layer.name,
                Tensor::zeros(Shape::new(wdims).unwrap()),
                Tensor::zeros(Shape::new(vec![blen]).unwrap()),
            );
        }
        let x = Tensor::filled(Shape::new(vec![1, 28, 28]).unwrap(), 0.7);
        let logits = forward(&m, &p, &x).unwrap();
        assert_eq!(logits.shape().dims(), &[10]);
        assert!(logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let m = lenet5();
        let p = random_lenet_params(5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = rand_tensor(&mut rng, &[1, 28, 28]);
        let a = forward(&m, &p, &x).unwrap();
        let b = forward(&m, &p, &x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forward_equals_layerwise_composition() {
        let m = lenet5();
        let p = random_lenet_params(9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = rand_tensor(&mut rng, &[1, 28, 28]);

        // Compose the individual kernels by hand in the canonical order.
        let step = |name: &str, t: &Tensor| {
            let lp = p.get(name).unwrap();
            (lp.weights.clone(), lp.bias.clone(), t.clone())
        };
        let (w, b, t) = step("conv1", &x);
        let t = conv2d(&t, &w, &b, 1, 0).unwrap();
        let t = relu(&t);
        let t = avgpool(&t, 2, 2).unwrap();
        let (w, b, t) = step("conv2", &t);
        let t = conv2d(&t, &w, &b, 1, 0).unwrap();
        let t = relu(&t);
        let t = avgpool(&t, 2, 2).unwrap();
        let t = t.reshaped(&[256]).unwrap();
        let (w, b, t) = step("fc1", &t);
        let t = dense(&t, &w, &b).unwrap();
        let t = relu(&t);
        let (w, b, t) = step("fc2", &t);
        let t = dense(&t, &w, &b).unwrap();
        let t = relu(&t);
        let (w, b, t) = step("fc3", &t);
        let want = dense(&t, &w, &b).unwrap();

        let got = forward(&m, &p, &x).unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn forward_reports_missing_params() {
        let m = lenet5();
        let x = Tensor::zeros(Shape::new(vec![1, 28, 28]).unwrap());
        assert_eq!(
            forward(&m, &Parameters::new(), &x),
            Err(ModelError::MissingParams("conv1".to_string()))
        );
    }

    #[test]
    fn classify_cases() {
        let t = Tensor::from_dims(&[4], vec![0.0, 0.0, 5.0, 0.0]).unwrap();
        assert_eq!(classify(&t).unwrap(), 2);
        let flat = Tensor::filled(Shape::new(vec![10]).unwrap(), 1.0);
        assert_eq!(classify(&flat).unwrap(), 0, "ties break low");
        let close = Tensor::from_dims(&[2], vec![1.0, 1.0 + 1e-6]).unwrap();
        assert_eq!(classify(&close).unwrap(), 1);
    }

    #[test]
    fn lenet_parameter_counts() {
        let m = lenet5();
        assert_eq!(m.param_count("conv1"), 156);
        assert_eq!(m.param_count("conv2"), 2_416);
        assert_eq!(m.param_count("fc1"), 30_840);
        assert_eq!(m.param_count("fc2"), 10_164);
        assert_eq!(m.param_count("fc3"), 850);
        let total: usize = m
            .parameterized_layers()
            .map(|l| m.param_count(&l.name))
            .sum();
        assert_eq!(total, 44_426);
    }

    #[test]
    fn mac_count_is_stable() {
        let m = lenet5();
        // conv1 6*24*24*25 + conv2 16*8*8*150 + fc 30720 + 10080 + 840
        assert_eq!(mac_count(&m).unwrap(), 86_400 + 153_600 + 30_720 + 10_080 + 840);
    }
}
