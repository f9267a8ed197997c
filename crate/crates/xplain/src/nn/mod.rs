//! Minimal sequential CNN engine.
//!
//! Supports the layer set needed by the evaluation pipeline: convolutions
//! with zero padding, dense layers, ReLU, max/average pooling, flatten and
//! global average pooling. Graphs are plain layer sequences; the forward
//! pass records every intermediate activation so gradient and relevance
//! passes can walk the same trace backwards.

pub mod backward;
pub mod train;
pub mod weights;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Input geometry of a model, channels first.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl InputSpec {
    pub fn shape(&self) -> Vec<usize> {
        vec![self.channels, self.height, self.width]
    }
}

/// Per-channel normalization applied after scaling pixels to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalization {
    pub fn identity(channels: usize) -> Self {
        Normalization {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }
}

/// One layer of a sequential model. Weight tensors are row-major:
/// conv filters are `[out, in, kh, kw]`, dense weights are `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2D {
        out_channels: usize,
        in_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
    },
    Dense {
        out_features: usize,
        in_features: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
    },
    ReLU,
    MaxPool2D {
        window: usize,
        stride: usize,
    },
    AvgPool2D {
        window: usize,
        stride: usize,
    },
    Flatten,
    GlobalAvgPool,
}

impl Layer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Conv2D { .. } => "Conv2D",
            Layer::Dense { .. } => "Dense",
            Layer::ReLU => "ReLU",
            Layer::MaxPool2D { .. } => "MaxPool2D",
            Layer::AvgPool2D { .. } => "AvgPool2D",
            Layer::Flatten => "Flatten",
            Layer::GlobalAvgPool => "GlobalAvgPool",
        }
    }

    /// Number of f32 parameters (weights then bias) this layer serializes.
    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv2D {
                out_channels,
                in_channels,
                kernel_h,
                kernel_w,
                ..
            } => out_channels * in_channels * kernel_h * kernel_w + out_channels,
            Layer::Dense {
                out_features,
                in_features,
                ..
            } => out_features * in_features + out_features,
            _ => 0,
        }
    }
}

/// A sequential model: input geometry, normalization, layer list and the
/// number of output classes (the last layer must produce exactly that many
/// values).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    pub input: InputSpec,
    pub normalization: Normalization,
    pub layers: Vec<Layer>,
    pub num_classes: usize,
}

fn shape_string(shape: &[usize]) -> String {
    let parts: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    format!("[{}]", parts.join("x"))
}

/// Output shape of `layer` for a given input shape.
fn output_shape(layer: &Layer, in_shape: &[usize], idx: usize) -> Result<Vec<usize>> {
    let kind = layer.kind_name().to_string();
    let mismatch = |expected: &str| Error::ShapeMismatch {
        layer: idx,
        kind: kind.clone(),
        expected: expected.to_string(),
        got: shape_string(in_shape),
    };
    match layer {
        Layer::Conv2D {
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            stride,
            padding,
            ..
        } => {
            let [c, h, w] = in_shape else {
                return Err(mismatch("[CxHxW]"));
            };
            if c != in_channels {
                return Err(mismatch(&format!("[{in_channels}xHxW]")));
            }
            let eh = h + 2 * padding;
            let ew = w + 2 * padding;
            if eh < *kernel_h || ew < *kernel_w {
                return Err(Error::LayerConfig {
                    layer: idx,
                    kind,
                    message: format!("kernel {kernel_h}x{kernel_w} larger than padded input"),
                });
            }
            let oh = (eh - kernel_h) / stride + 1;
            let ow = (ew - kernel_w) / stride + 1;
            Ok(vec![*out_channels, oh, ow])
        }
        Layer::Dense { out_features, in_features, .. } => {
            let [n] = in_shape else {
                return Err(mismatch(&format!("[{in_features}]")));
            };
            if n != in_features {
                return Err(mismatch(&format!("[{in_features}]")));
            }
            Ok(vec![*out_features])
        }
        Layer::ReLU => Ok(in_shape.to_vec()),
        Layer::MaxPool2D { window, stride } | Layer::AvgPool2D { window, stride } => {
            let [c, h, w] = in_shape else {
                return Err(mismatch("[CxHxW]"));
            };
            if h < window || w < window {
                return Err(Error::LayerConfig {
                    layer: idx,
                    kind,
                    message: format!("window {window} larger than input {h}x{w}"),
                });
            }
            Ok(vec![*c, (h - window) / stride + 1, (w - window) / stride + 1])
        }
        Layer::Flatten => Ok(vec![in_shape.iter().product()]),
        Layer::GlobalAvgPool => {
            let [c, _, _] = in_shape else {
                return Err(mismatch("[CxHxW]"));
            };
            Ok(vec![*c])
        }
    }
}

impl ModelGraph {
    /// Check that the layer chain is shape-consistent, all weights are
    /// finite with the declared sizes, the normalization matches the input
    /// channel count and the final output is `[num_classes]`.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::EmptyModel);
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        if self.normalization.mean.len() != self.input.channels
            || self.normalization.std.len() != self.input.channels
        {
            return Err(Error::Config(format!(
                "normalization has {} mean / {} std entries for {} channels",
                self.normalization.mean.len(),
                self.normalization.std.len(),
                self.input.channels
            )));
        }
        if self.normalization.std.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Config("normalization std must be positive".into()));
        }
        if self.normalization.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config("normalization mean must be finite".into()));
        }
        let mut shape = self.input.shape();
        for (idx, layer) in self.layers.iter().enumerate() {
            let kind = layer.kind_name().to_string();
            match layer {
                Layer::Conv2D {
                    out_channels,
                    in_channels,
                    kernel_h,
                    kernel_w,
                    stride,
                    weights,
                    bias,
                    ..
                } => {
                    if *stride == 0 {
                        return Err(Error::LayerConfig {
                            layer: idx,
                            kind,
                            message: "stride must be >= 1".into(),
                        });
                    }
                    let expected = out_channels * in_channels * kernel_h * kernel_w;
                    if weights.len() != expected || bias.len() != *out_channels {
                        return Err(Error::LayerConfig {
                            layer: idx,
                            kind,
                            message: format!(
                                "expected {} weights / {} bias, got {} / {}",
                                expected,
                                out_channels,
                                weights.len(),
                                bias.len()
                            ),
                        });
                    }
                    if !weights.iter().chain(bias.iter()).all(|v| v.is_finite()) {
                        return Err(Error::NonFiniteWeight { layer: idx, kind });
                    }
                }
                Layer::Dense {
                    out_features,
                    in_features,
                    weights,
                    bias,
                } => {
                    let expected = out_features * in_features;
                    if weights.len() != expected || bias.len() != *out_features {
                        return Err(Error::LayerConfig {
                            layer: idx,
                            kind,
                            message: format!(
                                "expected {} weights / {} bias, got {} / {}",
                                expected,
                                out_features,
                                weights.len(),
                                bias.len()
                            ),
                        });
                    }
                    if !weights.iter().chain(bias.iter()).all(|v| v.is_finite()) {
                        return Err(Error::NonFiniteWeight { layer: idx, kind });
                    }
                }
                Layer::MaxPool2D { window, stride } | Layer::AvgPool2D { window, stride } => {
                    if *window == 0 || *stride == 0 {
                        return Err(Error::LayerConfig {
                            layer: idx,
                            kind,
                            message: "window and stride must be >= 1".into(),
                        });
                    }
                }
                _ => {}
            }
            shape = output_shape(layer, &shape, idx)?;
        }
        if shape != vec![self.num_classes] {
            return Err(Error::ShapeMismatch {
                layer: self.layers.len() - 1,
                kind: self.layers.last().unwrap().kind_name().to_string(),
                expected: format!("[{}]", self.num_classes),
                got: shape_string(&shape),
            });
        }
        Ok(())
    }

    /// Scale an RGB byte image to `[0, 1]` and normalize each channel.
    pub fn preprocess(&self, image: &image::RgbImage) -> Result<Tensor> {
        let (w, h) = image.dimensions();
        if self.input.channels != 3
            || h as usize != self.input.height
            || w as usize != self.input.width
        {
            return Err(Error::ImageDimensions {
                expected: shape_string(&self.input.shape()),
                got: format!("[3x{h}x{w}]"),
            });
        }
        let mut out = Tensor::zeros(&self.input.shape());
        for c in 0..3 {
            let mean = self.normalization.mean[c];
            let std = self.normalization.std[c];
            for y in 0..self.input.height {
                for x in 0..self.input.width {
                    let v = image.get_pixel(x as u32, y as u32)[c] as f32 / 255.0;
                    out.set3(c, y, x, (v - mean) / std);
                }
            }
        }
        Ok(out)
    }
}

/// Every intermediate activation of one forward pass. `activations[0]` is
/// the (already normalized) input, `activations[i + 1]` the output of layer
/// `i`; the last entry holds the logits.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    activations: Vec<Tensor>,
}

impl ForwardTrace {
    pub fn input_of(&self, layer: usize) -> &Tensor {
        &self.activations[layer]
    }

    pub fn output_of(&self, layer: usize) -> &Tensor {
        &self.activations[layer + 1]
    }

    pub fn logits(&self) -> &[f32] {
        self.activations.last().unwrap().data()
    }
}

fn conv2d_forward(
    input: &Tensor,
    out_shape: &[usize],
    in_channels: usize,
    kernel_h: usize,
    kernel_w: usize,
    stride: usize,
    padding: usize,
    weights: &[f32],
    bias: &[f32],
) -> Tensor {
    let (ih, iw) = (input.shape()[1], input.shape()[2]);
    let (out_c, oh, ow) = (out_shape[0], out_shape[1], out_shape[2]);
    let mut out = Tensor::zeros(out_shape);
    for oc in 0..out_c {
        let w_base = oc * in_channels * kernel_h * kernel_w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[oc];
                for ic in 0..in_channels {
                    for ky in 0..kernel_h {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= ih as isize {
                            continue;
                        }
                        for kx in 0..kernel_w {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= iw as isize {
                                continue;
                            }
                            let w = weights[w_base + (ic * kernel_h + ky) * kernel_w + kx];
                            acc += w * input.at3(ic, iy as usize, ix as usize);
                        }
                    }
                }
                out.set3(oc, oy, ox, acc);
            }
        }
    }
    out
}

fn dense_forward(input: &Tensor, out_features: usize, in_features: usize, weights: &[f32], bias: &[f32]) -> Tensor {
    let x = input.data();
    let mut out = vec![0.0f32; out_features];
    for (o, out_v) in out.iter_mut().enumerate() {
        let row = &weights[o * in_features..(o + 1) * in_features];
        let mut acc = bias[o];
        for (w, v) in row.iter().zip(x) {
            acc += w * v;
        }
        *out_v = acc;
    }
    Tensor::from_vec(&[out_features], out).unwrap()
}

fn pool_forward(input: &Tensor, out_shape: &[usize], window: usize, stride: usize, max: bool) -> Tensor {
    let (c, oh, ow) = (out_shape[0], out_shape[1], out_shape[2]);
    let mut out = Tensor::zeros(out_shape);
    let denom = (window * window) as f32;
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut sum = 0.0f32;
                for ky in 0..window {
                    for kx in 0..window {
                        let v = input.at3(ch, oy * stride + ky, ox * stride + kx);
                        if v > best {
                            best = v;
                        }
                        sum += v;
                    }
                }
                out.set3(ch, oy, ox, if max { best } else { sum / denom });
            }
        }
    }
    out
}

/// Run one layer on `input`. The caller supplies the precomputed output
/// shape so the shape logic lives in one place.
pub(crate) fn apply_layer(layer: &Layer, input: &Tensor, out_shape: &[usize]) -> Tensor {
    match layer {
        Layer::Conv2D {
            in_channels,
            kernel_h,
            kernel_w,
            stride,
            padding,
            weights,
            bias,
            ..
        } => conv2d_forward(
            input, out_shape, *in_channels, *kernel_h, *kernel_w, *stride, *padding, weights, bias,
        ),
        Layer::Dense {
            out_features,
            in_features,
            weights,
            bias,
        } => dense_forward(input, *out_features, *in_features, weights, bias),
        Layer::ReLU => {
            let data = input.data().iter().map(|&v| v.max(0.0)).collect();
            Tensor::from_vec(input.shape(), data).unwrap()
        }
        Layer::MaxPool2D { window, stride } => pool_forward(input, out_shape, *window, *stride, true),
        Layer::AvgPool2D { window, stride } => pool_forward(input, out_shape, *window, *stride, false),
        Layer::Flatten => input.clone().flattened(),
        Layer::GlobalAvgPool => {
            let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
            let denom = (h * w) as f32;
            let mut out = vec![0.0f32; c];
            for (ch, out_v) in out.iter_mut().enumerate() {
                let mut sum = 0.0f32;
                for y in 0..h {
                    for x in 0..w {
                        sum += input.at3(ch, y, x);
                    }
                }
                *out_v = sum / denom;
            }
            Tensor::from_vec(&[c], out).unwrap()
        }
    }
}

/// Forward pass over a normalized input tensor, recording every activation.
pub fn forward(model: &ModelGraph, input: &Tensor) -> Result<ForwardTrace> {
    if input.shape() != model.input.shape().as_slice() {
        return Err(Error::ImageDimensions {
            expected: shape_string(&model.input.shape()),
            got: shape_string(input.shape()),
        });
    }
    let mut activations = Vec::with_capacity(model.layers.len() + 1);
    activations.push(input.clone());
    let mut shape = model.input.shape();
    for (idx, layer) in model.layers.iter().enumerate() {
        shape = output_shape(layer, &shape, idx)?;
        let out = apply_layer(layer, activations.last().unwrap(), &shape);
        activations.push(out);
    }
    Ok(ForwardTrace { activations })
}

/// Softmax in f64. Finite logits over two or more classes give strictly
/// positive probabilities that sum to 1.
pub fn softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits
        .iter()
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b as f64));
    let exps: Vec<f64> = logits.iter().map(|&l| (l as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Probability the model assigns to `class` for a byte image.
pub fn target_probability(model: &ModelGraph, image: &image::RgbImage, class: usize) -> Result<f64> {
    if class >= model.num_classes {
        return Err(Error::ClassOutOfRange {
            class,
            num_classes: model.num_classes,
        });
    }
    let input = model.preprocess(image)?;
    let trace = forward(model, &input)?;
    Ok(softmax(trace.logits())[class])
}

/// Class with the largest logit, ties to the smaller index.
pub fn predict(model: &ModelGraph, image: &image::RgbImage) -> Result<usize> {
    let input = model.preprocess(image)?;
    let trace = forward(model, &input)?;
    let logits = trace.logits();
    let mut best = 0;
    for (i, &l) in logits.iter().enumerate() {
        if l > logits[best] {
            best = i;
        }
    }
    Ok(best)
}
