//! Backward passes: input gradients under three ReLU backprop variants and
//! parameter gradients for training.

use crate::error::{Error, Result};
use crate::nn::{ForwardTrace, Layer, ModelGraph};
use crate::tensor::Tensor;

/// How gradients pass through ReLU on the way back.
///
/// `Plain` is the true gradient. `Guided` zeroes positions where either the
/// forward input or the incoming gradient is negative. `Deconv` gates on the
/// incoming gradient alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReluGate {
    Plain,
    Guided,
    Deconv,
}

/// Weight and bias gradients of one layer. Empty for layers without
/// parameters.
#[derive(Debug, Clone, Default)]
pub struct LayerGrads {
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Gradient buffers aligned with `model.layers`, zero-initialized.
pub fn zeroed_grads(model: &ModelGraph) -> Vec<LayerGrads> {
    model
        .layers
        .iter()
        .map(|layer| match layer {
            Layer::Conv2D { weights, bias, .. } | Layer::Dense { weights, bias, .. } => LayerGrads {
                weights: vec![0.0; weights.len()],
                bias: vec![0.0; bias.len()],
            },
            _ => LayerGrads::default(),
        })
        .collect()
}

fn conv_backward(
    grad_out: &Tensor,
    input: &Tensor,
    in_channels: usize,
    kernel_h: usize,
    kernel_w: usize,
    stride: usize,
    padding: usize,
    weights: &[f32],
    mut grads: Option<&mut LayerGrads>,
) -> Tensor {
    let (ih, iw) = (input.shape()[1], input.shape()[2]);
    let (out_c, oh, ow) = (grad_out.shape()[0], grad_out.shape()[1], grad_out.shape()[2]);
    let mut grad_in = Tensor::zeros(input.shape());
    for oc in 0..out_c {
        let w_base = oc * in_channels * kernel_h * kernel_w;
        for oy in 0..oh {
            for ox in 0..ow {
                let g = grad_out.at3(oc, oy, ox);
                if g == 0.0 {
                    continue;
                }
                if let Some(acc) = grads.as_deref_mut() {
                    acc.bias[oc] += g;
                }
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
                            let wi = w_base + (ic * kernel_h + ky) * kernel_w + kx;
                            let (iy, ix) = (iy as usize, ix as usize);
                            let prev = grad_in.at3(ic, iy, ix);
                            grad_in.set3(ic, iy, ix, prev + g * weights[wi]);
                            if let Some(acc) = grads.as_deref_mut() {
                                acc.weights[wi] += g * input.at3(ic, iy, ix);
                            }
                        }
                    }
                }
            }
        }
    }
    grad_in
}

fn dense_backward(
    grad_out: &Tensor,
    input: &Tensor,
    in_features: usize,
    weights: &[f32],
    grads: Option<&mut LayerGrads>,
) -> Tensor {
    let g = grad_out.data();
    let x = input.data();
    let mut grad_in = vec![0.0f32; in_features];
    for (o, &go) in g.iter().enumerate() {
        if go == 0.0 {
            continue;
        }
        let row = &weights[o * in_features..(o + 1) * in_features];
        for (gi, w) in grad_in.iter_mut().zip(row) {
            *gi += go * w;
        }
    }
    if let Some(acc) = grads {
        for (o, &go) in g.iter().enumerate() {
            acc.bias[o] += go;
            let row = &mut acc.weights[o * in_features..(o + 1) * in_features];
            for (dw, &xv) in row.iter_mut().zip(x) {
                *dw += go * xv;
            }
        }
    }
    Tensor::from_vec(&[in_features], grad_in).unwrap()
}

fn relu_backward(grad_out: &Tensor, input: &Tensor, gate: ReluGate) -> Tensor {
    let data = grad_out
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| match gate {
            ReluGate::Plain => {
                if x > 0.0 { g } else { 0.0 }
            }
            ReluGate::Guided => {
                if x > 0.0 && g > 0.0 { g } else { 0.0 }
            }
            ReluGate::Deconv => {
                if g > 0.0 { g } else { 0.0 }
            }
        })
        .collect();
    Tensor::from_vec(input.shape(), data).unwrap()
}

fn maxpool_backward(grad_out: &Tensor, input: &Tensor, window: usize, stride: usize) -> Tensor {
    let (c, oh, ow) = (grad_out.shape()[0], grad_out.shape()[1], grad_out.shape()[2]);
    let mut grad_in = Tensor::zeros(input.shape());
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = grad_out.at3(ch, oy, ox);
                if g == 0.0 {
                    continue;
                }
                // Route to the first maximum in row-major window order.
                let (mut by, mut bx, mut best) = (oy * stride, ox * stride, f32::NEG_INFINITY);
                for ky in 0..window {
                    for kx in 0..window {
                        let (iy, ix) = (oy * stride + ky, ox * stride + kx);
                        let v = input.at3(ch, iy, ix);
                        if v > best {
                            best = v;
                            by = iy;
                            bx = ix;
                        }
                    }
                }
                let prev = grad_in.at3(ch, by, bx);
                grad_in.set3(ch, by, bx, prev + g);
            }
        }
    }
    grad_in
}

fn avgpool_backward(grad_out: &Tensor, input: &Tensor, window: usize, stride: usize) -> Tensor {
    let (c, oh, ow) = (grad_out.shape()[0], grad_out.shape()[1], grad_out.shape()[2]);
    let mut grad_in = Tensor::zeros(input.shape());
    let denom = (window * window) as f32;
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = grad_out.at3(ch, oy, ox) / denom;
                if g == 0.0 {
                    continue;
                }
                for ky in 0..window {
                    for kx in 0..window {
                        let (iy, ix) = (oy * stride + ky, ox * stride + kx);
                        let prev = grad_in.at3(ch, iy, ix);
                        grad_in.set3(ch, iy, ix, prev + g);
                    }
                }
            }
        }
    }
    grad_in
}

fn global_avgpool_backward(grad_out: &Tensor, input: &Tensor) -> Tensor {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let denom = (h * w) as f32;
    let mut grad_in = Tensor::zeros(input.shape());
    for ch in 0..c {
        let g = grad_out.data()[ch] / denom;
        for y in 0..h {
            for x in 0..w {
                grad_in.set3(ch, y, x, g);
            }
        }
    }
    grad_in
}

/// Backpropagate `dlogits` through the whole model. Returns the gradient at
/// the normalized input; when `param_grads` is given, weight and bias
/// gradients are accumulated into it (so batches can share one buffer).
pub(crate) fn backprop(
    model: &ModelGraph,
    trace: &ForwardTrace,
    dlogits: &[f32],
    gate: ReluGate,
    mut param_grads: Option<&mut Vec<LayerGrads>>,
) -> Tensor {
    let mut grad = Tensor::from_vec(&[dlogits.len()], dlogits.to_vec()).unwrap();
    for (idx, layer) in model.layers.iter().enumerate().rev() {
        let input = trace.input_of(idx);
        let layer_acc = param_grads.as_deref_mut().map(|v| &mut v[idx]);
        grad = match layer {
            Layer::Conv2D {
                in_channels,
                kernel_h,
                kernel_w,
                stride,
                padding,
                weights,
                ..
            } => conv_backward(
                &grad, input, *in_channels, *kernel_h, *kernel_w, *stride, *padding, weights,
                layer_acc,
            ),
            Layer::Dense { in_features, weights, .. } => {
                dense_backward(&grad, input, *in_features, weights, layer_acc)
            }
            Layer::ReLU => relu_backward(&grad, input, gate),
            Layer::MaxPool2D { window, stride } => maxpool_backward(&grad, input, *window, *stride),
            Layer::AvgPool2D { window, stride } => avgpool_backward(&grad, input, *window, *stride),
            Layer::Flatten => Tensor::from_vec(input.shape(), grad.into_data()).unwrap(),
            Layer::GlobalAvgPool => global_avgpool_backward(&grad, input),
        };
    }
    grad
}

/// Gradient of `logits[class]` with respect to the normalized input.
pub fn input_gradient(
    model: &ModelGraph,
    trace: &ForwardTrace,
    class: usize,
    gate: ReluGate,
) -> Result<Tensor> {
    if class >= model.num_classes {
        return Err(Error::ClassOutOfRange {
            class,
            num_classes: model.num_classes,
        });
    }
    let mut dlogits = vec![0.0f32; model.num_classes];
    dlogits[class] = 1.0;
    Ok(backprop(model, trace, &dlogits, gate, None))
}
