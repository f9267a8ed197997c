//! Layer-wise relevance propagation.
//!
//! Relevance starts as the target logit at the output and flows backwards.
//! Dense and convolution layers redistribute it with a per-composite rule;
//! ReLU and Flatten pass it through, max pooling routes it to the winning
//! tap, average pooling spreads it uniformly. All relevance arithmetic runs
//! in f64 and is cast to f32 only at the end.
//!
//! Bias handling: the epsilon and gamma rules keep the (modified) bias in
//! the denominator, so the bias share of relevance is absorbed rather than
//! redistributed. The box rule subtracts the bias of its bound terms, so it
//! conserves exactly even on biased layers.

use image::RgbImage;

use super::{Explanation, Method};
use crate::error::{Error, Result};
use crate::nn::{forward, Layer, ModelGraph};
use crate::tensor::Tensor;

/// Relevance redistribution rules for parameterized layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    /// Stabilized proportional redistribution; the workhorse dense rule.
    Epsilon,
    /// Positive contributions only; alpha-beta with (1, 0).
    ZPlus,
    /// Weighted positive and negative parts, conserving when alpha-beta=1.
    AlphaBeta,
    /// Positive weight components amplified by gamma.
    Gamma,
    /// Uniform redistribution over the receptive field, ignoring values.
    Flat,
    /// Box rule for the first layer, anchored at the input value bounds.
    ZBox,
}

/// Shared rule parameters. Box bounds are per input channel in normalized
/// units.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleParams {
    pub epsilon: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub box_low: Vec<f64>,
    pub box_high: Vec<f64>,
}

impl RuleParams {
    /// Defaults with box bounds set to the normalized images of pixel
    /// values 0 and 255.
    pub fn for_model(model: &ModelGraph) -> Self {
        let norm = &model.normalization;
        let low = norm
            .mean
            .iter()
            .zip(&norm.std)
            .map(|(&m, &s)| (0.0 - m as f64) / s as f64)
            .collect();
        let high = norm
            .mean
            .iter()
            .zip(&norm.std)
            .map(|(&m, &s)| (1.0 - m as f64) / s as f64)
            .collect();
        RuleParams {
            epsilon: 1e-6,
            alpha: 2.0,
            beta: 1.0,
            gamma: 0.25,
            box_low: low,
            box_high: high,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if (self.alpha - self.beta - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "alpha - beta must be 1, got {} - {}",
                self.alpha, self.beta
            )));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::Config(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if self.box_low.len() != self.box_high.len()
            || self.box_low.iter().zip(&self.box_high).any(|(l, h)| l > h)
        {
            return Err(Error::Config("box bounds must satisfy low <= high".into()));
        }
        Ok(())
    }
}

/// Rule assignment per layer kind. `first_layer_rule`, when set, overrides
/// the kind rule at the parameterized layer closest to the input and must
/// be Flat or ZBox; `None` lets the kind rule apply everywhere, which the
/// conservation fixtures rely on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Composite {
    pub dense_rule: Rule,
    pub conv_rule: Rule,
    pub first_layer_rule: Option<Rule>,
}

impl Composite {
    /// One rule for every parameterized layer.
    pub fn uniform(rule: Rule) -> Self {
        Composite {
            dense_rule: rule,
            conv_rule: rule,
            first_layer_rule: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.first_layer_rule {
            Some(Rule::Flat) | Some(Rule::ZBox) | None => Ok(()),
            Some(other) => Err(Error::Config(format!(
                "first layer rule must be Flat or ZBox, got {other:?}"
            ))),
        }
    }
}

/// Epsilon on dense layers, ZPlus on convolutions, flat on the first layer.
pub fn composite_epsilon_plus_flat() -> Composite {
    Composite {
        dense_rule: Rule::Epsilon,
        conv_rule: Rule::ZPlus,
        first_layer_rule: Some(Rule::Flat),
    }
}

/// Epsilon on dense layers, gamma on convolutions, box rule on the first.
pub fn composite_epsilon_gamma_box() -> Composite {
    Composite {
        dense_rule: Rule::Epsilon,
        conv_rule: Rule::Gamma,
        first_layer_rule: Some(Rule::ZBox),
    }
}

/// Epsilon on dense layers, alpha-beta (2, 1) on convolutions, flat first.
pub fn composite_epsilon_alpha2beta1_flat() -> Composite {
    Composite {
        dense_rule: Rule::Epsilon,
        conv_rule: Rule::AlphaBeta,
        first_layer_rule: Some(Rule::Flat),
    }
}

/// Sign-matched stabilizer; sign(0) counts as positive.
#[inline]
fn stab(z: f64, eps: f64) -> f64 {
    if z >= 0.0 {
        z + eps
    } else {
        z - eps
    }
}

/// Convolution geometry with a tap enumerator shared by all conv rules.
struct ConvGeom<'a> {
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    out_h: usize,
    out_w: usize,
    kernel_h: usize,
    kernel_w: usize,
    stride: usize,
    padding: usize,
    weights: &'a [f32],
}

impl<'a> ConvGeom<'a> {
    fn new(layer: &'a Layer, in_shape: &[usize], out_shape: &[usize]) -> Self {
        let Layer::Conv2D {
            kernel_h,
            kernel_w,
            stride,
            padding,
            weights,
            ..
        } = layer
        else {
            unreachable!("ConvGeom on a non-conv layer")
        };
        ConvGeom {
            in_c: in_shape[0],
            in_h: in_shape[1],
            in_w: in_shape[2],
            out_c: out_shape[0],
            out_h: out_shape[1],
            out_w: out_shape[2],
            kernel_h: *kernel_h,
            kernel_w: *kernel_w,
            stride: *stride,
            padding: *padding,
            weights,
        }
    }

    /// Visit every in-bounds tap of output (oc, oy, ox) as
    /// (input index, raw weight).
    #[inline]
    fn for_each_tap(&self, oc: usize, oy: usize, ox: usize, mut f: impl FnMut(usize, f64)) {
        let w_base = oc * self.in_c * self.kernel_h * self.kernel_w;
        for ic in 0..self.in_c {
            for ky in 0..self.kernel_h {
                let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                if iy < 0 || iy >= self.in_h as isize {
                    continue;
                }
                for kx in 0..self.kernel_w {
                    let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                    if ix < 0 || ix >= self.in_w as isize {
                        continue;
                    }
                    let w = self.weights[w_base + (ic * self.kernel_h + ky) * self.kernel_w + kx];
                    let in_idx = (ic * self.in_h + iy as usize) * self.in_w + ix as usize;
                    f(in_idx, w as f64);
                }
            }
        }
    }

    fn for_each_output(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        for oc in 0..self.out_c {
            for oy in 0..self.out_h {
                for ox in 0..self.out_w {
                    f(oc, oy, ox, (oc * self.out_h + oy) * self.out_w + ox);
                }
            }
        }
    }
}

fn dense_modified(
    x: &[f64],
    r_out: &[f64],
    weights: &[f32],
    bias: &[f32],
    in_f: usize,
    eps: f64,
    rho: impl Fn(f64) -> f64,
) -> Vec<f64> {
    let mut r_in = vec![0.0f64; in_f];
    for (j, &r) in r_out.iter().enumerate() {
        if r == 0.0 {
            continue;
        }
        let row = &weights[j * in_f..(j + 1) * in_f];
        let mut z = rho(bias[j] as f64);
        for (xi, &w) in x.iter().zip(row) {
            z += xi * rho(w as f64);
        }
        let s = r / stab(z, eps);
        for ((ri, xi), &w) in r_in.iter_mut().zip(x).zip(row) {
            *ri += xi * rho(w as f64) * s;
        }
    }
    r_in
}

fn conv_modified(
    geom: &ConvGeom,
    x: &[f64],
    r_out: &[f64],
    bias: &[f32],
    eps: f64,
    rho: impl Fn(f64) -> f64,
) -> Vec<f64> {
    let mut r_in = vec![0.0f64; x.len()];
    geom.for_each_output(|oc, oy, ox, j| {
        let r = r_out[j];
        if r == 0.0 {
            return;
        }
        let mut z = rho(bias[oc] as f64);
        geom.for_each_tap(oc, oy, ox, |i, w| z += x[i] * rho(w));
        let s = r / stab(z, eps);
        geom.for_each_tap(oc, oy, ox, |i, w| r_in[i] += x[i] * rho(w) * s);
    });
    r_in
}

fn dense_alphabeta(
    x: &[f64],
    r_out: &[f64],
    weights: &[f32],
    bias: &[f32],
    in_f: usize,
    alpha: f64,
    beta: f64,
) -> Vec<f64> {
    let mut r_in = vec![0.0f64; in_f];
    for (j, &r) in r_out.iter().enumerate() {
        if r == 0.0 {
            continue;
        }
        let row = &weights[j * in_f..(j + 1) * in_f];
        let b = bias[j] as f64;
        let mut pos = b.max(0.0);
        let mut neg = b.min(0.0);
        for (xi, &w) in x.iter().zip(row) {
            let z = xi * w as f64;
            if z > 0.0 {
                pos += z;
            } else {
                neg += z;
            }
        }
        // A unit whose contributions all share one sign routes its full
        // relevance through that side; anything else destroys relevance
        // and breaks layer conservation.
        let (sp, sn) = match (pos > 0.0, neg < 0.0) {
            (true, true) => (alpha * r / pos, beta * r / neg),
            (true, false) => (r / pos, 0.0),
            (false, true) => (0.0, -r / neg),
            (false, false) => {
                let share = r / in_f as f64;
                for ri in r_in.iter_mut() {
                    *ri += share;
                }
                continue;
            }
        };
        for ((ri, xi), &w) in r_in.iter_mut().zip(x).zip(row) {
            let z = xi * w as f64;
            *ri += if z > 0.0 { z * sp } else { -z * sn };
        }
    }
    r_in
}

fn conv_alphabeta(
    geom: &ConvGeom,
    x: &[f64],
    r_out: &[f64],
    bias: &[f32],
    alpha: f64,
    beta: f64,
) -> Vec<f64> {
    let mut r_in = vec![0.0f64; x.len()];
    geom.for_each_output(|oc, oy, ox, j| {
        let r = r_out[j];
        if r == 0.0 {
            return;
        }
        let b = bias[oc] as f64;
        let mut pos = b.max(0.0);
        let mut neg = b.min(0.0);
        let mut taps = 0usize;
        geom.for_each_tap(oc, oy, ox, |i, w| {
            let z = x[i] * w;
            taps += 1;
            if z > 0.0 {
                pos += z;
            } else {
                neg += z;
            }
        });
        // Same degenerate-unit handling as the dense form: single-signed
        // units (common at padded borders, where windows lose taps) pass
        // their full relevance through the side that exists.
        let (sp, sn) = match (pos > 0.0, neg < 0.0) {
            (true, true) => (alpha * r / pos, beta * r / neg),
            (true, false) => (r / pos, 0.0),
            (false, true) => (0.0, -r / neg),
            (false, false) => {
                let share = r / taps as f64;
                geom.for_each_tap(oc, oy, ox, |i, _| r_in[i] += share);
                return;
            }
        };
        geom.for_each_tap(oc, oy, ox, |i, w| {
            let z = x[i] * w;
            r_in[i] += if z > 0.0 { z * sp } else { -z * sn };
        });
    });
    r_in
}

fn dense_flat(r_out: &[f64], in_f: usize) -> Vec<f64> {
    let mut r_in = vec![0.0f64; in_f];
    let share = 1.0 / in_f as f64;
    for &r in r_out {
        if r == 0.0 {
            continue;
        }
        for ri in r_in.iter_mut() {
            *ri += r * share;
        }
    }
    r_in
}

fn conv_flat(geom: &ConvGeom, r_out: &[f64], in_len: usize) -> Vec<f64> {
    let mut r_in = vec![0.0f64; in_len];
    geom.for_each_output(|oc, oy, ox, j| {
        let r = r_out[j];
        if r == 0.0 {
            return;
        }
        let mut count = 0usize;
        geom.for_each_tap(oc, oy, ox, |_, _| count += 1);
        if count == 0 {
            return;
        }
        let share = r / count as f64;
        geom.for_each_tap(oc, oy, ox, |i, _| r_in[i] += share);
    });
    r_in
}

fn dense_zbox(
    x: &[f64],
    low: &[f64],
    high: &[f64],
    r_out: &[f64],
    weights: &[f32],
    in_f: usize,
    eps: f64,
) -> Vec<f64> {
    let mut r_in = vec![0.0f64; in_f];
    for (j, &r) in r_out.iter().enumerate() {
        if r == 0.0 {
            continue;
        }
        let row = &weights[j * in_f..(j + 1) * in_f];
        let mut z = 0.0;
        for i in 0..in_f {
            let w = row[i] as f64;
            z += x[i] * w - low[i] * w.max(0.0) - high[i] * w.min(0.0);
        }
        let s = r / stab(z, eps);
        for i in 0..in_f {
            let w = row[i] as f64;
            r_in[i] += (x[i] * w - low[i] * w.max(0.0) - high[i] * w.min(0.0)) * s;
        }
    }
    r_in
}

fn conv_zbox(
    geom: &ConvGeom,
    x: &[f64],
    low: &[f64],
    high: &[f64],
    r_out: &[f64],
    eps: f64,
) -> Vec<f64> {
    let mut r_in = vec![0.0f64; x.len()];
    geom.for_each_output(|oc, oy, ox, j| {
        let r = r_out[j];
        if r == 0.0 {
            return;
        }
        let mut z = 0.0;
        geom.for_each_tap(oc, oy, ox, |i, w| {
            z += x[i] * w - low[i] * w.max(0.0) - high[i] * w.min(0.0);
        });
        let s = r / stab(z, eps);
        geom.for_each_tap(oc, oy, ox, |i, w| {
            r_in[i] += (x[i] * w - low[i] * w.max(0.0) - high[i] * w.min(0.0)) * s;
        });
    });
    r_in
}

fn maxpool_relevance(
    r_out: &[f64],
    input: &Tensor,
    out_shape: &[usize],
    window: usize,
    stride: usize,
) -> Vec<f64> {
    let (c, oh, ow) = (out_shape[0], out_shape[1], out_shape[2]);
    let (ih, iw) = (input.shape()[1], input.shape()[2]);
    let mut r_in = vec![0.0f64; input.numel()];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let r = r_out[(ch * oh + oy) * ow + ox];
                if r == 0.0 {
                    continue;
                }
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
                r_in[(ch * ih + by) * iw + bx] += r;
            }
        }
    }
    r_in
}

fn avgpool_relevance(
    r_out: &[f64],
    in_shape: &[usize],
    out_shape: &[usize],
    window: usize,
    stride: usize,
) -> Vec<f64> {
    let (c, oh, ow) = (out_shape[0], out_shape[1], out_shape[2]);
    let (ih, iw) = (in_shape[1], in_shape[2]);
    let mut r_in = vec![0.0f64; in_shape.iter().product()];
    let share = 1.0 / (window * window) as f64;
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let r = r_out[(ch * oh + oy) * ow + ox] * share;
                if r == 0.0 {
                    continue;
                }
                for ky in 0..window {
                    for kx in 0..window {
                        r_in[(ch * ih + oy * stride + ky) * iw + ox * stride + kx] += r;
                    }
                }
            }
        }
    }
    r_in
}

/// Method tag for a composite when dispatched from [`super::explain`];
/// direct calls may use any composite, so the tag is best-effort.
fn method_for(composite: &Composite) -> Method {
    if *composite == composite_epsilon_plus_flat() {
        Method::EpsilonPlusFlat
    } else if *composite == composite_epsilon_gamma_box() {
        Method::EpsilonGammaBox
    } else {
        Method::EpsilonAlpha2Beta1Flat
    }
}

/// Propagate the target logit back to the input under `composite`.
pub fn explain_lrp(
    model: &ModelGraph,
    image: &RgbImage,
    class: usize,
    composite: &Composite,
    params: &RuleParams,
) -> Result<Explanation> {
    params.validate()?;
    composite.validate()?;
    if class >= model.num_classes {
        return Err(Error::ClassOutOfRange {
            class,
            num_classes: model.num_classes,
        });
    }
    let input = model.preprocess(image)?;
    let trace = forward(model, &input)?;

    let first_param = model
        .layers
        .iter()
        .position(|l| matches!(l, Layer::Conv2D { .. } | Layer::Dense { .. }));

    let mut relevance = vec![0.0f64; model.num_classes];
    relevance[class] = trace.logits()[class] as f64;

    for (idx, layer) in model.layers.iter().enumerate().rev() {
        let input_t = trace.input_of(idx);
        let out_shape = trace.output_of(idx).shape().to_vec();
        let x: Vec<f64> = input_t.data().iter().map(|&v| v as f64).collect();
        relevance = match layer {
            Layer::Dense {
                in_features,
                weights,
                bias,
                ..
            } => {
                let rule = if first_param == Some(idx) && composite.first_layer_rule.is_some() {
                    composite.first_layer_rule.unwrap()
                } else {
                    composite.dense_rule
                };
                match rule {
                    Rule::Epsilon => {
                        dense_modified(&x, &relevance, weights, bias, *in_features, params.epsilon, |w| w)
                    }
                    Rule::Gamma => {
                        let g = params.gamma;
                        dense_modified(&x, &relevance, weights, bias, *in_features, params.epsilon, move |w| {
                            w + g * w.max(0.0)
                        })
                    }
                    Rule::ZPlus => dense_alphabeta(&x, &relevance, weights, bias, *in_features, 1.0, 0.0),
                    Rule::AlphaBeta => dense_alphabeta(
                        &x,
                        &relevance,
                        weights,
                        bias,
                        *in_features,
                        params.alpha,
                        params.beta,
                    ),
                    Rule::Flat => dense_flat(&relevance, *in_features),
                    Rule::ZBox => {
                        let (low, high) = element_bounds(model, params, x.len())?;
                        dense_zbox(&x, &low, &high, &relevance, weights, *in_features, params.epsilon)
                    }
                }
            }
            Layer::Conv2D { bias, .. } => {
                let geom = ConvGeom::new(layer, input_t.shape(), &out_shape);
                let rule = if first_param == Some(idx) && composite.first_layer_rule.is_some() {
                    composite.first_layer_rule.unwrap()
                } else {
                    composite.conv_rule
                };
                match rule {
                    Rule::Epsilon => conv_modified(&geom, &x, &relevance, bias, params.epsilon, |w| w),
                    Rule::Gamma => {
                        let g = params.gamma;
                        conv_modified(&geom, &x, &relevance, bias, params.epsilon, move |w| {
                            w + g * w.max(0.0)
                        })
                    }
                    Rule::ZPlus => conv_alphabeta(&geom, &x, &relevance, bias, 1.0, 0.0),
                    Rule::AlphaBeta => {
                        conv_alphabeta(&geom, &x, &relevance, bias, params.alpha, params.beta)
                    }
                    Rule::Flat => conv_flat(&geom, &relevance, x.len()),
                    Rule::ZBox => {
                        let (low, high) = element_bounds(model, params, x.len())?;
                        conv_zbox(&geom, &x, &low, &high, &relevance, params.epsilon)
                    }
                }
            }
            Layer::ReLU | Layer::Flatten => relevance,
            Layer::MaxPool2D { window, stride } => {
                maxpool_relevance(&relevance, input_t, &out_shape, *window, *stride)
            }
            Layer::AvgPool2D { window, stride } => {
                avgpool_relevance(&relevance, input_t.shape(), &out_shape, *window, *stride)
            }
            Layer::GlobalAvgPool => {
                let (c, h, w) = (input_t.shape()[0], input_t.shape()[1], input_t.shape()[2]);
                let share = 1.0 / (h * w) as f64;
                let mut r_in = vec![0.0f64; input_t.numel()];
                for ch in 0..c {
                    let r = relevance[ch] * share;
                    for v in &mut r_in[ch * h * w..(ch + 1) * h * w] {
                        *v = r;
                    }
                }
                r_in
            }
        };
    }

    let per_channel = Tensor::from_vec(
        &model.input.shape(),
        relevance.into_iter().map(|v| v as f32).collect(),
    )?;
    Explanation::new(method_for(composite), class, per_channel)
}

/// Expand per-channel box bounds over the elements of the first layer's
/// input. Pools and flatten keep channel-major order, so element i belongs
/// to channel i / (numel / channels).
fn element_bounds(model: &ModelGraph, params: &RuleParams, numel: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let channels = model.input.channels;
    if params.box_low.len() != channels || numel % channels != 0 {
        return Err(Error::Config(format!(
            "box bounds cover {} channels, input has {}",
            params.box_low.len(),
            channels
        )));
    }
    let plane = numel / channels;
    let mut low = vec![0.0f64; numel];
    let mut high = vec![0.0f64; numel];
    for i in 0..numel {
        low[i] = params.box_low[i / plane];
        high[i] = params.box_high[i / plane];
    }
    Ok((low, high))
}
