//! Pixel attribution methods.
//!
//! Eight methods over the same forward trace: plain gradients, input times
//! gradients, integrated gradients, guided backpropagation, deconvolution,
//! and three layer-wise relevance propagation composites. All of them
//! explain the pre-softmax logit of the target class; softmax saturation
//! would otherwise flatten the gradients the methods are built on.

mod lrp;

pub use lrp::{
    composite_epsilon_alpha2beta1_flat, composite_epsilon_gamma_box, composite_epsilon_plus_flat,
    explain_lrp, Composite, Rule, RuleParams,
};

use std::io::Write as _;
use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::backward::{input_gradient, ReluGate};
use crate::nn::{forward, ForwardTrace, ModelGraph};
use crate::tensor::Tensor;

pub const DEFAULT_IG_STEPS: usize = 64;

/// The eight supported methods, in report row order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Gradients,
    InputXGradients,
    IntegratedGradients,
    GuidedBackprop,
    Deconvolution,
    EpsilonPlusFlat,
    EpsilonGammaBox,
    EpsilonAlpha2Beta1Flat,
}

impl Method {
    pub fn all() -> [Method; 8] {
        [
            Method::Gradients,
            Method::InputXGradients,
            Method::IntegratedGradients,
            Method::GuidedBackprop,
            Method::Deconvolution,
            Method::EpsilonPlusFlat,
            Method::EpsilonGammaBox,
            Method::EpsilonAlpha2Beta1Flat,
        ]
    }

    /// Lowercase name used on the command line and in file names.
    pub fn slug(self) -> &'static str {
        match self {
            Method::Gradients => "gradients",
            Method::InputXGradients => "input_x_gradients",
            Method::IntegratedGradients => "integrated_gradients",
            Method::GuidedBackprop => "guided_backprop",
            Method::Deconvolution => "deconvolution",
            Method::EpsilonPlusFlat => "epsilon_plus_flat",
            Method::EpsilonGammaBox => "epsilon_gamma_box",
            Method::EpsilonAlpha2Beta1Flat => "epsilon_alpha2beta1_flat",
        }
    }

    /// Row label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            Method::Gradients => "Gradients",
            Method::InputXGradients => "Input x Gradients",
            Method::IntegratedGradients => "Integrated Gradients",
            Method::GuidedBackprop => "Guided Backprop",
            Method::Deconvolution => "Deconvolution",
            Method::EpsilonPlusFlat => "EpsilonPlusFlat",
            Method::EpsilonGammaBox => "EpsilonGammaBox",
            Method::EpsilonAlpha2Beta1Flat => "EpsilonAlpha2Beta1Flat",
        }
    }

    /// Stable numeric id used in the binary export header.
    pub fn id(self) -> u32 {
        Method::all().iter().position(|&m| m == self).unwrap() as u32
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::all()
            .into_iter()
            .find(|m| m.slug().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownMethod(s.to_string()))
    }
}

/// Relevance of every input element toward one class logit, plus the
/// channel-summed heatmap the metrics operate on.
#[derive(Debug, Clone)]
pub struct Explanation {
    pub method: Method,
    pub target_class: usize,
    pub per_channel: Tensor,
    pub heatmap: Tensor,
}

impl Explanation {
    pub fn new(method: Method, target_class: usize, per_channel: Tensor) -> Result<Self> {
        if per_channel.shape().len() != 3 {
            return Err(Error::Config(format!(
                "per-channel relevance must be [CxHxW], got {:?}",
                per_channel.shape()
            )));
        }
        if !per_channel.is_finite() {
            return Err(Error::Config(format!(
                "non-finite relevance in {} explanation",
                method.slug()
            )));
        }
        let heatmap = reduce_heatmap(&per_channel);
        Ok(Explanation {
            method,
            target_class,
            per_channel,
            heatmap,
        })
    }
}

/// Channel sum of a `[C, H, W]` relevance tensor.
pub fn reduce_heatmap(per_channel: &Tensor) -> Tensor {
    let (c, h, w) = (
        per_channel.shape()[0],
        per_channel.shape()[1],
        per_channel.shape()[2],
    );
    let mut out = Tensor::zeros(&[h, w]);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let v = out.data()[y * w + x] + per_channel.at3(ch, y, x);
                out.data_mut()[y * w + x] = v;
            }
        }
    }
    out
}

fn prepared(model: &ModelGraph, image: &RgbImage, class: usize) -> Result<(Tensor, ForwardTrace)> {
    if class >= model.num_classes {
        return Err(Error::ClassOutOfRange {
            class,
            num_classes: model.num_classes,
        });
    }
    let input = model.preprocess(image)?;
    let trace = forward(model, &input)?;
    Ok((input, trace))
}

fn gated_gradient(
    model: &ModelGraph,
    image: &RgbImage,
    class: usize,
    gate: ReluGate,
    method: Method,
) -> Result<Explanation> {
    let (_, trace) = prepared(model, image, class)?;
    let grad = input_gradient(model, &trace, class, gate)?;
    Explanation::new(method, class, grad)
}

/// Gradient of the class logit with respect to the normalized input.
pub fn explain_gradients(model: &ModelGraph, image: &RgbImage, class: usize) -> Result<Explanation> {
    gated_gradient(model, image, class, ReluGate::Plain, Method::Gradients)
}

/// Normalized input times its gradient, element-wise.
pub fn explain_input_x_gradients(
    model: &ModelGraph,
    image: &RgbImage,
    class: usize,
) -> Result<Explanation> {
    let (input, trace) = prepared(model, image, class)?;
    let mut grad = input_gradient(model, &trace, class, ReluGate::Plain)?;
    for (g, x) in grad.data_mut().iter_mut().zip(input.data()) {
        *g *= x;
    }
    Explanation::new(Method::InputXGradients, class, grad)
}

/// Guided backpropagation: ReLU passes gradient only where both the forward
/// input and the incoming gradient are positive.
pub fn explain_guided_backprop(
    model: &ModelGraph,
    image: &RgbImage,
    class: usize,
) -> Result<Explanation> {
    gated_gradient(model, image, class, ReluGate::Guided, Method::GuidedBackprop)
}

/// Deconvolution: ReLU passes gradient wherever the incoming gradient is
/// positive, regardless of the forward activation.
pub fn explain_deconvolution(
    model: &ModelGraph,
    image: &RgbImage,
    class: usize,
) -> Result<Explanation> {
    gated_gradient(model, image, class, ReluGate::Deconv, Method::Deconvolution)
}

/// Integrated gradients along the straight path from `baseline` (default: a
/// black image) to the input, midpoint Riemann sum. Returns the explanation
/// and the completeness gap |sum of attributions - (f(x) - f(baseline))|.
pub fn explain_integrated_gradients(
    model: &ModelGraph,
    image: &RgbImage,
    class: usize,
    steps: usize,
    baseline: Option<&RgbImage>,
) -> Result<(Explanation, f64)> {
    if steps < 2 {
        return Err(Error::TooFewSteps(steps));
    }
    let (input, trace) = prepared(model, image, class)?;
    let black;
    let base_image = match baseline {
        Some(b) => b,
        None => {
            black = RgbImage::new(image.width(), image.height());
            &black
        }
    };
    let base = model.preprocess(base_image)?;
    let base_trace = forward(model, &base)?;

    let numel = input.numel();
    let mut acc = vec![0.0f64; numel];
    let mut point = Tensor::zeros(input.shape());
    for k in 0..steps {
        let alpha = (k as f32 + 0.5) / steps as f32;
        for ((p, &x), &b) in point
            .data_mut()
            .iter_mut()
            .zip(input.data())
            .zip(base.data())
        {
            *p = b + alpha * (x - b);
        }
        let step_trace = forward(model, &point)?;
        let grad = input_gradient(model, &step_trace, class, ReluGate::Plain)?;
        for (a, &g) in acc.iter_mut().zip(grad.data()) {
            *a += g as f64;
        }
    }
    let mut attrib = vec![0.0f32; numel];
    let mut total = 0.0f64;
    for i in 0..numel {
        let v = (input.data()[i] - base.data()[i]) as f64 * acc[i] / steps as f64;
        total += v;
        attrib[i] = v as f32;
    }
    let span = trace.logits()[class] as f64 - base_trace.logits()[class] as f64;
    let gap = (total - span).abs();
    let expl = Explanation::new(
        Method::IntegratedGradients,
        class,
        Tensor::from_vec(input.shape(), attrib)?,
    )?;
    Ok((expl, gap))
}

/// Run any method with its default settings.
pub fn explain(model: &ModelGraph, image: &RgbImage, class: usize, method: Method) -> Result<Explanation> {
    match method {
        Method::Gradients => explain_gradients(model, image, class),
        Method::InputXGradients => explain_input_x_gradients(model, image, class),
        Method::IntegratedGradients => {
            explain_integrated_gradients(model, image, class, DEFAULT_IG_STEPS, None)
                .map(|(expl, _)| expl)
        }
        Method::GuidedBackprop => explain_guided_backprop(model, image, class),
        Method::Deconvolution => explain_deconvolution(model, image, class),
        Method::EpsilonPlusFlat => explain_lrp(
            model,
            image,
            class,
            &composite_epsilon_plus_flat(),
            &RuleParams::for_model(model),
        ),
        Method::EpsilonGammaBox => explain_lrp(
            model,
            image,
            class,
            &composite_epsilon_gamma_box(),
            &RuleParams::for_model(model),
        ),
        Method::EpsilonAlpha2Beta1Flat => explain_lrp(
            model,
            image,
            class,
            &composite_epsilon_alpha2beta1_flat(),
            &RuleParams::for_model(model),
        ),
    }
}

/// Write the per-channel relevance as little-endian binary: four u32
/// (method id, C, H, W) then the f32 values in row-major order.
pub fn write_binary(expl: &Explanation, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let shape = expl.per_channel.shape();
    for v in [expl.method.id(), shape[0] as u32, shape[1] as u32, shape[2] as u32] {
        out.write_all(&v.to_le_bytes())?;
    }
    for v in expl.per_channel.data() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Read back a binary explanation file: (method, per-channel tensor).
pub fn read_binary(path: &Path) -> Result<(Method, Tensor)> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 16 || (bytes.len() - 16) % 4 != 0 {
        return Err(Error::Config(format!(
            "explanation file has invalid length {}",
            bytes.len()
        )));
    }
    let mut words = bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    let id = words.next().unwrap();
    let shape: Vec<usize> = words.by_ref().take(3).map(|v| v as usize).collect();
    let method = Method::all()
        .into_iter()
        .find(|m| m.id() == id)
        .ok_or_else(|| Error::UnknownMethod(format!("id {id}")))?;
    let data: Vec<f32> = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((method, Tensor::from_vec(&shape, data)?))
}

/// Write the heatmap as an 8-bit grayscale PNG after min-max normalization.
/// Visualization only; metrics never touch the quantized values.
pub fn write_png(expl: &Explanation, path: &Path) -> Result<()> {
    let (h, w) = (expl.heatmap.shape()[0], expl.heatmap.shape()[1]);
    let data = expl.heatmap.data();
    let min = data.iter().cloned().fold(f32::INFINITY, f32::min);
    let max = data.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let scale = if max > min { 255.0 / (max - min) } else { 0.0 };
    let img = image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
        let v = (data[y as usize * w + x as usize] - min) * scale;
        image::Luma([v.round().clamp(0.0, 255.0) as u8])
    });
    img.save(path)?;
    Ok(())
}
