//! Ready-made models: random-weight fixtures for kernel and gradient
//! checks, and a small convnet that trains to high accuracy on the
//! synthetic shape corpus.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::harness::corpus::Corpus;
use crate::nn::train::{accuracy, train, TrainConfig};
use crate::nn::{InputSpec, Layer, ModelGraph, Normalization};
use crate::tensor::Tensor;

fn uniform(rng: &mut ChaCha8Rng, n: usize, bound: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
}

/// Square conv layer with uniform Glorot-style init.
fn conv(rng: &mut ChaCha8Rng, out: usize, inp: usize, k: usize, padding: usize) -> Layer {
    let fan_in = (inp * k * k) as f32;
    let bound = (6.0 / fan_in).sqrt();
    Layer::Conv2D {
        out_channels: out,
        in_channels: inp,
        kernel_h: k,
        kernel_w: k,
        stride: 1,
        padding,
        weights: uniform(rng, out * inp * k * k, bound),
        bias: uniform(rng, out, 0.05),
    }
}

fn dense(rng: &mut ChaCha8Rng, out: usize, inp: usize) -> Layer {
    let bound = (6.0 / inp as f32).sqrt();
    Layer::Dense {
        out_features: out,
        in_features: inp,
        weights: uniform(rng, out * inp, bound),
        bias: uniform(rng, out, 0.05),
    }
}

/// Five-layer convnet over 3x16x16 inputs with random weights:
/// conv / relu / maxpool / flatten / dense, four classes.
pub fn random_fixture(seed: u64) -> ModelGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ModelGraph {
        input: InputSpec {
            channels: 3,
            height: 16,
            width: 16,
        },
        normalization: Normalization {
            mean: vec![0.5; 3],
            std: vec![0.5; 3],
        },
        layers: vec![
            conv(&mut rng, 6, 3, 3, 1),
            Layer::ReLU,
            Layer::MaxPool2D { window: 2, stride: 2 },
            Layer::Flatten,
            dense(&mut rng, 4, 6 * 8 * 8),
        ],
        num_classes: 4,
    }
}

/// Fully convolutional net over 3x32x32 inputs with no padding and a
/// global average pool head. Without padding every logit is a pure
/// convolution of the input, so integer pixel shifts move gradients and
/// relevances along without changing them away from the borders.
pub fn conv_only_fixture(seed: u64) -> ModelGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ModelGraph {
        input: InputSpec {
            channels: 3,
            height: 32,
            width: 32,
        },
        normalization: Normalization {
            mean: vec![0.5; 3],
            std: vec![0.5; 3],
        },
        layers: vec![
            conv(&mut rng, 8, 3, 3, 0),
            Layer::ReLU,
            conv(&mut rng, 6, 8, 3, 0),
            Layer::GlobalAvgPool,
        ],
        num_classes: 6,
    }
}

/// Untrained six-class shape classifier sized for `height` x `width`
/// images (both must be even): conv / relu / maxpool / flatten / dense.
pub fn shape_classifier(height: usize, width: usize, seed: u64) -> Result<ModelGraph> {
    if height % 2 != 0 || width % 2 != 0 || height < 8 || width < 8 {
        return Err(Error::Config(format!(
            "classifier input must be even and at least 8x8, got {width}x{height}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flat = 6 * (height / 2) * (width / 2);
    Ok(ModelGraph {
        input: InputSpec {
            channels: 3,
            height,
            width,
        },
        normalization: Normalization {
            mean: vec![0.5; 3],
            std: vec![0.5; 3],
        },
        layers: vec![
            conv(&mut rng, 6, 3, 3, 1),
            Layer::ReLU,
            Layer::MaxPool2D { window: 2, stride: 2 },
            Layer::Flatten,
            dense(&mut rng, 6, flat),
        ],
        num_classes: 6,
    })
}

/// Train a [`shape_classifier`] on a labeled corpus and report its final
/// training accuracy alongside the model.
pub fn train_fixture(corpus: &Corpus, seed: u64, epochs: usize) -> Result<(ModelGraph, f64)> {
    let first = corpus
        .entries
        .first()
        .ok_or_else(|| Error::EmptyCorpus("training corpus".into()))?;
    let (h, w) = (first.image.height() as usize, first.image.width() as usize);
    let mut model = shape_classifier(h, w, seed)?;
    let inputs: Vec<Tensor> = corpus
        .entries
        .iter()
        .map(|e| model.preprocess(&e.image))
        .collect::<Result<_>>()?;
    let labels: Vec<usize> = corpus.entries.iter().map(|e| e.class).collect();
    let config = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::default()
    };
    train(&mut model, &inputs, &labels, &config)?;
    let acc = accuracy(&model, &inputs, &labels)?;
    Ok((model, acc))
}

/// Hand-built classifier that scores each class by the inner product of
/// its reference color with the mean image color, with the gray component
/// projected out so flat lighting shifts cancel. Useful when a test needs
/// a model that genuinely classifies the synthetic corpus without paying
/// for training.
pub fn mean_color_fixture(height: usize, width: usize) -> ModelGraph {
    // Reference colors of the six class hues, in class order.
    let colors: [[f32; 3]; 6] = [
        [1.0, 0.0, 0.0],
        [1.0, 1.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 1.0, 1.0],
        [0.0, 0.0, 1.0],
        [1.0, 0.0, 1.0],
    ];
    let mut weights = Vec::with_capacity(18);
    for color in &colors {
        let gray = color.iter().sum::<f32>() / 3.0;
        for c in color {
            // Scaled up so softmax differences stay meaningful.
            weights.push(8.0 * (c - gray));
        }
    }
    ModelGraph {
        input: InputSpec {
            channels: 3,
            height,
            width,
        },
        normalization: Normalization::identity(3),
        layers: vec![
            Layer::GlobalAvgPool,
            Layer::Dense {
                out_features: 6,
                in_features: 3,
                weights,
                bias: vec![0.0; 6],
            },
        ],
        num_classes: 6,
    }
}
