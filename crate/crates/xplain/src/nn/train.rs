//! Mini-batch SGD on softmax cross-entropy. Just enough of a trainer to fit
//! small fixture models; not a general purpose optimizer.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::backward::{backprop, zeroed_grads, ReluGate};
use crate::nn::{forward, softmax, Layer, ModelGraph};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            learning_rate: 0.05,
            seed: 0,
        }
    }
}

/// Train in place on already normalized inputs. Returns the mean
/// cross-entropy loss of each epoch.
pub fn train(
    model: &mut ModelGraph,
    inputs: &[Tensor],
    labels: &[usize],
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    model.validate()?;
    if inputs.is_empty() || inputs.len() != labels.len() {
        return Err(Error::Config(format!(
            "{} inputs for {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= model.num_classes) {
        return Err(Error::ClassOutOfRange {
            class: bad,
            num_classes: model.num_classes,
        });
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            let mut grads = zeroed_grads(model);
            let mut batch_loss = 0.0f64;
            for &i in batch {
                let trace = forward(model, &inputs[i])?;
                let probs = softmax(trace.logits());
                batch_loss -= probs[labels[i]].ln();
                let mut dlogits: Vec<f32> = probs.iter().map(|&p| p as f32).collect();
                dlogits[labels[i]] -= 1.0;
                backprop(model, &trace, &dlogits, ReluGate::Plain, Some(&mut grads));
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            let scale = config.learning_rate / batch.len() as f32;
            for (layer, g) in model.layers.iter_mut().zip(&grads) {
                if let Layer::Conv2D { weights, bias, .. } | Layer::Dense { weights, bias, .. } =
                    layer
                {
                    for (w, dw) in weights.iter_mut().zip(&g.weights) {
                        *w -= scale * dw;
                    }
                    for (b, db) in bias.iter_mut().zip(&g.bias) {
                        *b -= scale * db;
                    }
                }
            }
            epoch_loss += batch_loss;
        }
        history.push(epoch_loss / inputs.len() as f64);
    }
    Ok(history)
}

/// Fraction of inputs whose argmax logit matches the label.
pub fn accuracy(model: &ModelGraph, inputs: &[Tensor], labels: &[usize]) -> Result<f64> {
    let mut correct = 0usize;
    for (input, &label) in inputs.iter().zip(labels) {
        let trace = forward(model, input)?;
        let logits = trace.logits();
        let mut best = 0;
        for (i, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = i;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / inputs.len() as f64)
}
