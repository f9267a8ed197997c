//! Pixel-flipping faithfulness: black out the most relevant pixels first
//! and watch the target probability collapse.

use image::RgbImage;

use super::{piecewise_area, CurveKind, MetricConfig, ResponseCurve};
use crate::error::{Error, Result};
use crate::nn::{target_probability, ModelGraph};
use crate::tensor::Tensor;

/// Rank pixels by descending heatmap value, ties by ascending row-major
/// index, and measure p(flipped)/p(original) at each of the equidistant
/// flip fractions in (0, pixel_flip_fraction]. The returned curve starts
/// with the unflipped point (0, 1).
pub fn pixel_flip_curve(
    model: &ModelGraph,
    image: &RgbImage,
    heatmap: &Tensor,
    class: usize,
    config: &MetricConfig,
) -> Result<ResponseCurve> {
    config.validate()?;
    let (h, w) = (image.height() as usize, image.width() as usize);
    if heatmap.shape() != [h, w] {
        return Err(Error::Config(format!(
            "heatmap shape {:?} does not match a {w}x{h} image",
            heatmap.shape()
        )));
    }
    let p0 = target_probability(model, image, class)?;
    if p0 <= 0.0 {
        return Err(Error::ZeroProbabilityScore);
    }

    let data = heatmap.data();
    let mut order: Vec<usize> = (0..h * w).collect();
    order.sort_unstable_by(|&i, &j| data[j].total_cmp(&data[i]).then(i.cmp(&j)));

    let total = h * w;
    let mut params = Vec::with_capacity(config.pixel_flip_steps + 1);
    let mut values = Vec::with_capacity(config.pixel_flip_steps + 1);
    params.push(0.0);
    values.push(1.0);

    let mut flipped = image.clone();
    let mut cursor = 0usize;
    for step in 1..=config.pixel_flip_steps {
        let fraction = step as f64 * config.pixel_flip_fraction / config.pixel_flip_steps as f64;
        let count = ((fraction * total as f64).round() as usize).min(total);
        while cursor < count {
            let idx = order[cursor];
            flipped.put_pixel((idx % w) as u32, (idx / w) as u32, image::Rgb([0, 0, 0]));
            cursor += 1;
        }
        let p = target_probability(model, &flipped, class)?;
        params.push(fraction);
        values.push(p / p0);
    }

    let curve = ResponseCurve {
        kind: CurveKind::FlipRatio,
        params,
        values,
        identity_index: 0,
    };
    curve.validate()?;
    Ok(curve)
}

/// Normalized area between the constant-1 line and the clamped curve over
/// [0, pixel_flip_fraction]. Higher means the probability collapsed
/// faster, i.e. the ranking was more faithful.
pub fn pixel_flip_score(curve: &ResponseCurve, config: &MetricConfig) -> Result<super::CurveScore> {
    config.validate()?;
    curve.validate()?;
    let window = config.pixel_flip_fraction;
    let tol = window * 1e-9;
    if curve.params[0] > tol || *curve.params.last().unwrap() < window - tol {
        return Err(Error::IntervalNotCovered(format!(
            "flip curve spans [{}, {}] but the window is [0, {window}]",
            curve.params[0],
            curve.params.last().unwrap()
        )));
    }
    let clamped: Vec<f64> = curve.values.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let (area, width) = piecewise_area(&curve.params, &clamped, 0.0, window);
    if width <= 0.0 {
        return Err(Error::Config("flip window covers no curve segment".into()));
    }
    Ok(super::CurveScore {
        value: ((width - area) / width).clamp(0.0, 1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::{explain_gradients, reduce_heatmap};
    use crate::nn::{forward, softmax, InputSpec, Layer, ModelGraph, Normalization};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_cnn(seed: u64) -> ModelGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gen = |n: usize| -> Vec<f32> { (0..n).map(|_| rng.gen_range(-0.4..0.4)).collect() };
        ModelGraph {
            input: InputSpec { channels: 3, height: 8, width: 8 },
            normalization: Normalization::identity(3),
            layers: vec![
                Layer::Conv2D {
                    out_channels: 4,
                    in_channels: 3,
                    kernel_h: 3,
                    kernel_w: 3,
                    stride: 1,
                    padding: 1,
                    weights: gen(4 * 3 * 3 * 3),
                    bias: gen(4),
                },
                Layer::ReLU,
                Layer::Flatten,
                Layer::Dense {
                    out_features: 3,
                    in_features: 4 * 8 * 8,
                    weights: gen(3 * 4 * 8 * 8),
                    bias: gen(3),
                },
            ],
            num_classes: 3,
        }
    }

    fn random_image(seed: u64, w: u32, h: u32) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::from_fn(w, h, |_, _| {
            image::Rgb([rng.gen(), rng.gen(), rng.gen()])
        })
    }

    /// Start from the original image at every step and rank with a
    /// two-pass stable sort instead of one composite comparator.
    fn flip_oracle(
        model: &ModelGraph,
        image: &RgbImage,
        heatmap: &Tensor,
        class: usize,
        config: &MetricConfig,
    ) -> Vec<f64> {
        let (h, w) = (image.height() as usize, image.width() as usize);
        let data = heatmap.data();
        let mut order: Vec<usize> = (0..h * w).collect();
        order.sort(); // ascending index
        order.sort_by(|&i, &j| data[j].total_cmp(&data[i])); // stable: ties keep index order
        let p0 = target_probability(model, image, class).unwrap();
        let mut values = vec![1.0];
        for step in 1..=config.pixel_flip_steps {
            let fraction = step as f64 * config.pixel_flip_fraction / config.pixel_flip_steps as f64;
            let count = ((fraction * (h * w) as f64).round() as usize).min(h * w);
            let mut img = image.clone();
            for &idx in &order[..count] {
                img.put_pixel((idx % w) as u32, (idx / w) as u32, image::Rgb([0, 0, 0]));
            }
            let input = model.preprocess(&img).unwrap();
            let trace = forward(model, &input).unwrap();
            values.push(softmax(trace.logits())[class] / p0);
        }
        values
    }

    #[test]
    fn curve_starts_at_one_and_matches_an_independent_rerun() {
        let model = small_cnn(1);
        let config = MetricConfig {
            pixel_flip_steps: 8,
            ..MetricConfig::default()
        };
        for seed in 0..3 {
            let img = random_image(seed, 8, 8);
            let class = crate::nn::predict(&model, &img).unwrap();
            let expl = explain_gradients(&model, &img, class).unwrap();
            let heat = reduce_heatmap(&expl.per_channel);
            let curve = pixel_flip_curve(&model, &img, &heat, class, &config).unwrap();
            assert_eq!(curve.params[0], 0.0);
            assert_eq!(curve.values[0], 1.0);
            assert_eq!(curve.identity_index, 0);
            assert_eq!(curve.params.len(), config.pixel_flip_steps + 1);
            let want = flip_oracle(&model, &img, &heat, class, &config);
            assert_eq!(curve.values, want, "seed {seed}");
        }
    }

    #[test]
    fn all_black_image_is_a_fixed_point() {
        let model = small_cnn(2);
        let img = RgbImage::from_pixel(8, 8, image::Rgb([0, 0, 0]));
        let heat = Tensor::from_vec(&[8, 8], (0..64).map(|i| i as f32).collect()).unwrap();
        let curve = pixel_flip_curve(&model, &img, &heat, 0, &MetricConfig::default()).unwrap();
        assert!(curve.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn ties_flip_the_lowest_row_major_index_first() {
        // Only the top-left red value feeds class 0, so flipping under a
        // constant heatmap must hit exactly that pixel first.
        let n = 3 * 2 * 2;
        let mut weights = vec![0.0f32; 2 * n];
        weights[0] = 1.0; // class 0, red channel, pixel (0,0)
        let model = ModelGraph {
            input: InputSpec { channels: 3, height: 2, width: 2 },
            normalization: Normalization::identity(3),
            layers: vec![
                Layer::Flatten,
                Layer::Dense {
                    out_features: 2,
                    in_features: n,
                    weights,
                    bias: vec![0.0, 0.0],
                },
            ],
            num_classes: 2,
        };
        let img = RgbImage::from_pixel(2, 2, image::Rgb([200, 50, 50]));
        let flat = Tensor::from_vec(&[2, 2], vec![5.0; 4]).unwrap();
        let config = MetricConfig {
            pixel_flip_fraction: 0.25,
            pixel_flip_steps: 1,
            ..MetricConfig::default()
        };
        let curve = pixel_flip_curve(&model, &img, &flat, 0, &config).unwrap();
        // One flipped pixel kills the only class-0 evidence.
        assert!(curve.values[1] < 1.0);
        let p0 = target_probability(&model, &img, 0).unwrap();
        let mut killed = img.clone();
        killed.put_pixel(0, 0, image::Rgb([0, 0, 0]));
        let want = target_probability(&model, &killed, 0).unwrap() / p0;
        assert_eq!(curve.values[1], want);
    }

    #[test]
    fn score_examples() {
        let config = MetricConfig::default();
        let window = config.pixel_flip_fraction;
        let flat = ResponseCurve {
            kind: CurveKind::FlipRatio,
            params: vec![0.0, window / 2.0, window],
            values: vec![1.0, 1.0, 1.0],
            identity_index: 0,
        };
        assert_eq!(pixel_flip_score(&flat, &config).unwrap().value, 0.0);

        let dead = ResponseCurve {
            kind: CurveKind::FlipRatio,
            params: vec![0.0, window],
            values: vec![0.0, 0.0],
            identity_index: 0,
        };
        assert_eq!(pixel_flip_score(&dead, &config).unwrap().value, 1.0);

        let linear = ResponseCurve {
            kind: CurveKind::FlipRatio,
            params: vec![0.0, window],
            values: vec![1.0, 0.0],
            identity_index: 0,
        };
        let s = pixel_flip_score(&linear, &config).unwrap().value;
        assert!((s - 0.5).abs() <= 1e-12, "{s}");
    }

    #[test]
    fn score_rejects_curves_not_spanning_the_window() {
        let config = MetricConfig::default();
        let short = ResponseCurve {
            kind: CurveKind::FlipRatio,
            params: vec![0.0, 0.1],
            values: vec![1.0, 0.5],
            identity_index: 0,
        };
        assert!(matches!(
            pixel_flip_score(&short, &config),
            Err(Error::IntervalNotCovered(_))
        ));
    }

    #[test]
    fn values_outside_unit_range_are_clamped_in_the_score() {
        let config = MetricConfig::default();
        let window = config.pixel_flip_fraction;
        // Probability that rises above the original clamps to 1.
        let rising = ResponseCurve {
            kind: CurveKind::FlipRatio,
            params: vec![0.0, window],
            values: vec![1.0, 1.8],
            identity_index: 0,
        };
        assert_eq!(pixel_flip_score(&rising, &config).unwrap().value, 0.0);
    }
}
