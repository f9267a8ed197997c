//! Robustness metrics: response curves, normalized-area scores, stability
//! ratios, pixel-flipping faithfulness, and interval calibration.

mod calibrate;
mod curves;
mod flip;

pub use calibrate::{
    calibrate_interval, calibration_grid, CalibrationOutcome, DEFAULT_INTERVAL_SAMPLES,
};
pub use curves::{build_curves, CurveSet};
pub use flip::{pixel_flip_curve, pixel_flip_score};

use serde::{Deserialize, Serialize};

use crate::attribution::Method;
use crate::augment::{AugmentationKind, ValidityMask};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// What a response curve's values measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    /// Target-class probability of the augmented image.
    Probability,
    /// Pearson correlation between augmented and reference explanations.
    Correlation,
    /// Top-k intersection between augmented and reference explanations.
    Top1000,
    /// p(flipped) / p(original) as pixels are blacked out.
    FlipRatio,
}

impl CurveKind {
    pub fn label(self) -> &'static str {
        match self {
            CurveKind::Probability => "probability",
            CurveKind::Correlation => "correlation",
            CurveKind::Top1000 => "top1000",
            CurveKind::FlipRatio => "flip_ratio",
        }
    }
}

/// One measured value per sampled parameter. Parameters are strictly
/// increasing and one of them is the identity.
#[derive(Debug, Clone)]
pub struct ResponseCurve {
    pub kind: CurveKind,
    pub params: Vec<f64>,
    pub values: Vec<f64>,
    pub identity_index: usize,
}

impl ResponseCurve {
    pub fn validate(&self) -> Result<()> {
        if self.params.len() != self.values.len() {
            return Err(Error::Config(format!(
                "curve has {} params but {} values",
                self.params.len(),
                self.values.len()
            )));
        }
        if self.params.is_empty() {
            return Err(Error::Config("curve has no samples".into()));
        }
        if self.params.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config("curve params must be strictly increasing".into()));
        }
        if self.identity_index >= self.params.len() {
            return Err(Error::Config(format!(
                "identity index {} out of range for {} samples",
                self.identity_index,
                self.params.len()
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("curve values must be finite".into()));
        }
        Ok(())
    }
}

/// Normalized curve area, always inside [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveScore {
    pub value: f64,
}

/// Knobs shared by the metric kernels and the harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    /// Top-k size for explanation intersections.
    pub k: usize,
    /// Fraction of pixels flipped over the whole faithfulness window.
    pub pixel_flip_fraction: f64,
    /// Number of equidistant flip fractions inside the window.
    pub pixel_flip_steps: usize,
    /// Mean relative probability drop an interval endpoint must reach.
    pub calibration_drop: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            k: 1000,
            pixel_flip_fraction: 0.2,
            pixel_flip_steps: 20,
            calibration_drop: 0.10,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if !(self.pixel_flip_fraction > 0.0 && self.pixel_flip_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "pixel flip fraction must be in (0, 1], got {}",
                self.pixel_flip_fraction
            )));
        }
        if self.pixel_flip_steps < 1 {
            return Err(Error::Config("pixel flip steps must be at least 1".into()));
        }
        if !(self.calibration_drop > 0.0 && self.calibration_drop < 1.0) {
            return Err(Error::Config(format!(
                "calibration drop must be in (0, 1), got {}",
                self.calibration_drop
            )));
        }
        Ok(())
    }
}

/// One row of the evaluation grid: an (image, method, augmentation) cell
/// with its three curve scores and the two stability ratios.
#[derive(Debug, Clone, Serialize)]
pub struct EvaluationRecord {
    pub image_id: String,
    pub method: Method,
    pub kind: AugmentationKind,
    pub probability_score: f64,
    pub correlation_score: f64,
    pub top1000_score: f64,
    pub s_correlation: f64,
    pub s_top1000: f64,
    pub skipped_samples: usize,
}

fn check_pair(a: &Tensor, b: &Tensor, mask: &ValidityMask) -> Result<()> {
    if a.shape() != b.shape() || a.shape().len() != 2 {
        return Err(Error::Config(format!(
            "kernel inputs must be equal-shape 2-D maps, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.shape()[0] != mask.height() || a.shape()[1] != mask.width() {
        return Err(Error::Config(format!(
            "mask is {}x{} but maps are {:?}",
            mask.height(),
            mask.width(),
            a.shape()
        )));
    }
    Ok(())
}

/// Sample Pearson correlation over the masked pixels, accumulated in one
/// streaming pass. Both maps constant over the mask is undefined; exactly
/// one constant yields 0 (no linear association).
pub fn pearson(a: &Tensor, b: &Tensor, mask: &ValidityMask) -> Result<f64> {
    check_pair(a, b, mask)?;
    let mut n = 0.0f64;
    let (mut mean_a, mut mean_b) = (0.0f64, 0.0f64);
    let (mut m_a, mut m_b, mut c_ab) = (0.0f64, 0.0f64, 0.0f64);
    for ((&va, &vb), &keep) in a.data().iter().zip(b.data()).zip(mask.data()) {
        if !keep {
            continue;
        }
        let (x, y) = (va as f64, vb as f64);
        n += 1.0;
        let dx = x - mean_a;
        mean_a += dx / n;
        let dy = y - mean_b;
        mean_b += dy / n;
        m_a += dx * (x - mean_a);
        m_b += dy * (y - mean_b);
        c_ab += dx * (y - mean_b);
    }
    if n < 2.0 {
        return Err(Error::EmptyMask);
    }
    match (m_a == 0.0, m_b == 0.0) {
        (true, true) => Err(Error::UndefinedCorrelation),
        (true, false) | (false, true) => Ok(0.0),
        (false, false) => Ok((c_ab / (m_a.sqrt() * m_b.sqrt())).clamp(-1.0, 1.0)),
    }
}

/// Fraction of shared pixels among the k most important of each map,
/// restricted to the mask. Importance ranks by descending value, ties by
/// ascending row-major index; k shrinks to the masked pixel count.
pub fn topk_intersection(a: &Tensor, b: &Tensor, mask: &ValidityMask, k: usize) -> Result<f64> {
    check_pair(a, b, mask)?;
    if k < 1 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let masked: Vec<usize> = mask
        .data()
        .iter()
        .enumerate()
        .filter_map(|(i, &keep)| keep.then_some(i))
        .collect();
    if masked.is_empty() {
        return Err(Error::EmptyMask);
    }
    let k_eff = k.min(masked.len());
    let top_of = |map: &Tensor| -> Vec<usize> {
        let data = map.data();
        let mut order = masked.clone();
        order.sort_unstable_by(|&i, &j| data[j].total_cmp(&data[i]).then(i.cmp(&j)));
        order.truncate(k_eff);
        order
    };
    let top_a = top_of(a);
    let mut in_a = vec![false; a.numel()];
    for &i in &top_a {
        in_a[i] = true;
    }
    let hits = top_of(b).iter().filter(|&&i| in_a[i]).count();
    Ok(hits as f64 / k_eff as f64)
}

/// Trapezoidal area of the piecewise-linear curve (xs, ys) over [lo, hi],
/// interpolating at the window edges. Returns (area, covered width); the
/// width is accumulated with the same roundings as the area, so dividing
/// one by the other maps a constant-1 curve to exactly 1.
fn piecewise_area(xs: &[f64], ys: &[f64], lo: f64, hi: f64) -> (f64, f64) {
    let mut area = 0.0;
    let mut width = 0.0;
    for i in 0..xs.len() - 1 {
        let (x0, x1) = (xs[i], xs[i + 1]);
        let a = x0.max(lo);
        let b = x1.min(hi);
        if b <= a {
            continue;
        }
        let slope = (ys[i + 1] - ys[i]) / (x1 - x0);
        let ya = ys[i] + slope * (a - x0);
        let yb = ys[i] + slope * (b - x0);
        area += 0.5 * (ya + yb) * (b - a);
        width += b - a;
    }
    (area, width)
}

/// Normalized area of the curve over [low, high]: the curve is shifted so
/// its identity sample equals 1, clamped to [0, 1], and integrated
/// trapezoidally; the area is divided by the window width.
pub fn curve_score(curve: &ResponseCurve, low: f64, high: f64) -> Result<CurveScore> {
    curve.validate()?;
    if !(high > low) {
        return Err(Error::Config(format!(
            "score window must have positive width, got [{low}, {high}]"
        )));
    }
    let tol = (high - low) * 1e-9;
    let (first, last) = (curve.params[0], *curve.params.last().unwrap());
    if low < first - tol || high > last + tol {
        return Err(Error::IntervalNotCovered(format!(
            "curve spans [{first}, {last}] but the score window is [{low}, {high}]"
        )));
    }
    // Difference form: the identity sample becomes exactly 1 and a
    // constant curve becomes exactly constant 1.
    let identity_value = curve.values[curve.identity_index];
    let shifted: Vec<f64> = curve
        .values
        .iter()
        .map(|v| (1.0 + (v - identity_value)).clamp(0.0, 1.0))
        .collect();
    let lo = low.max(first);
    let hi = high.min(last);
    let (area, width) = piecewise_area(&curve.params, &shifted, lo, hi);
    if width <= 0.0 {
        return Err(Error::Config("score window covers no curve segment".into()));
    }
    Ok(CurveScore {
        value: (area / width).clamp(0.0, 1.0),
    })
}

/// Stability ratio: explanation-curve score over probability-curve score.
/// Below 1 means the prediction is more stable than the explanation.
pub fn s_ratio(expl_score: CurveScore, prob_score: CurveScore) -> Result<f64> {
    if prob_score.value <= 0.0 {
        return Err(Error::ZeroProbabilityScore);
    }
    Ok(expl_score.value / prob_score.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn map_from(h: usize, w: usize, data: Vec<f32>) -> Tensor {
        Tensor::from_vec(&[h, w], data).unwrap()
    }

    fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor {
        map_from(h, w, (0..h * w).map(|_| rng.gen_range(-2.0..2.0)).collect())
    }

    fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ValidityMask {
        loop {
            let data: Vec<bool> = (0..h * w).map(|_| rng.gen_bool(0.8)).collect();
            if data.iter().filter(|&&b| b).count() >= 2 {
                return ValidityMask::from_data(h, w, data);
            }
        }
    }

    /// Textbook two-pass covariance oracle.
    fn pearson_oracle(a: &Tensor, b: &Tensor, mask: &ValidityMask) -> f64 {
        let pairs: Vec<(f64, f64)> = a
            .data()
            .iter()
            .zip(b.data())
            .zip(mask.data())
            .filter(|(_, &keep)| keep)
            .map(|((&x, &y), _)| (x as f64, y as f64))
            .collect();
        let n = pairs.len() as f64;
        let mean_a = pairs.iter().map(|p| p.0).sum::<f64>() / n;
        let mean_b = pairs.iter().map(|p| p.1).sum::<f64>() / n;
        let cov: f64 = pairs.iter().map(|p| (p.0 - mean_a) * (p.1 - mean_b)).sum();
        let va: f64 = pairs.iter().map(|p| (p.0 - mean_a).powi(2)).sum();
        let vb: f64 = pairs.iter().map(|p| (p.1 - mean_b).powi(2)).sum();
        cov / (va.sqrt() * vb.sqrt())
    }

    /// Quadratic rank-counting oracle: pixel i is in the top k when fewer
    /// than k masked pixels precede it under (value desc, index asc).
    fn topk_oracle(a: &Tensor, b: &Tensor, mask: &ValidityMask, k: usize) -> f64 {
        let masked: Vec<usize> = mask
            .data()
            .iter()
            .enumerate()
            .filter_map(|(i, &keep)| keep.then_some(i))
            .collect();
        let k_eff = k.min(masked.len());
        let top_set = |map: &Tensor| -> std::collections::HashSet<usize> {
            let d = map.data();
            masked
                .iter()
                .copied()
                .filter(|&i| {
                    let rank = masked
                        .iter()
                        .filter(|&&j| d[j] > d[i] || (d[j] == d[i] && j < i))
                        .count();
                    rank < k_eff
                })
                .collect()
        };
        top_set(a).intersection(&top_set(b)).count() as f64 / k_eff as f64
    }

    #[test]
    fn pearson_of_a_map_with_itself_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_map(&mut rng, 8, 8);
        let full = ValidityMask::all_true(8, 8);
        let r = pearson(&a, &a, &full).unwrap();
        assert!((r - 1.0).abs() <= 1e-12, "r = {r}");
        let neg = map_from(8, 8, a.data().iter().map(|v| -v).collect());
        let r = pearson(&a, &neg, &full).unwrap();
        assert!((r + 1.0).abs() <= 1e-12, "r = {r}");
    }

    #[test]
    fn pearson_matches_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let a = random_map(&mut rng, 8, 8);
            let b = random_map(&mut rng, 8, 8);
            let mask = random_mask(&mut rng, 8, 8);
            let got = pearson(&a, &b, &mask).unwrap();
            let want = pearson_oracle(&a, &b, &mask);
            assert!((got - want).abs() <= 1e-10, "got {got}, want {want}");
        }
    }

    #[test]
    fn pearson_degenerate_inputs() {
        let flat = map_from(2, 2, vec![3.0; 4]);
        let ramp = map_from(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let full = ValidityMask::all_true(2, 2);
        assert!(matches!(
            pearson(&flat, &flat, &full),
            Err(Error::UndefinedCorrelation)
        ));
        assert_eq!(pearson(&flat, &ramp, &full).unwrap(), 0.0);
        assert_eq!(pearson(&ramp, &flat, &full).unwrap(), 0.0);
        let one = ValidityMask::from_data(2, 2, vec![true, false, false, false]);
        assert!(matches!(pearson(&ramp, &ramp, &one), Err(Error::EmptyMask)));
    }

    #[test]
    fn pearson_ignores_values_outside_the_mask() {
        let a = map_from(2, 2, vec![1.0, 2.0, 3.0, 999.0]);
        let b = map_from(2, 2, vec![2.0, 4.0, 6.0, -999.0]);
        let mask = ValidityMask::from_data(2, 2, vec![true, true, true, false]);
        let r = pearson(&a, &b, &mask).unwrap();
        assert!((r - 1.0).abs() <= 1e-12, "r = {r}");
    }

    #[test]
    fn topk_of_identical_maps_is_one_and_disjoint_supports_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_map(&mut rng, 6, 6);
        let full = ValidityMask::all_true(6, 6);
        assert_eq!(topk_intersection(&a, &a, &full, 10).unwrap(), 1.0);

        // Top half of a's mass on the left, b's on the right.
        let mut left = vec![0.0f32; 36];
        let mut right = vec![0.0f32; 36];
        for y in 0..6 {
            for x in 0..3 {
                left[y * 6 + x] = 5.0;
                right[y * 6 + x + 3] = 5.0;
            }
        }
        let a = map_from(6, 6, left);
        let b = map_from(6, 6, right);
        assert_eq!(topk_intersection(&a, &b, &full, 18).unwrap(), 0.0);
    }

    #[test]
    fn topk_matches_rank_counting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for case in 0..100 {
            let a = random_map(&mut rng, 12, 12);
            // Quantized values force plenty of ties through the index rule.
            let b = map_from(
                12,
                12,
                (0..144).map(|_| rng.gen_range(-3..3) as f32).collect(),
            );
            let mask = random_mask(&mut rng, 12, 12);
            let k = rng.gen_range(1..=150);
            let got = topk_intersection(&a, &b, &mask, k).unwrap();
            let want = topk_oracle(&a, &b, &mask, k);
            assert_eq!(got, want, "case {case}, k {k}");
        }
    }

    #[test]
    fn topk_shrinks_k_to_the_mask() {
        let a = map_from(2, 2, vec![4.0, 3.0, 2.0, 1.0]);
        let b = map_from(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let mask = ValidityMask::from_data(2, 2, vec![true, true, false, false]);
        // k_eff = 2 and both maps pick the same two masked pixels.
        assert_eq!(topk_intersection(&a, &b, &mask, 1000).unwrap(), 1.0);
        let empty = ValidityMask::from_data(2, 2, vec![false; 4]);
        assert!(matches!(
            topk_intersection(&a, &b, &empty, 5),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn constant_curves_score_one() {
        for c in [0.0, 0.3, 0.7, 5.0] {
            let curve = ResponseCurve {
                kind: CurveKind::Probability,
                params: vec![-1.0, 0.0, 1.0],
                values: vec![c; 3],
                identity_index: 1,
            };
            let s = curve_score(&curve, -1.0, 1.0).unwrap();
            assert!((s.value - 1.0).abs() <= 1e-12, "c = {c}: {}", s.value);
        }
    }

    #[test]
    fn symmetric_tent_scores_half() {
        let curve = ResponseCurve {
            kind: CurveKind::Correlation,
            params: vec![-1.0, 0.0, 1.0],
            values: vec![0.0, 1.0, 0.0],
            identity_index: 1,
        };
        let s = curve_score(&curve, -1.0, 1.0).unwrap();
        assert!((s.value - 0.5).abs() <= 1e-12, "{}", s.value);
    }

    #[test]
    fn values_exceeding_one_after_shift_are_clamped() {
        // Probability rises under augmentation: identity 0.5, peak 0.9.
        let curve = ResponseCurve {
            kind: CurveKind::Probability,
            params: vec![-1.0, 0.0, 1.0],
            values: vec![0.9, 0.5, 0.9],
            identity_index: 1,
        };
        let s = curve_score(&curve, -1.0, 1.0).unwrap();
        assert!(s.value <= 1.0);
        // The shifted curve is [1.4, 1.0, 1.4]; the clamp flattens it to 1.
        assert!((s.value - 1.0).abs() <= 1e-12, "{}", s.value);
    }

    #[test]
    fn shifted_identity_sample_is_exactly_one() {
        let curve = ResponseCurve {
            kind: CurveKind::Probability,
            params: vec![0.0, 1.0, 2.0],
            values: vec![0.25, 0.4, 0.1],
            identity_index: 1,
        };
        let shift = 1.0 - curve.values[curve.identity_index];
        assert_eq!(curve.values[curve.identity_index] + shift, 1.0);
        let s = curve_score(&curve, 0.0, 2.0).unwrap();
        assert!(s.value > 0.0 && s.value <= 1.0);
    }

    #[test]
    fn window_outside_the_sampled_span_is_rejected() {
        let curve = ResponseCurve {
            kind: CurveKind::Probability,
            params: vec![-1.0, 0.0, 1.0],
            values: vec![0.2, 0.5, 0.2],
            identity_index: 1,
        };
        assert!(matches!(
            curve_score(&curve, -2.0, 1.0),
            Err(Error::IntervalNotCovered(_))
        ));
        assert!(matches!(
            curve_score(&curve, -1.0, 1.5),
            Err(Error::IntervalNotCovered(_))
        ));
        // Sub-windows are fine: right half of the tent.
        let s = curve_score(&curve, 0.0, 1.0).unwrap();
        assert!((s.value - 0.85).abs() <= 1e-12, "{}", s.value);
    }

    #[test]
    fn curve_validation_rejects_malformed_curves() {
        let bad_order = ResponseCurve {
            kind: CurveKind::Probability,
            params: vec![0.0, 0.0, 1.0],
            values: vec![0.1; 3],
            identity_index: 0,
        };
        assert!(bad_order.validate().is_err());
        let bad_index = ResponseCurve {
            kind: CurveKind::Probability,
            params: vec![0.0, 1.0],
            values: vec![0.1; 2],
            identity_index: 2,
        };
        assert!(bad_index.validate().is_err());
        let bad_len = ResponseCurve {
            kind: CurveKind::Probability,
            params: vec![0.0, 1.0],
            values: vec![0.1; 3],
            identity_index: 0,
        };
        assert!(bad_len.validate().is_err());
    }

    #[test]
    fn score_is_monotone_under_pointwise_dominance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = 9;
            let params: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let idx = rng.gen_range(0..n);
            let base: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            // Same identity value means the same shift, so lowering the
            // other samples lowers the shifted curve pointwise.
            let mut lower = base.clone();
            for (i, v) in lower.iter_mut().enumerate() {
                if i != idx {
                    *v -= rng.gen_range(0.0..0.5);
                }
            }
            let hi = ResponseCurve {
                kind: CurveKind::Correlation,
                params: params.clone(),
                values: base,
                identity_index: idx,
            };
            let lo = ResponseCurve {
                kind: CurveKind::Correlation,
                params,
                values: lower,
                identity_index: idx,
            };
            let sh = curve_score(&hi, 0.0, (n - 1) as f64).unwrap();
            let sl = curve_score(&lo, 0.0, (n - 1) as f64).unwrap();
            assert!(sh.value >= sl.value - 1e-12, "{} < {}", sh.value, sl.value);
        }
    }

    #[test]
    fn s_ratio_examples() {
        let half = s_ratio(CurveScore { value: 0.4 }, CurveScore { value: 0.8 }).unwrap();
        assert!((half - 0.5).abs() <= 1e-12);
        let one = s_ratio(CurveScore { value: 0.3 }, CurveScore { value: 0.3 }).unwrap();
        assert!((one - 1.0).abs() <= 1e-12);
        assert!(matches!(
            s_ratio(CurveScore { value: 0.3 }, CurveScore { value: 0.0 }),
            Err(Error::ZeroProbabilityScore)
        ));
    }

    #[test]
    fn metric_config_validation() {
        assert!(MetricConfig::default().validate().is_ok());
        let mut c = MetricConfig::default();
        c.k = 0;
        assert!(c.validate().is_err());
        let mut c = MetricConfig::default();
        c.pixel_flip_fraction = 0.0;
        assert!(c.validate().is_err());
        let mut c = MetricConfig::default();
        c.pixel_flip_fraction = 1.5;
        assert!(c.validate().is_err());
        let mut c = MetricConfig::default();
        c.calibration_drop = 1.0;
        assert!(c.validate().is_err());
    }
}
