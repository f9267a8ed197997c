//! Response-curve construction across a sampled augmentation interval.

use image::RgbImage;

use super::{pearson, topk_intersection, CurveKind, MetricConfig, ResponseCurve};
use crate::attribution::{explain, Method};
use crate::augment::{
    apply_augmentation, sample_interval, validity_mask, warp_explanation, AugmentationClass,
    AugmentationInterval,
};
use crate::error::{Error, Result};
use crate::nn::{target_probability, ModelGraph};

/// The three curves of one (image, method, augmentation) cell, plus how
/// many samples were dropped because the explanation comparison was
/// undefined there.
#[derive(Debug, Clone)]
pub struct CurveSet {
    pub probability: ResponseCurve,
    pub correlation: ResponseCurve,
    pub top1000: ResponseCurve,
    pub skipped: usize,
}

/// Explain the image at every sampled parameter and compare against the
/// identity explanation (warped into the augmented frame for equivariant
/// kinds). The probability curve keeps every sample; the comparison curves
/// drop samples whose correlation is undefined or whose mask is too small,
/// and those drops are counted in `skipped`.
pub fn build_curves(
    model: &ModelGraph,
    image: &RgbImage,
    class: usize,
    method: Method,
    interval: &AugmentationInterval,
    config: &MetricConfig,
) -> Result<CurveSet> {
    config.validate()?;
    let (specs, _) = sample_interval(interval)?;
    let base = explain(model, image, class, method)?;
    let (h, w) = (image.height() as usize, image.width() as usize);
    let equivariant = interval.kind.class() == AugmentationClass::Equivariant;

    let mut prob = Vec::with_capacity(specs.len());
    let mut corr_params = Vec::with_capacity(specs.len());
    let mut corr_values = Vec::with_capacity(specs.len());
    let mut top_params = Vec::with_capacity(specs.len());
    let mut top_values = Vec::with_capacity(specs.len());
    let mut prob_identity = 0;
    let mut corr_identity = 0;
    let mut skipped = 0;

    for spec in &specs {
        let augmented = apply_augmentation(image, spec)?;
        if spec.is_identity() {
            prob_identity = prob.len();
        }
        prob.push(target_probability(model, &augmented, class)?);

        let explanation = explain(model, &augmented, class, method)?;
        let reference = if equivariant {
            warp_explanation(&base.heatmap, spec)?
        } else {
            base.heatmap.clone()
        };
        let mask = validity_mask(spec, h, w);
        let correlation = match pearson(&explanation.heatmap, &reference, &mask) {
            Ok(r) => r,
            Err(Error::UndefinedCorrelation) | Err(Error::EmptyMask) if !spec.is_identity() => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let top = topk_intersection(&explanation.heatmap, &reference, &mask, config.k)?;
        if spec.is_identity() {
            corr_identity = corr_params.len();
        }
        corr_params.push(spec.t);
        corr_values.push(correlation);
        top_params.push(spec.t);
        top_values.push(top);
    }

    let probability = ResponseCurve {
        kind: CurveKind::Probability,
        params: specs.iter().map(|s| s.t).collect(),
        values: prob,
        identity_index: prob_identity,
    };
    let correlation = ResponseCurve {
        kind: CurveKind::Correlation,
        params: corr_params,
        values: corr_values,
        identity_index: corr_identity,
    };
    let top1000 = ResponseCurve {
        kind: CurveKind::Top1000,
        params: top_params.clone(),
        values: top_values,
        identity_index: corr_identity,
    };
    probability.validate()?;
    correlation.validate()?;
    top1000.validate()?;
    Ok(CurveSet {
        probability,
        correlation,
        top1000,
        skipped,
    })
}
