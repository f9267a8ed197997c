//! Interval calibration: find the smallest symmetric parameter interval
//! whose endpoints cost the model a set fraction of its confidence.

use image::RgbImage;

use super::MetricConfig;
use crate::augment::{apply_augmentation, AugmentationInterval, AugmentationKind, AugmentationSpec};
use crate::error::{Error, Result};
use crate::nn::{target_probability, ModelGraph};

/// Sample count written into calibrated intervals; runs override it.
pub const DEFAULT_INTERVAL_SAMPLES: usize = 21;

/// A calibrated interval, flagged when no grid point reached the target
/// drop and the widest candidate was returned instead.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationOutcome {
    pub interval: AugmentationInterval,
    pub warned: bool,
}

/// Twenty log-spaced candidate magnitudes per kind, from one fiftieth of
/// the per-kind maximum up to the maximum itself. Scale magnitudes live in
/// log space: a magnitude m yields the interval [exp(-m), exp(m)].
pub fn calibration_grid(kind: AugmentationKind) -> Vec<f64> {
    let max = match kind {
        AugmentationKind::Brightness => 128.0,
        AugmentationKind::Hue => 90.0,
        AugmentationKind::Saturation => 128.0,
        AugmentationKind::Rotate => 45.0,
        AugmentationKind::Scale => 1.5f64.ln(),
        AugmentationKind::Translate => 0.25,
    };
    let min = max / 50.0;
    (0..20)
        .map(|i| min * (max / min).powf(i as f64 / 19.0))
        .collect()
}

fn endpoints(kind: AugmentationKind, magnitude: f64) -> (f64, f64) {
    if kind == AugmentationKind::Scale {
        ((-magnitude).exp(), magnitude.exp())
    } else {
        (-magnitude, magnitude)
    }
}

/// Scan the candidate grid from the identity outwards and return the first
/// interval where the corpus-mean relative probability drop reaches
/// `calibration_drop` at either endpoint. Falls back to the widest
/// candidate, flagged, when none qualifies. The corpus must already be
/// filtered to correctly classified images.
pub fn calibrate_interval(
    model: &ModelGraph,
    corpus: &[(RgbImage, usize)],
    kind: AugmentationKind,
    config: &MetricConfig,
) -> Result<CalibrationOutcome> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus("calibration corpus".into()));
    }
    let originals: Vec<f64> = corpus
        .iter()
        .map(|(img, class)| target_probability(model, img, *class))
        .collect::<Result<_>>()?;

    let mean_drop = |t: f64| -> Result<f64> {
        let mut total = 0.0;
        for ((img, class), &p0) in corpus.iter().zip(&originals) {
            let spec = AugmentationSpec::new(kind, t);
            let p = target_probability(model, &apply_augmentation(img, &spec)?, *class)?;
            total += (p0 - p) / p0;
        }
        Ok(total / corpus.len() as f64)
    };

    let grid = calibration_grid(kind);
    for &magnitude in &grid {
        let (low, high) = endpoints(kind, magnitude);
        if mean_drop(low)? >= config.calibration_drop || mean_drop(high)? >= config.calibration_drop {
            return Ok(CalibrationOutcome {
                interval: AugmentationInterval {
                    kind,
                    low,
                    high,
                    samples: DEFAULT_INTERVAL_SAMPLES,
                },
                warned: false,
            });
        }
    }
    let (low, high) = endpoints(kind, *grid.last().unwrap());
    Ok(CalibrationOutcome {
        interval: AugmentationInterval {
            kind,
            low,
            high,
            samples: DEFAULT_INTERVAL_SAMPLES,
        },
        warned: true,
    })
}
