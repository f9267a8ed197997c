//! Image augmentations over calibrated parameter ranges.
//!
//! Three color shifts (brightness, hue, saturation) leave pixel positions
//! alone, so an explanation of the augmented image is compared against the
//! original explanation directly. Three geometric warps (rotate, scale,
//! translate) move content; the original explanation must be warped the
//! same way first, and comparisons only count pixels whose content exists
//! in both frames (the validity mask).

pub(crate) mod color;
mod geometry;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use geometry::{center, support_mask, translate_pixels, warp_image, warp_plane, Affine};

/// The six supported augmentations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentationKind {
    Brightness,
    Hue,
    Saturation,
    Rotate,
    Scale,
    Translate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentationClass {
    /// Explanations should not change under the augmentation.
    Invariant,
    /// Explanations should move with the image content.
    Equivariant,
}

impl AugmentationKind {
    pub fn all() -> [AugmentationKind; 6] {
        [
            AugmentationKind::Brightness,
            AugmentationKind::Hue,
            AugmentationKind::Saturation,
            AugmentationKind::Rotate,
            AugmentationKind::Scale,
            AugmentationKind::Translate,
        ]
    }

    pub fn class(self) -> AugmentationClass {
        match self {
            AugmentationKind::Brightness | AugmentationKind::Hue | AugmentationKind::Saturation => {
                AugmentationClass::Invariant
            }
            AugmentationKind::Rotate | AugmentationKind::Scale | AugmentationKind::Translate => {
                AugmentationClass::Equivariant
            }
        }
    }

    /// Parameter value that leaves the image untouched.
    pub fn identity(self) -> f64 {
        match self {
            AugmentationKind::Scale => 1.0,
            _ => 0.0,
        }
    }

    /// Lowercase name used on the command line and in file names.
    pub fn slug(self) -> &'static str {
        match self {
            AugmentationKind::Brightness => "brightness",
            AugmentationKind::Hue => "hue",
            AugmentationKind::Saturation => "saturation",
            AugmentationKind::Rotate => "rotate",
            AugmentationKind::Scale => "scale",
            AugmentationKind::Translate => "translate",
        }
    }

    /// Capitalized name used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            AugmentationKind::Brightness => "Brightness",
            AugmentationKind::Hue => "Hue",
            AugmentationKind::Saturation => "Saturation",
            AugmentationKind::Rotate => "Rotate",
            AugmentationKind::Scale => "Scale",
            AugmentationKind::Translate => "Translate",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::all()
            .into_iter()
            .find(|k| k.slug().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownKind(s.to_string()))
    }
}

/// One augmentation instance: a kind plus a parameter value.
///
/// Parameter units: brightness and saturation are additive byte offsets,
/// hue is in byte-hue units (1 unit = 2 degrees, period 180), rotation is
/// in degrees, scale is a multiplicative factor, translate is a signed
/// fraction of the image side applied to both axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentationSpec {
    pub kind: AugmentationKind,
    pub t: f64,
}

impl AugmentationSpec {
    pub fn new(kind: AugmentationKind, t: f64) -> Self {
        AugmentationSpec { kind, t }
    }

    pub fn identity(kind: AugmentationKind) -> Self {
        AugmentationSpec {
            kind,
            t: kind.identity(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.t == self.kind.identity()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.t.is_finite() {
            return Err(Error::Config(format!(
                "augmentation parameter must be finite, got {}",
                self.t
            )));
        }
        if self.kind == AugmentationKind::Scale && self.t <= 0.0 {
            return Err(Error::NonPositiveScale(self.t));
        }
        Ok(())
    }
}

impl std::fmt::Display for AugmentationSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "kind={} t={}", self.kind.label(), self.t)
    }
}

/// Parameter range [low, high] around the identity, sampled at `samples`
/// equidistant points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationInterval {
    pub kind: AugmentationKind,
    pub low: f64,
    pub high: f64,
    pub samples: usize,
}

impl AugmentationInterval {
    pub fn validate(&self) -> Result<()> {
        let id = self.kind.identity();
        let ok = self.low.is_finite()
            && self.high.is_finite()
            && self.low < id
            && id < self.high
            && self.samples >= 3
            && self.samples % 2 == 1
            && (self.kind != AugmentationKind::Scale || self.low > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInterval {
                kind: self.kind.slug().to_string(),
                low: self.low,
                high: self.high,
                samples: self.samples,
            })
        }
    }
}

/// Pixels where original content exists in both the original and the
/// augmented frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidityMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl ValidityMask {
    pub fn all_true(height: usize, width: usize) -> Self {
        ValidityMask {
            width,
            height,
            data: vec![true; width * height],
        }
    }

    pub fn from_data(height: usize, width: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), width * height);
        ValidityMask { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count_true(&self) -> usize {
        self.data.iter().filter(|&&m| m).count()
    }

    /// Shrink the true region by `margin` pixels in every direction.
    pub fn eroded(&self, margin: usize) -> ValidityMask {
        let mut data = vec![false; self.data.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                if !self.get(y, x) {
                    continue;
                }
                let mut keep = true;
                'scan: for dy in y.saturating_sub(margin)..=(y + margin).min(self.height - 1) {
                    for dx in x.saturating_sub(margin)..=(x + margin).min(self.width - 1) {
                        if !self.get(dy, dx) {
                            keep = false;
                            break 'scan;
                        }
                    }
                }
                // Pixels within margin of the frame edge are dropped too.
                if y < margin || x < margin || y + margin >= self.height || x + margin >= self.width
                {
                    keep = false;
                }
                data[y * self.width + x] = keep;
            }
        }
        ValidityMask {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// Output-to-source affine map for an equivariant spec.
fn inverse_affine(spec: &AugmentationSpec, width: usize, height: usize) -> Affine {
    let (cx, cy) = center(width, height);
    match spec.kind {
        AugmentationKind::Rotate => Affine::rotation_about(-spec.t, cx, cy),
        AugmentationKind::Scale => Affine::scale_about(1.0 / spec.t, cx, cy),
        AugmentationKind::Translate => {
            let (dx, dy) = translate_pixels(spec.t, width, height);
            Affine::translation(-dx, -dy)
        }
        _ => unreachable!("inverse_affine on invariant kind"),
    }
}

/// Apply one augmentation to a byte image. The identity parameter returns a
/// bit-identical copy.
pub fn apply_augmentation(image: &RgbImage, spec: &AugmentationSpec) -> Result<RgbImage> {
    spec.validate()?;
    if spec.is_identity() {
        return Ok(image.clone());
    }
    Ok(match spec.kind {
        AugmentationKind::Brightness => color::shift_hsv(image, 0.0, 0.0, spec.t),
        AugmentationKind::Hue => color::shift_hsv(image, spec.t, 0.0, 0.0),
        AugmentationKind::Saturation => color::shift_hsv(image, 0.0, spec.t, 0.0),
        AugmentationKind::Rotate | AugmentationKind::Scale | AugmentationKind::Translate => {
            let (w, h) = image.dimensions();
            warp_image(image, &inverse_affine(spec, w as usize, h as usize))
        }
    })
}

/// Warp a heatmap with the same geometric map as `apply_augmentation`,
/// bilinear with zero fill. Only valid for equivariant kinds.
pub fn warp_explanation(heatmap: &Tensor, spec: &AugmentationSpec) -> Result<Tensor> {
    spec.validate()?;
    if spec.kind.class() != AugmentationClass::Equivariant {
        return Err(Error::NotEquivariant {
            op: "warp_explanation",
            kind: spec.kind.slug().to_string(),
        });
    }
    let [h, w] = heatmap.shape() else {
        return Err(Error::Config(format!(
            "heatmap must be 2-dimensional, got {:?}",
            heatmap.shape()
        )));
    };
    if spec.is_identity() {
        return Ok(heatmap.clone());
    }
    let warped = warp_plane(heatmap.data(), *w, *h, &inverse_affine(spec, *w, *h));
    Tensor::from_vec(&[*h, *w], warped)
}

/// Mask of pixels whose inverse-mapped source coordinate has full bilinear
/// support. Invariant kinds and the identity parameter give all-true masks.
pub fn validity_mask(spec: &AugmentationSpec, height: usize, width: usize) -> ValidityMask {
    if spec.kind.class() == AugmentationClass::Invariant || spec.is_identity() {
        return ValidityMask::all_true(height, width);
    }
    let data = support_mask(width, height, &inverse_affine(spec, width, height));
    ValidityMask {
        width,
        height,
        data,
    }
}

/// Equidistant parameters over the interval, identity guaranteed present
/// exactly once. Returns the specs and the identity position. Asymmetric
/// intervals that miss the identity get it inserted, so the result can hold
/// `samples + 1` entries.
pub fn sample_interval(interval: &AugmentationInterval) -> Result<(Vec<AugmentationSpec>, usize)> {
    interval.validate()?;
    let id = interval.kind.identity();
    let span = interval.high - interval.low;
    let step = span / (interval.samples - 1) as f64;
    let snap_tol = span * 1e-9;
    let mut params: Vec<f64> = (0..interval.samples)
        .map(|i| {
            if i + 1 == interval.samples {
                interval.high
            } else {
                interval.low + i as f64 * step
            }
        })
        .map(|p| if (p - id).abs() <= snap_tol { id } else { p })
        .collect();
    if !params.contains(&id) {
        let pos = params.partition_point(|&p| p < id);
        params.insert(pos, id);
    }
    let identity_index = params.iter().position(|&p| p == id).unwrap();
    let specs = params
        .into_iter()
        .map(|t| AugmentationSpec::new(interval.kind, t))
        .collect();
    Ok((specs, identity_index))
}
