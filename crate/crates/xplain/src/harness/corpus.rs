//! Corpus loading, the synthetic shape corpus, and correctness filtering.

use std::path::Path;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::augment::color::{hsv_to_rgb, rgb_to_hsv};
use crate::error::{Error, Result};
use crate::nn::{predict, ModelGraph};

/// One labeled image. `correct` is set by [`filter_correct`].
#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub id: String,
    pub image: RgbImage,
    pub class: usize,
    pub correct: bool,
}

/// An ordered set of labeled images with unique ids.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub entries: Vec<CorpusEntry>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// (image, class) pairs for interval calibration.
    pub fn pairs(&self) -> Vec<(RgbImage, usize)> {
        self.entries
            .iter()
            .map(|e| (e.image.clone(), e.class))
            .collect()
    }
}

/// A synthetic class: a colored bar, either lying across the image or
/// standing upright. Hues are in half-degree units (0..180), 30 units
/// (= 60 degrees) apart. Color alone narrows a label to a hue pair; the
/// bar's orientation decides between the pair, so a classifier has to
/// look at geometry as well as color. That keeps trained fixtures honest:
/// geometric augmentations genuinely cost them confidence.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticClass {
    pub name: &'static str,
    pub hue: f64,
    pub upright: bool,
}

pub const SYNTHETIC_CLASSES: [SyntheticClass; 6] = [
    SyntheticClass { name: "red-across", hue: 0.0, upright: false },
    SyntheticClass { name: "yellow-across", hue: 30.0, upright: false },
    SyntheticClass { name: "green-across", hue: 60.0, upright: false },
    SyntheticClass { name: "red-upright", hue: 0.0, upright: true },
    SyntheticClass { name: "yellow-upright", hue: 30.0, upright: true },
    SyntheticClass { name: "green-upright", hue: 60.0, upright: true },
];

/// Deterministic corpus of colored bars on dull textured backgrounds.
/// Classes rotate round-robin. Bars keep a margin of at least 15% of the
/// short side, so moderate rotations, scalings, and translations keep the
/// object in frame and its label intact.
pub fn generate_synthetic_corpus(seed: u64, n: usize, height: u32, width: u32) -> Result<Corpus> {
    if n == 0 {
        return Err(Error::EmptyCorpus("synthetic corpus with n = 0".into()));
    }
    if height < 8 || width < 8 {
        return Err(Error::Config(format!(
            "synthetic images must be at least 8x8, got {width}x{height}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = height.min(width) as f64;
    let margin = 0.15 * side;
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % SYNTHETIC_CLASSES.len();
        let def = SYNTHETIC_CLASSES[class];
        let half_len = rng.gen_range(0.25..0.33) * side;
        let half_thick = rng.gen_range(0.09..0.14) * side;
        let (hx, hy) = if def.upright {
            (half_thick, half_len)
        } else {
            (half_len, half_thick)
        };
        let cx = rng.gen_range(margin + hx..width as f64 - margin - hx);
        let cy = rng.gen_range(margin + hy..height as f64 - margin - hy);
        let mut img = RgbImage::new(width, height);
        for y in 0..height {
            for x in 0..width {
                let inside = (x as f64 - cx).abs() <= hx && (y as f64 - cy).abs() <= hy;
                let (h, s, v) = if inside {
                    (def.hue, 255.0, rng.gen_range(150.0..250.0))
                } else {
                    (rng.gen_range(0.0..180.0), rng.gen_range(0.0..25.0), rng.gen_range(40.0..100.0))
                };
                let (rr, gg, bb) = hsv_to_rgb(h, s, v);
                img.put_pixel(x, y, image::Rgb([rr, gg, bb]));
            }
        }
        entries.push(CorpusEntry {
            id: format!("syn_{i:04}"),
            image: img,
            class,
            correct: false,
        });
    }
    Ok(Corpus { entries })
}

/// Recover a synthetic label from pixels alone: circular mean hue of the
/// saturated pixels picks the hue group, and the spread of those pixels
/// (wider than tall, or taller than wide) picks the orientation.
pub fn decode_synthetic_label(image: &RgbImage) -> Result<usize> {
    let (mut sin, mut cos) = (0.0f64, 0.0f64);
    let (mut sx, mut sy, mut sxx, mut syy, mut count) = (0.0f64, 0.0, 0.0, 0.0, 0usize);
    for (x, y, p) in image.enumerate_pixels() {
        let (h, s, v) = rgb_to_hsv(p[0], p[1], p[2]);
        if s >= 120.0 && v >= 80.0 {
            // Hue units are half-degrees, so the full circle is 180.
            let angle = h / 180.0 * std::f64::consts::TAU;
            sin += angle.sin();
            cos += angle.cos();
            sx += x as f64;
            sy += y as f64;
            sxx += (x as f64) * (x as f64);
            syy += (y as f64) * (y as f64);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Config("no saturated shape pixels to decode".into()));
    }
    let mean = sin.atan2(cos).rem_euclid(std::f64::consts::TAU) / std::f64::consts::TAU * 180.0;
    let (mut group, mut best_dist) = (0, f64::INFINITY);
    for (i, def) in SYNTHETIC_CLASSES.iter().take(3).enumerate() {
        let raw = (mean - def.hue).abs();
        let dist = raw.min(180.0 - raw);
        if dist < best_dist {
            group = i;
            best_dist = dist;
        }
    }
    let n = count as f64;
    let var_x = sxx / n - (sx / n).powi(2);
    let var_y = syy / n - (sy / n).powi(2);
    Ok(if var_y > var_x { group + 3 } else { group })
}

/// Load `labels.csv` (columns `id,class`) plus `<id>.png` images from a
/// directory. Entries with missing, unreadable, or wrong-sized images are
/// dropped with a warning; ids must be unique; the result is sorted by id.
pub fn load_corpus(dir: &Path, height: u32, width: u32) -> Result<Corpus> {
    let index = dir.join("labels.csv");
    let mut reader = csv::Reader::from_path(&index)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", index.display())))?;
    let mut entries: Vec<CorpusEntry> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::Config(format!("bad index row: {e}")))?;
        if row.len() != 2 {
            return Err(Error::Config(format!(
                "index rows need two columns (id,class), got {}",
                row.len()
            )));
        }
        let id = row[0].trim().to_string();
        let class: usize = row[1]
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad class for id {id}: {}", &row[1])))?;
        if !seen.insert(id.clone()) {
            return Err(Error::Config(format!("duplicate corpus id {id}")));
        }
        let path = dir.join(format!("{id}.png"));
        let image = match image::open(&path) {
            Ok(img) => img.to_rgb8(),
            Err(e) => {
                log::warn!("skipping {id}: cannot read {}: {e}", path.display());
                continue;
            }
        };
        if image.width() != width || image.height() != height {
            log::warn!(
                "skipping {id}: image is {}x{}, expected {width}x{height}",
                image.width(),
                image.height()
            );
            continue;
        }
        entries.push(CorpusEntry {
            id,
            image,
            class,
            correct: false,
        });
    }
    if entries.is_empty() {
        return Err(Error::EmptyCorpus(format!(
            "no usable entries under {}",
            dir.display()
        )));
    }
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(Corpus { entries })
}

/// Keep only entries the model classifies correctly at identity.
pub fn filter_correct(model: &ModelGraph, corpus: &Corpus) -> Result<Corpus> {
    let mut kept = Vec::new();
    for entry in &corpus.entries {
        if predict(model, &entry.image)? == entry.class {
            let mut entry = entry.clone();
            entry.correct = true;
            kept.push(entry);
        }
    }
    log::info!("kept {}/{} correctly classified images", kept.len(), corpus.len());
    Ok(Corpus { entries: kept })
}
