//! Evaluation harness: run a methods x augmentations grid over a corpus
//! and produce a deterministic report.
//!
//! Per correctly classified image the harness evaluates one cell per
//! (method, augmentation kind) pair plus one pixel-flip row per method
//! and one random flip baseline. Cells fail in isolation; a run only
//! errors out on configuration problems or an unusable corpus. Results
//! are independent of the worker count byte for byte.

pub mod corpus;
pub mod fixtures;
pub mod report;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attribution::{explain, Method};
use crate::augment::{AugmentationInterval, AugmentationKind};
use crate::error::{Error, Result};
use crate::harness::corpus::{filter_correct, Corpus, CorpusEntry};
use crate::metrics::{
    build_curves, calibrate_interval, curve_score, pixel_flip_curve, pixel_flip_score, s_ratio,
    CurveScore, CurveSet, EvaluationRecord, MetricConfig, ResponseCurve, DEFAULT_INTERVAL_SAMPLES,
};
use crate::nn::ModelGraph;
use crate::parallel::{par_map, with_workers};
use crate::tensor::Tensor;

pub use report::{emit_report, Report};
use report::{
    aggregate_flips, aggregate_records, CellCurves, CurveRow, FailedCell, FlipRow, IntervalReport,
};

/// Where the augmentation intervals come from: calibrated on the corpus,
/// or supplied explicitly with one interval per evaluated kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "intervals", rename_all = "snake_case")]
pub enum IntervalChoice {
    Calibrate,
    Explicit(Vec<AugmentationInterval>),
}

/// Full description of an evaluation run. Everything that affects the
/// emitted bytes lives here; `workers` only affects wall time, so it is
/// left out of the serialized echo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub methods: Vec<Method>,
    pub kinds: Vec<AugmentationKind>,
    pub intervals: IntervalChoice,
    pub metric: MetricConfig,
    /// Samples per response curve. Overrides the sample count of
    /// explicit intervals so every curve has the same resolution.
    pub samples: usize,
    /// Seed for the random flip baselines.
    pub seed: u64,
    /// Worker threads; 0 uses rayon's default pool size.
    #[serde(skip)]
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            methods: Method::all().to_vec(),
            kinds: AugmentationKind::all().to_vec(),
            intervals: IntervalChoice::Calibrate,
            metric: MetricConfig::default(),
            samples: DEFAULT_INTERVAL_SAMPLES,
            seed: 0,
            workers: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        if self.kinds.is_empty() {
            return Err(Error::Config("no augmentation kinds selected".into()));
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return Err(Error::Config(format!("duplicate method {}", m.slug())));
            }
        }
        for (i, k) in self.kinds.iter().enumerate() {
            if self.kinds[..i].contains(k) {
                return Err(Error::Config(format!("duplicate kind {}", k.slug())));
            }
        }
        if self.samples < 3 || self.samples % 2 == 0 {
            return Err(Error::Config(format!(
                "samples must be odd and at least 3, got {}",
                self.samples
            )));
        }
        self.metric.validate()
    }
}

/// One interval per requested kind, in request order, either calibrated
/// on the kept corpus or validated from the explicit list.
fn resolve_intervals(
    model: &ModelGraph,
    kept: &Corpus,
    config: &RunConfig,
) -> Result<Vec<IntervalReport>> {
    let mut out = Vec::with_capacity(config.kinds.len());
    match &config.intervals {
        IntervalChoice::Calibrate => {
            let pairs = kept.pairs();
            for &kind in &config.kinds {
                let outcome = calibrate_interval(model, &pairs, kind, &config.metric)?;
                let interval = AugmentationInterval {
                    samples: config.samples,
                    ..outcome.interval
                };
                out.push(IntervalReport {
                    interval,
                    calibrated: true,
                    warned: outcome.warned,
                });
            }
        }
        IntervalChoice::Explicit(list) => {
            for &kind in &config.kinds {
                let given = list.iter().find(|iv| iv.kind == kind).ok_or_else(|| {
                    Error::Config(format!("no interval supplied for kind {}", kind.slug()))
                })?;
                let interval = AugmentationInterval {
                    samples: config.samples,
                    ..given.clone()
                };
                interval.validate()?;
                out.push(IntervalReport {
                    interval,
                    calibrated: false,
                    warned: false,
                });
            }
        }
    }
    Ok(out)
}

/// Score a comparison curve over the span its surviving samples cover.
fn comparison_score(curve: &ResponseCurve) -> Result<CurveScore> {
    let low = curve.params[0];
    let high = *curve.params.last().unwrap();
    curve_score(curve, low, high)
}

/// Interleave the comparison curves into the probability curve's sample
/// grid, leaving holes where samples were skipped.
fn merge_curves(
    image_id: String,
    method: Method,
    kind: AugmentationKind,
    set: &CurveSet,
) -> CellCurves {
    let mut rows = Vec::with_capacity(set.probability.params.len());
    let (mut ci, mut ti) = (0usize, 0usize);
    for (i, &param) in set.probability.params.iter().enumerate() {
        let correlation = (ci < set.correlation.params.len()
            && set.correlation.params[ci] == param)
            .then(|| {
                let v = set.correlation.values[ci];
                ci += 1;
                v
            });
        let top1000 = (ti < set.top1000.params.len() && set.top1000.params[ti] == param).then(
            || {
                let v = set.top1000.values[ti];
                ti += 1;
                v
            },
        );
        rows.push(CurveRow {
            param,
            probability: set.probability.values[i],
            correlation,
            top1000,
        });
    }
    CellCurves {
        image_id,
        method,
        kind,
        rows,
    }
}

fn evaluate_cell(
    model: &ModelGraph,
    entry: &CorpusEntry,
    method: Method,
    interval: &AugmentationInterval,
    metric: &MetricConfig,
) -> std::result::Result<(EvaluationRecord, CellCurves), FailedCell> {
    let outcome = (|| -> Result<(EvaluationRecord, CellCurves)> {
        let set = build_curves(model, &entry.image, entry.class, method, interval, metric)?;
        let probability = curve_score(&set.probability, interval.low, interval.high)?;
        let correlation = comparison_score(&set.correlation)?;
        let top = comparison_score(&set.top1000)?;
        let record = EvaluationRecord {
            image_id: entry.id.clone(),
            method,
            kind: interval.kind,
            probability_score: probability.value,
            correlation_score: correlation.value,
            top1000_score: top.value,
            s_correlation: s_ratio(correlation, probability)?,
            s_top1000: s_ratio(top, probability)?,
            skipped_samples: set.skipped,
        };
        let curves = merge_curves(entry.id.clone(), method, interval.kind, &set);
        Ok((record, curves))
    })();
    outcome.map_err(|e| FailedCell {
        image_id: entry.id.clone(),
        method: Some(method),
        kind: Some(interval.kind),
        message: e.to_string(),
    })
}

fn flip_score_for(
    model: &ModelGraph,
    entry: &CorpusEntry,
    heatmap: &Tensor,
    metric: &MetricConfig,
) -> Result<f64> {
    let curve = pixel_flip_curve(model, &entry.image, heatmap, entry.class, metric)?;
    Ok(pixel_flip_score(&curve, metric)?.value)
}

/// Baseline RNG seed for one image. Index-based, so results do not
/// depend on scheduling.
fn baseline_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn random_heatmap(height: usize, width: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f32> = (0..height * width).map(|_| rng.gen::<f32>()).collect();
    Tensor::from_vec(&[height, width], data).expect("heatmap sized to its shape")
}

/// Evaluate the whole grid. Misclassified images are dropped up front;
/// failing cells are collected instead of aborting the run, and
/// `partial_failure` is set when more than a tenth of all cells failed.
pub fn run_evaluation(model: &ModelGraph, corpus: &Corpus, config: &RunConfig) -> Result<Report> {
    config.validate()?;
    model.validate()?;
    let total_images = corpus.len();
    let kept = filter_correct(model, corpus)?;
    if kept.is_empty() {
        return Err(Error::EmptyCorpus(
            "no correctly classified images to evaluate".into(),
        ));
    }
    let intervals = resolve_intervals(model, &kept, config)?;

    let mut record_cells = Vec::with_capacity(kept.len() * config.methods.len() * intervals.len());
    let mut flip_cells = Vec::with_capacity(kept.len() * config.methods.len());
    for entry in &kept.entries {
        for &method in &config.methods {
            for ir in &intervals {
                record_cells.push((entry, method, &ir.interval));
            }
            flip_cells.push((entry, method));
        }
    }
    let baseline_cells: Vec<(usize, &CorpusEntry)> = kept.entries.iter().enumerate().collect();

    let metric = &config.metric;
    let seed = config.seed;
    let (cell_results, flip_results, baseline_results) = with_workers(config.workers, || {
        let cells = par_map(record_cells, |(entry, method, interval)| {
            evaluate_cell(model, entry, method, interval, metric)
        });
        let flips = par_map(flip_cells, |(entry, method)| {
            explain(model, &entry.image, entry.class, method)
                .and_then(|expl| flip_score_for(model, entry, &expl.heatmap, metric))
                .map(|score| FlipRow {
                    image_id: entry.id.clone(),
                    method: Some(method),
                    score,
                })
                .map_err(|e| FailedCell {
                    image_id: entry.id.clone(),
                    method: Some(method),
                    kind: None,
                    message: e.to_string(),
                })
        });
        let baselines = par_map(baseline_cells, |(index, entry)| {
            let (h, w) = (entry.image.height() as usize, entry.image.width() as usize);
            let heatmap = random_heatmap(h, w, baseline_seed(seed, index));
            flip_score_for(model, entry, &heatmap, metric)
                .map(|score| FlipRow {
                    image_id: entry.id.clone(),
                    method: None,
                    score,
                })
                .map_err(|e| FailedCell {
                    image_id: entry.id.clone(),
                    method: None,
                    kind: None,
                    message: e.to_string(),
                })
        });
        (cells, flips, baselines)
    });

    let mut records = Vec::new();
    let mut curves = Vec::new();
    let mut failed = Vec::new();
    for result in cell_results {
        match result {
            Ok((record, cell)) => {
                records.push(record);
                curves.push(cell);
            }
            Err(cell) => failed.push(cell),
        }
    }
    let mut flip_rows = Vec::new();
    for result in flip_results.into_iter().chain(baseline_results) {
        match result {
            Ok(row) => flip_rows.push(row),
            Err(cell) => failed.push(cell),
        }
    }

    let total_cells = kept.len() * config.methods.len() * (config.kinds.len() + 1) + kept.len();
    let partial_failure = failed.len() * 10 > total_cells;
    if !failed.is_empty() {
        log::warn!(
            "{} of {} evaluation cells failed{}",
            failed.len(),
            total_cells,
            if partial_failure { " (over the 10% threshold)" } else { "" }
        );
    }

    let aggregates = aggregate_records(&records, &config.methods, &config.kinds);
    let flip_aggregates = aggregate_flips(&flip_rows, &config.methods);
    let skipped_samples = records.iter().map(|r| r.skipped_samples).sum();

    Ok(Report {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        total_images,
        kept_images: kept.len(),
        intervals,
        records,
        curves,
        flip_rows,
        aggregates,
        flip_aggregates,
        skipped_samples,
        failed,
        partial_failure,
    })
}
