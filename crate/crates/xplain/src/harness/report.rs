//! Report rows, aggregation, and the on-disk report layout.
//!
//! A run produces four kinds of files under one output directory:
//! `records.csv` with one row per (image, method, augmentation) cell,
//! `pixel_flip.csv` with one faithfulness row per (image, method) plus a
//! random baseline row per image, `curves/<image>_<method>_<kind>.csv`
//! with the raw response curves, and `summary.json` with aggregates and
//! run metadata. All emission is deterministic: the same report always
//! serializes to the same bytes.

use std::path::Path;

use serde::Serialize;

use crate::attribution::Method;
use crate::augment::{AugmentationInterval, AugmentationKind};
use crate::error::{Error, Result};
use crate::harness::RunConfig;
use crate::metrics::EvaluationRecord;

/// Method column value for the random-ordering baseline rows.
pub const BASELINE_LABEL: &str = "random_baseline";

/// Faithfulness of one heatmap: the area clawed back from the probability
/// ratio curve while flipping the highest-ranked pixels to black.
#[derive(Debug, Clone, Serialize)]
pub struct FlipRow {
    pub image_id: String,
    /// `None` marks the per-image random baseline.
    pub method: Option<Method>,
    pub score: f64,
}

/// A cell whose evaluation errored. The run keeps going; these rows end
/// up in the summary instead of aborting everything.
#[derive(Debug, Clone, Serialize)]
pub struct FailedCell {
    pub image_id: String,
    pub method: Option<Method>,
    pub kind: Option<AugmentationKind>,
    pub message: String,
}

/// One sampled parameter of a cell's response curves. Comparison values
/// are missing where the explanation correlation was undefined.
#[derive(Debug, Clone)]
pub struct CurveRow {
    pub param: f64,
    pub probability: f64,
    pub correlation: Option<f64>,
    pub top1000: Option<f64>,
}

/// The raw curves behind one records.csv row.
#[derive(Debug, Clone)]
pub struct CellCurves {
    pub image_id: String,
    pub method: Method,
    pub kind: AugmentationKind,
    pub rows: Vec<CurveRow>,
}

/// Per (method, kind) mean scores over all evaluated images. The standard
/// errors are `None` when only one image contributed.
#[derive(Debug, Clone, Serialize)]
pub struct AggregateRow {
    pub method: Method,
    pub kind: AugmentationKind,
    pub n: usize,
    pub s_correlation_mean: f64,
    pub s_correlation_sem: Option<f64>,
    pub s_top1000_mean: f64,
    pub s_top1000_sem: Option<f64>,
    pub probability_score_mean: f64,
    pub correlation_score_mean: f64,
    pub top1000_score_mean: f64,
}

/// Mean pixel-flip score per method, with the baseline under `None`.
#[derive(Debug, Clone, Serialize)]
pub struct FlipAggregate {
    pub method: Option<Method>,
    pub n: usize,
    pub mean: f64,
    pub sem: Option<f64>,
}

/// The interval one augmentation kind was evaluated over and where it
/// came from. `warned` is set when calibration fell back to the widest
/// candidate because no magnitude reached the configured drop.
#[derive(Debug, Clone, Serialize)]
pub struct IntervalReport {
    pub interval: AugmentationInterval,
    pub calibrated: bool,
    pub warned: bool,
}

/// Everything one evaluation run produced.
#[derive(Debug, Clone)]
pub struct Report {
    pub version: String,
    pub config: RunConfig,
    pub total_images: usize,
    pub kept_images: usize,
    pub intervals: Vec<IntervalReport>,
    pub records: Vec<EvaluationRecord>,
    pub curves: Vec<CellCurves>,
    pub flip_rows: Vec<FlipRow>,
    pub aggregates: Vec<AggregateRow>,
    pub flip_aggregates: Vec<FlipAggregate>,
    pub skipped_samples: usize,
    pub failed: Vec<FailedCell>,
    pub partial_failure: bool,
}

/// Mean and standard error of the mean; the SEM needs at least two values.
pub fn mean_and_sem(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, Some((var / n as f64).sqrt()))
}

/// Group records by (method, kind), in the given order, and average each
/// group. Groups with no surviving records are dropped.
pub fn aggregate_records(
    records: &[EvaluationRecord],
    methods: &[Method],
    kinds: &[AugmentationKind],
) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    for &method in methods {
        for &kind in kinds {
            let group: Vec<&EvaluationRecord> = records
                .iter()
                .filter(|r| r.method == method && r.kind == kind)
                .collect();
            if group.is_empty() {
                continue;
            }
            let column = |f: fn(&EvaluationRecord) -> f64| -> Vec<f64> {
                group.iter().map(|r| f(r)).collect()
            };
            let (s_corr_mean, s_corr_sem) = mean_and_sem(&column(|r| r.s_correlation));
            let (s_top_mean, s_top_sem) = mean_and_sem(&column(|r| r.s_top1000));
            let (prob_mean, _) = mean_and_sem(&column(|r| r.probability_score));
            let (corr_mean, _) = mean_and_sem(&column(|r| r.correlation_score));
            let (top_mean, _) = mean_and_sem(&column(|r| r.top1000_score));
            rows.push(AggregateRow {
                method,
                kind,
                n: group.len(),
                s_correlation_mean: s_corr_mean,
                s_correlation_sem: s_corr_sem,
                s_top1000_mean: s_top_mean,
                s_top1000_sem: s_top_sem,
                probability_score_mean: prob_mean,
                correlation_score_mean: corr_mean,
                top1000_score_mean: top_mean,
            });
        }
    }
    rows
}

/// Average flip scores per method, then the baseline rows as a final
/// `method: None` group.
pub fn aggregate_flips(rows: &[FlipRow], methods: &[Method]) -> Vec<FlipAggregate> {
    let mut out = Vec::new();
    let mut push = |method: Option<Method>| {
        let scores: Vec<f64> = rows
            .iter()
            .filter(|r| r.method == method)
            .map(|r| r.score)
            .collect();
        if scores.is_empty() {
            return;
        }
        let (mean, sem) = mean_and_sem(&scores);
        out.push(FlipAggregate {
            method,
            n: scores.len(),
            mean,
            sem,
        });
    };
    for &method in methods {
        push(Some(method));
    }
    push(None);
    out
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

fn finish(wtr: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    wtr.into_inner()
        .map_err(|e| Error::Config(format!("csv buffer: {e}")))
}

/// records.csv: one row per evaluated (image, method, augmentation) cell.
pub fn records_csv(records: &[EvaluationRecord]) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record([
        "image_id",
        "method",
        "kind",
        "probability_score",
        "correlation_score",
        "top1000_score",
        "s_correlation",
        "s_top1000",
        "skipped_samples",
    ])?;
    for r in records {
        wtr.write_record([
            r.image_id.as_str(),
            r.method.slug(),
            r.kind.slug(),
            &fmt(r.probability_score),
            &fmt(r.correlation_score),
            &fmt(r.top1000_score),
            &fmt(r.s_correlation),
            &fmt(r.s_top1000),
            &r.skipped_samples.to_string(),
        ])?;
    }
    finish(wtr)
}

/// pixel_flip.csv: one faithfulness row per (image, method) and per
/// random baseline.
pub fn flips_csv(rows: &[FlipRow]) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["image_id", "method", "score"])?;
    for r in rows {
        let method = r.method.map(Method::slug).unwrap_or(BASELINE_LABEL);
        wtr.write_record([r.image_id.as_str(), method, &fmt(r.score)])?;
    }
    finish(wtr)
}

/// One curve file: param, probability and the two comparison columns,
/// with empty cells where a comparison sample was skipped.
pub fn curve_csv(cell: &CellCurves) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["param", "probability", "correlation", "top1000"])?;
    for row in &cell.rows {
        wtr.write_record([
            fmt(row.param),
            fmt(row.probability),
            fmt_opt(row.correlation),
            fmt_opt(row.top1000),
        ])?;
    }
    finish(wtr)
}

#[derive(Serialize)]
struct SummaryDoc<'a> {
    version: &'a str,
    config: &'a RunConfig,
    total_images: usize,
    kept_images: usize,
    record_rows: usize,
    flip_rows: usize,
    skipped_samples: usize,
    partial_failure: bool,
    intervals: &'a [IntervalReport],
    aggregates: &'a [AggregateRow],
    flip_aggregates: &'a [FlipAggregate],
    failed_cells: &'a [FailedCell],
}

/// summary.json: aggregates and run metadata, without the raw rows.
pub fn summary_json(report: &Report) -> Result<String> {
    let doc = SummaryDoc {
        version: &report.version,
        config: &report.config,
        total_images: report.total_images,
        kept_images: report.kept_images,
        record_rows: report.records.len(),
        flip_rows: report.flip_rows.len(),
        skipped_samples: report.skipped_samples,
        partial_failure: report.partial_failure,
        intervals: &report.intervals,
        aggregates: &report.aggregates,
        flip_aggregates: &report.flip_aggregates,
        failed_cells: &report.failed,
    };
    let mut text = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::Config(format!("summary serialization: {e}")))?;
    text.push('\n');
    Ok(text)
}

/// Write the whole report under `dir`, creating it if needed.
pub fn emit_report(report: &Report, dir: &Path) -> Result<()> {
    let curves_dir = dir.join("curves");
    std::fs::create_dir_all(&curves_dir)?;
    std::fs::write(dir.join("records.csv"), records_csv(&report.records)?)?;
    std::fs::write(dir.join("pixel_flip.csv"), flips_csv(&report.flip_rows)?)?;
    std::fs::write(dir.join("summary.json"), summary_json(report)?)?;
    for cell in &report.curves {
        let name = format!(
            "{}_{}_{}.csv",
            cell.image_id,
            cell.method.slug(),
            cell.kind.slug()
        );
        std::fs::write(curves_dir.join(name), curve_csv(cell)?)?;
    }
    Ok(())
}
