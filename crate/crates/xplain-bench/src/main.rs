//! Command line driver for the evaluation engine.
//!
//! Exit codes: 0 on success, 1 for configuration problems, 2 when a run
//! finished but more than a tenth of its cells failed, 3 for I/O errors.
//! Logging goes to stderr, controlled by the XPLAIN_LOG variable.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use xplain::attribution::{explain, Method};
use xplain::augment::{AugmentationInterval, AugmentationKind};
use xplain::error::Error;
use xplain::harness::corpus::{filter_correct, generate_synthetic_corpus, load_corpus, Corpus};
use xplain::harness::fixtures::{
    conv_only_fixture, mean_color_fixture, random_fixture, train_fixture,
};
use xplain::harness::{emit_report, run_evaluation, IntervalChoice, RunConfig};
use xplain::metrics::{calibrate_interval, MetricConfig, DEFAULT_INTERVAL_SAMPLES};
use xplain::nn::weights::{load_model, save_model};
use xplain::nn::{predict, target_probability, ModelGraph};

#[derive(Parser)]
#[command(name = "xplain-bench", version, about = "Evaluate how robust visual explanations stay under image augmentations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full evaluation grid and write a report directory
    Run(RunArgs),
    /// Calibrate augmentation intervals and print them as JSON
    Calibrate(CalibrateArgs),
    /// Write one of the built-in models to a weights file
    ExportModel(ExportArgs),
    /// Explain a single image and write the heatmap as CSV
    Explain(ExplainArgs),
}

/// Where the evaluation images come from.
#[derive(Args)]
struct CorpusSource {
    /// Directory holding labels.csv and one PNG per image
    #[arg(long, value_name = "DIR", conflicts_with = "synthetic")]
    corpus: Option<PathBuf>,
    /// Generate a synthetic shape corpus with this many images instead
    #[arg(long, value_name = "N")]
    synthetic: Option<usize>,
    /// Seed for the synthetic corpus
    #[arg(long, default_value_t = 17)]
    corpus_seed: u64,
}

impl CorpusSource {
    fn load(&self, height: usize, width: usize) -> xplain::Result<Corpus> {
        let (h, w) = (height as u32, width as u32);
        match (&self.corpus, self.synthetic) {
            (Some(dir), None) => load_corpus(dir, h, w),
            (None, Some(n)) => generate_synthetic_corpus(self.corpus_seed, n, h, w),
            _ => Err(Error::Config(
                "pass exactly one of --corpus or --synthetic".into(),
            )),
        }
    }
}

/// Metric knobs shared by run and calibrate.
#[derive(Args)]
struct MetricArgs {
    /// Top-k size for explanation intersections
    #[arg(long, default_value_t = 1000)]
    top_k: usize,
    /// Fraction of pixels flipped over the faithfulness window
    #[arg(long, default_value_t = 0.2)]
    flip_fraction: f64,
    /// Flip fractions sampled inside the window
    #[arg(long, default_value_t = 20)]
    flip_steps: usize,
    /// Mean relative probability drop a calibrated endpoint must reach
    #[arg(long, default_value_t = 0.10)]
    calibration_drop: f64,
}

impl MetricArgs {
    fn to_config(&self) -> MetricConfig {
        MetricConfig {
            k: self.top_k,
            pixel_flip_fraction: self.flip_fraction,
            pixel_flip_steps: self.flip_steps,
            calibration_drop: self.calibration_drop,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Model weights file
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    #[command(flatten)]
    source: CorpusSource,
    /// Report output directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Comma-separated methods (default: all eight)
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    /// Comma-separated augmentation kinds (default: all six)
    #[arg(long, value_delimiter = ',')]
    kinds: Vec<String>,
    /// "calibrate" or a JSON file with one interval per kind
    #[arg(long, default_value = "calibrate")]
    intervals: String,
    /// Samples per response curve (odd, at least 3)
    #[arg(long, default_value_t = DEFAULT_INTERVAL_SAMPLES)]
    samples: usize,
    /// Seed for the random flip baselines
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = all cores)
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[command(flatten)]
    metric: MetricArgs,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Model weights file
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    #[command(flatten)]
    source: CorpusSource,
    /// Comma-separated augmentation kinds (default: all six)
    #[arg(long, value_delimiter = ',')]
    kinds: Vec<String>,
    /// Sample count written into the calibrated intervals
    #[arg(long, default_value_t = DEFAULT_INTERVAL_SAMPLES)]
    samples: usize,
    /// Write the JSON here instead of stdout
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[command(flatten)]
    metric: MetricArgs,
}

#[derive(Args)]
struct ExportArgs {
    /// Which model to build
    #[arg(long, value_parser = ["random", "conv-only", "mean-color", "trained"])]
    fixture: String,
    /// Weight initialization / training seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Input height for mean-color and trained models
    #[arg(long, default_value_t = 16)]
    height: usize,
    /// Input width for mean-color and trained models
    #[arg(long, default_value_t = 16)]
    width: usize,
    /// Training epochs for the trained model
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[command(flatten)]
    source: CorpusSource,
    /// Weights file to write
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct ExplainArgs {
    /// Model weights file
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// PNG image matching the model input size
    #[arg(long, value_name = "FILE")]
    image: PathBuf,
    /// Target class (default: the predicted class)
    #[arg(long)]
    class: Option<usize>,
    /// Attribution method
    #[arg(long, default_value = "gradients")]
    method: String,
    /// CSV file for the heatmap
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

fn parse_methods(names: &[String]) -> xplain::Result<Vec<Method>> {
    if names.is_empty() {
        return Ok(Method::all().to_vec());
    }
    names.iter().map(|n| Method::parse(n)).collect()
}

fn parse_kinds(names: &[String]) -> xplain::Result<Vec<AugmentationKind>> {
    if names.is_empty() {
        return Ok(AugmentationKind::all().to_vec());
    }
    names.iter().map(|n| AugmentationKind::parse(n)).collect()
}

fn parse_intervals(arg: &str) -> xplain::Result<IntervalChoice> {
    if arg.eq_ignore_ascii_case("calibrate") {
        return Ok(IntervalChoice::Calibrate);
    }
    let text = std::fs::read_to_string(Path::new(arg))?;
    let intervals: Vec<AugmentationInterval> = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("interval file {arg}: {e}")))?;
    Ok(IntervalChoice::Explicit(intervals))
}

fn cmd_run(args: RunArgs) -> xplain::Result<i32> {
    let model = load_model(&args.model)?;
    let corpus = args.source.load(model.input.height, model.input.width)?;
    let config = RunConfig {
        methods: parse_methods(&args.methods)?,
        kinds: parse_kinds(&args.kinds)?,
        intervals: parse_intervals(&args.intervals)?,
        metric: args.metric.to_config(),
        samples: args.samples,
        seed: args.seed,
        workers: args.workers,
    };
    let report = run_evaluation(&model, &corpus, &config)?;
    emit_report(&report, &args.out)?;
    println!(
        "evaluated {} of {} images, {} record rows, {} failed cells; report in {}",
        report.kept_images,
        report.total_images,
        report.records.len(),
        report.failed.len(),
        args.out.display()
    );
    Ok(if report.partial_failure { 2 } else { 0 })
}

fn cmd_calibrate(args: CalibrateArgs) -> xplain::Result<i32> {
    let model = load_model(&args.model)?;
    let corpus = args.source.load(model.input.height, model.input.width)?;
    let kept = filter_correct(&model, &corpus)?;
    if kept.is_empty() {
        return Err(Error::EmptyCorpus(
            "no correctly classified images to calibrate on".into(),
        ));
    }
    let pairs = kept.pairs();
    let metric = args.metric.to_config();
    let mut intervals = Vec::new();
    for kind in parse_kinds(&args.kinds)? {
        let outcome = calibrate_interval(&model, &pairs, kind, &metric)?;
        if outcome.warned {
            log::warn!(
                "{}: no magnitude reached the drop target, using the widest candidate",
                kind.slug()
            );
        }
        intervals.push(AugmentationInterval {
            samples: args.samples,
            ..outcome.interval
        });
    }
    let mut text = serde_json::to_string_pretty(&intervals)
        .map_err(|e| Error::Config(format!("interval serialization: {e}")))?;
    text.push('\n');
    match &args.out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(0)
}

fn cmd_export(args: ExportArgs) -> xplain::Result<i32> {
    let model: ModelGraph = match args.fixture.as_str() {
        "random" => random_fixture(args.seed),
        "conv-only" => conv_only_fixture(args.seed),
        "mean-color" => mean_color_fixture(args.height, args.width),
        "trained" => {
            let corpus = args.source.load(args.height, args.width)?;
            let (model, accuracy) = train_fixture(&corpus, args.seed, args.epochs)?;
            println!("trained on {} images, accuracy {accuracy:.3}", corpus.len());
            model
        }
        other => return Err(Error::Config(format!("unknown fixture {other}"))),
    };
    save_model(&model, &args.out)?;
    println!(
        "wrote {} ({}x{}x{} input, {} layers, {} classes)",
        args.out.display(),
        model.input.channels,
        model.input.height,
        model.input.width,
        model.layers.len(),
        model.num_classes
    );
    Ok(0)
}

fn cmd_explain(args: ExplainArgs) -> xplain::Result<i32> {
    let model = load_model(&args.model)?;
    let img = image::open(&args.image)?.to_rgb8();
    let class = match args.class {
        Some(c) => c,
        None => predict(&model, &img)?,
    };
    let method = Method::parse(&args.method)?;
    let explanation = explain(&model, &img, class, method)?;
    let probability = target_probability(&model, &img, class)?;

    let heatmap = &explanation.heatmap;
    let (h, w) = (heatmap.shape()[0], heatmap.shape()[1]);
    let mut text = String::new();
    for y in 0..h {
        let row: Vec<String> = (0..w)
            .map(|x| format!("{}", heatmap.data()[y * w + x]))
            .collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    std::fs::write(&args.out, text)?;
    println!(
        "class {class} probability {probability:.6}; {} heatmap in {}",
        method.slug(),
        args.out.display()
    );
    Ok(0)
}

/// I/O problems get exit 3, everything else is a usage problem.
fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) | Error::Image(_) => 3,
        _ => 1,
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("XPLAIN_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not errors.
            let code = i32::from(e.use_stderr());
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::ExportModel(args) => cmd_export(args),
        Command::Explain(args) => cmd_explain(args),
    };
    match outcome {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}
