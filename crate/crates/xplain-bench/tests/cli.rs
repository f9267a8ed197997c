//! End-to-end checks of the binary: exit codes, report files, and
//! byte-stable output across worker counts.

use std::path::Path;
use std::process::{Command, Output};

use xplain::harness::corpus::generate_synthetic_corpus;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xplain-bench"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn export_mean_color(path: &Path) {
    let out = run(&[
        "export-model",
        "--fixture",
        "mean-color",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));
}

fn write_intervals(path: &Path) {
    let json = r#"[
        {"kind": "brightness", "low": -40.0, "high": 40.0, "samples": 5},
        {"kind": "hue", "low": -20.0, "high": 20.0, "samples": 5}
    ]"#;
    std::fs::write(path, json).unwrap();
}

#[test]
fn help_and_version_exit_zero() {
    let help = run(&["--help"]);
    assert_eq!(code(&help), 0);
    assert!(text(&help.stdout).contains("xplain-bench"));
    let version = run(&["--version"]);
    assert_eq!(code(&version), 0);
}

#[test]
fn unknown_arguments_exit_one() {
    let out = run(&["run", "--bogus-flag"]);
    assert_eq!(code(&out), 1);
    let out = run(&["no-such-command"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn missing_model_file_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "run",
        "--model",
        dir.path().join("missing.xbw").to_str().unwrap(),
        "--synthetic",
        "4",
        "--out",
        dir.path().join("report").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3, "{}", text(&out.stderr));
    assert!(text(&out.stderr).contains("error:"));
}

#[test]
fn bad_method_name_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.xbw");
    export_mean_color(&model);
    let out = run(&[
        "run",
        "--model",
        model.to_str().unwrap(),
        "--synthetic",
        "4",
        "--out",
        dir.path().join("report").to_str().unwrap(),
        "--methods",
        "gradientz",
    ]);
    assert_eq!(code(&out), 1);
    assert!(text(&out.stderr).contains("gradientz"));
}

#[test]
fn export_run_and_reproduce() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.xbw");
    export_mean_color(&model);
    let intervals = dir.path().join("intervals.json");
    write_intervals(&intervals);

    let report_args = |out_dir: &str, workers: &str| {
        vec![
            "run".to_string(),
            "--model".into(),
            model.to_str().unwrap().into(),
            "--synthetic".into(),
            "6".into(),
            "--out".into(),
            out_dir.into(),
            "--methods".into(),
            "input_x_gradients".into(),
            "--kinds".into(),
            "brightness,hue".into(),
            "--intervals".into(),
            intervals.to_str().unwrap().into(),
            "--samples".into(),
            "5".into(),
            "--flip-steps".into(),
            "4".into(),
            "--workers".into(),
            workers.into(),
        ]
    };

    let out_a = dir.path().join("report_a");
    let args: Vec<String> = report_args(out_a.to_str().unwrap(), "1");
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = run(&refs);
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("report in"));

    let records = std::fs::read_to_string(out_a.join("records.csv")).unwrap();
    assert!(records.lines().count() > 1);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_a.join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["partial_failure"], false);
    assert!(summary["kept_images"].as_u64().unwrap() >= 1);
    assert_eq!(summary["config"]["samples"], 5);
    assert!(out_a.join("pixel_flip.csv").exists());
    assert!(std::fs::read_dir(out_a.join("curves")).unwrap().count() >= 1);

    // Same run with more workers produces identical bytes.
    let out_b = dir.path().join("report_b");
    let args: Vec<String> = report_args(out_b.to_str().unwrap(), "3");
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = run(&refs);
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));
    for name in ["records.csv", "pixel_flip.csv", "summary.json"] {
        assert_eq!(
            std::fs::read(out_a.join(name)).unwrap(),
            std::fs::read(out_b.join(name)).unwrap(),
            "{name} differs between worker counts"
        );
    }
}

#[test]
fn widespread_cell_failures_exit_two() {
    // Plain gradients of the mean-color model are constant maps, so every
    // comparison cell fails while the run itself completes.
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.xbw");
    export_mean_color(&model);
    let intervals = dir.path().join("intervals.json");
    write_intervals(&intervals);
    let out_dir = dir.path().join("report");
    let out = run(&[
        "run",
        "--model",
        model.to_str().unwrap(),
        "--synthetic",
        "5",
        "--out",
        out_dir.to_str().unwrap(),
        "--methods",
        "gradients",
        "--kinds",
        "brightness",
        "--intervals",
        intervals.to_str().unwrap(),
        "--samples",
        "5",
        "--flip-steps",
        "4",
    ]);
    assert_eq!(code(&out), 2, "{}", text(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["partial_failure"], true);
    assert!(!summary["failed_cells"].as_array().unwrap().is_empty());
}

#[test]
fn calibrate_emits_usable_interval_json() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.xbw");
    export_mean_color(&model);
    let out = run(&[
        "calibrate",
        "--model",
        model.to_str().unwrap(),
        "--synthetic",
        "6",
        "--kinds",
        "hue",
        "--samples",
        "5",
    ]);
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));
    let intervals: serde_json::Value = serde_json::from_str(&text(&out.stdout)).unwrap();
    let list = intervals.as_array().unwrap();
    assert_eq!(list.len(), 1);
    assert_eq!(list[0]["kind"], "hue");
    assert_eq!(list[0]["samples"], 5);
}

#[test]
fn explain_writes_one_heatmap_row_per_pixel_row() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.xbw");
    export_mean_color(&model);
    let corpus = generate_synthetic_corpus(2, 1, 16, 16).unwrap();
    let image = dir.path().join("image.png");
    corpus.entries[0].image.save(&image).unwrap();
    let heat = dir.path().join("heatmap.csv");
    let out = run(&[
        "explain",
        "--model",
        model.to_str().unwrap(),
        "--image",
        image.to_str().unwrap(),
        "--method",
        "input_x_gradients",
        "--out",
        heat.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("probability"));
    let text = std::fs::read_to_string(&heat).unwrap();
    assert_eq!(text.lines().count(), 16);
    assert!(text.lines().all(|l| l.split(',').count() == 16));
}
