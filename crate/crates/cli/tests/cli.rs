use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_panel-layout"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = bin(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn full_pipeline_on_a_small_synthetic_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--out", "ds", "--pages", "10"]);
    assert!(ok(d, &["validate", "ds"]).is_empty());
    ok(d, &["split", "--dataset", "ds", "--task", "title", "--out", "split.json"]);
    ok(d, &["render", "--dataset", "ds", "--mode", "frame_only", "--manifest", "split.json", "--out", "rendered"]);
    ok(
        d,
        &[
            "render",
            "--dataset",
            "ds",
            "--mode",
            "frame_only",
            "--noise-family",
            "rectangular",
            "--noise-range",
            "10",
            "--out",
            "rendered",
        ],
    );
    let index = read_json(&d.join("rendered/index.json"));
    assert_eq!(index.as_object().unwrap().len(), 240);

    let mut cfg: Value = serde_json::from_str(&ok(d, &["init-config", "--id", "t"])).unwrap();
    cfg["train"]["max_epochs"] = 2.into();
    cfg["train"]["eval_dense_until"] = 2.into();
    cfg["dataset"] = "ds".into();
    fs::write(d.join("exp.json"), cfg.to_string()).unwrap();

    let trained = ok(d, &["train", "--config", "exp.json"]);
    assert_eq!(trained.lines().filter(|l| l.starts_with("fold ")).count(), 5);
    ok(d, &["evaluate", "--config", "exp.json"]);
    let report_dir = d.join("runs/t/report");
    for f in ["metrics.json", "table.csv", "summary.csv", "table.txt", "confusion.csv", "curves.csv", "curves.png"] {
        assert!(report_dir.join(f).is_file(), "missing {f}");
    }
    let metrics = read_json(&report_dir.join("metrics.json"));
    let acc = metrics["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    // noisy runs get their own directory
    ok(d, &["train", "--config", "exp.json", "--mode", "frame_only-rectangular-10", "--fold", "0"]);
    assert!(d.join("runs/t--frame_only-rectangular-10/fold0/model.json").is_file());

    let manifest = read_json(&d.join("split.json"));
    let item = manifest["test"][0].as_str().unwrap().to_string();
    ok(d, &["explain", "--config", "exp.json", "--image-ref", &item, "--out", "cam"]);
    let stats = read_json(&d.join("cam/heatmaps.json"));
    let overlays = stats["overlays"].as_array().unwrap();
    assert_eq!(overlays.len(), 6);
    for o in overlays {
        assert!(d.join("cam").join(o["file"].as_str().unwrap()).is_file());
    }
    let cam = image::open(d.join("cam").join(overlays[0]["file"].as_str().unwrap())).unwrap();
    assert_eq!(cam.color(), image::ColorType::Rgb8);

    let table = ok(d, &["tables", "--kind", "summary", "runs/t/report/metrics.json", "--out", "summary"]);
    assert!(table.contains("Accuracy"));
    assert!(d.join("summary.csv").is_file());
}

#[test]
fn validate_reports_each_problem_and_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::create_dir_all(d.join("ds/annotations")).unwrap();
    fs::write(
        d.join("ds/annotations/broken.xml"),
        r#"<book title="broken"><pages><page index="0" width="100" height="100"><frame id="a" xmin="50" ymin="0" xmax="10" ymax="20"/></page></pages></book>"#,
    )
    .unwrap();
    let out = bin(d, &["validate", "ds"]);
    assert!(!out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 1, "{stdout}");
    assert!(stdout.contains("broken.xml"));
}

#[test]
fn bad_arguments_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert!(!bin(d, &["render", "--dataset", "x", "--mode", "sketchy", "--out", "y"]).status.success());
    assert!(!bin(d, &["render", "--dataset", "x", "--mode", "frame_only", "--noise-range", "5", "--out", "y"])
        .status
        .success());
    let out = bin(d, &["train", "--config", "missing.json"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));
}
