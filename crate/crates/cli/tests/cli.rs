use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hvfcast(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hvfcast"))
        .args(args)
        .current_dir(cwd)
        .env_remove("HVFCAST_SEED")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert_eq!(o.status.code(), Some(0), "stderr: {}", stderr(&o));
    o
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::create_dir(d.join("a")).unwrap();
    fs::create_dir(d.join("b")).unwrap();
    ok(hvfcast(&["simulate", "--patients", "50", "--seed", "7", "--out", "a/d.jsonl"], d));
    ok(hvfcast(&["simulate", "--patients", "50", "--seed", "7", "--out", "b/d.jsonl"], d));
    for name in ["d.jsonl", "cohort_meta.json"] {
        let a = fs::read(d.join("a").join(name)).unwrap();
        let b = fs::read(d.join("b").join(name)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{name} differs");
    }
    assert!(d.join("a/d.run_manifest.json").exists());
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(hvfcast(&["simulate", "--patients", "12", "--seed", "7", "--out", "flag.jsonl", "--meta", "m1.json"], d));
    let o = Command::new(env!("CARGO_BIN_EXE_hvfcast"))
        .args(["simulate", "--patients", "12", "--out", "env.jsonl", "--meta", "m2.json"])
        .current_dir(d)
        .env("HVFCAST_SEED", "7")
        .output()
        .unwrap();
    ok(o);
    assert_eq!(fs::read(d.join("flag.jsonl")).unwrap(), fs::read(d.join("env.jsonl")).unwrap());
    ok(hvfcast(&["simulate", "--patients", "12", "--seed", "8", "--out", "other.jsonl", "--meta", "m3.json"], d));
    assert_ne!(fs::read(d.join("flag.jsonl")).unwrap(), fs::read(d.join("other.jsonl")).unwrap());
}

#[test]
fn interval_outside_bins_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    for bad in ["6.0", "0.5", "-1", "5.6"] {
        let o = hvfcast(&["predict", "--interval", bad], dir.path());
        assert_eq!(o.status.code(), Some(1), "{bad}");
        assert!(stderr(&o).contains("interval outside [1.0, 5.5]"), "{}", stderr(&o));
    }
}

#[test]
fn unknown_flag_prints_usage() {
    let dir = tempfile::tempdir().unwrap();
    let o = hvfcast(&["simulate", "--frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    let o = hvfcast(&[], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn help_documents_formats() {
    let dir = tempfile::tempdir().unwrap();
    let o = ok(hvfcast(&["simulate", "--help"], dir.path()));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("test_index"));
    let o = ok(hvfcast(&["train", "--help"], dir.path()));
    assert!(String::from_utf8_lossy(&o.stdout).contains("weights.bin"));
}

#[test]
fn evaluate_with_empty_test_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(hvfcast(&["simulate", "--patients", "20", "--seed", "1", "--out", "d.jsonl"], d));
    fs::write(d.join("empty.jsonl"), "").unwrap();
    let o = hvfcast(&["evaluate", "--dataset", "d.jsonl", "--pairs", "empty.jsonl", "--out", "eval"], d);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn malformed_dataset_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("bad.jsonl"), "{\"patient_id\": 3}\n").unwrap();
    let o = hvfcast(&["pairs", "--dataset", "bad.jsonl", "--out", "p.jsonl"], d);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.jsonl:1"), "{}", stderr(&o));
}

#[test]
fn later_phases_need_an_earlier_winner() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(hvfcast(&["simulate", "--patients", "30", "--seed", "2", "--out", "d.jsonl"], d));
    ok(hvfcast(&["pairs", "--dataset", "d.jsonl", "--out", "p.jsonl"], d));
    ok(hvfcast(&["split", "--dataset", "d.jsonl", "--seed", "2", "--out", "s.json"], d));
    let o = hvfcast(
        &["train", "--phase", "features", "--dataset", "d.jsonl", "--pairs", "p.jsonl", "--split", "s.json"],
        d,
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("arch phase"), "{}", stderr(&o));
}

#[test]
fn small_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(hvfcast(&["simulate", "--patients", "40", "--seed", "3", "--out", "d.jsonl"], d));
    ok(hvfcast(&["pairs", "--dataset", "d.jsonl", "--out", "p.jsonl"], d));
    ok(hvfcast(&["split", "--dataset", "d.jsonl", "--seed", "3", "--out", "s.json"], d));
    let dataset_before = fs::read(d.join("d.jsonl")).unwrap();
    ok(hvfcast(
        &[
            "train", "--phase", "intervals", "--dataset", "d.jsonl", "--pairs", "p.jsonl", "--split", "s.json",
            "--arch", "FullBN-5", "--combo", "age+eye", "--epochs", "1", "--widths", "2,2,2", "--seed", "3",
        ],
        d,
    ));
    assert_eq!(fs::read(d.join("d.jsonl")).unwrap(), dataset_before);
    assert!(d.join("runs/intervals/result.json").exists());
    assert!(d.join("runs/intervals/run_manifest.json").exists());
    assert!(d.join("runs/intervals/bin-1.0/fold-0/weights.bin").exists());

    ok(hvfcast(
        &["evaluate", "--dataset", "d.jsonl", "--pairs", "p.jsonl", "--split", "s.json", "--out", "eval", "--bootstrap-resamples", "50"],
        d,
    ));
    for name in ["report.json", "md_scatter.csv", "bland_altman.csv", "per_bin_mae.csv", "run_manifest.json"] {
        assert!(d.join("eval").join(name).exists(), "{name}");
    }
    let report: serde_json::Value = serde_json::from_slice(&fs::read(d.join("eval/report.json")).unwrap()).unwrap();
    assert!(report["rmse"]["value"].as_f64().unwrap() >= report["mae"]["value"].as_f64().unwrap());

    ok(hvfcast(&["report", "--report", "eval/report.json", "--out", "csv"], d));
    for name in ["md_scatter.csv", "bland_altman.csv", "per_bin_mae.csv"] {
        let again = fs::read_to_string(d.join("csv").join(name)).unwrap();
        assert_eq!(again, fs::read_to_string(d.join("eval").join(name)).unwrap(), "{name}");
    }

    let first = fs::read_to_string(d.join("d.jsonl")).unwrap().lines().next().unwrap().to_string();
    fs::write(d.join("field.json"), first).unwrap();
    ok(hvfcast(&["predict", "--field", "field.json", "--interval", "2.5", "--out", "f.json"], d));
    let f: serde_json::Value = serde_json::from_slice(&fs::read(d.join("f.json")).unwrap()).unwrap();
    assert_eq!(f["values"].as_array().unwrap().len(), 54);
    assert_eq!(f["bin"].as_f64(), Some(2.5));
    assert_eq!(f["combo"].as_str(), Some("age+eye"));
    assert!(f["values"].as_array().unwrap().iter().all(|v| (0.0..=50.0).contains(&v.as_f64().unwrap())));
    assert!(d.join("f.run_manifest.json").exists());
}
