//! The `lanequest` binary driven end to end through its subcommands.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn lanequest(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lanequest"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = lanequest(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn with_ext(dir: &Path, ext: &str) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.to_string_lossy().ends_with(ext))
        .map(|p| p.to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

/// simulate → detect → learn → estimate → evaluate → sweep in `dir`;
/// returns every produced file with its bytes.
fn full_flow(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    ok(dir, &["--seed", "3", "simulate", "--preset", "potholes", "--trips", "30"]);
    let map = dir.join("map.txt").to_string_lossy().into_owned();
    let traces: Vec<String> = with_ext(dir, ".trace").into_iter().filter(|p| !p.ends_with(".car.trace")).collect();
    assert_eq!(traces.len(), 30);
    let mut args = vec!["detect", "--map", map.as_str()];
    args.extend(traces.iter().map(String::as_str));
    ok(dir, &args);
    let events = with_ext(dir, ".events");
    assert_eq!(events.len(), 30);
    let truth = with_ext(dir, ".truth");

    let mut args = vec!["learn"];
    args.extend(events.iter().map(String::as_str));
    ok(dir, &args);
    let anchors = dir.join("anchors.txt").to_string_lossy().into_owned();
    assert!(fs::read_to_string(&anchors).unwrap().lines().count() > 1);

    let mut args = vec!["estimate", "--anchors", anchors.as_str()];
    args.extend(events.iter().take(3).map(String::as_str));
    ok(dir, &args);
    assert_eq!(with_ext(dir, ".lanes").len(), 3);

    let mut args = vec!["evaluate", "--anchors", anchors.as_str(), "--events"];
    args.extend(events.iter().map(String::as_str));
    args.push("--truth");
    args.extend(truth.iter().map(String::as_str));
    ok(dir, &args);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["trips"], 30);
    assert!(report["overall"]["exact_lane_accuracy"].as_f64().unwrap() > 0.5);

    args[0] = "sweep";
    args.extend(["--rates", "10,60"]);
    ok(dir, &args);
    assert_eq!(fs::read_to_string(dir.join("sweep.csv")).unwrap().lines().count(), 3);

    let mut files: Vec<(PathBuf, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (PathBuf::from(p.file_name().unwrap()), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn pipeline_runs_and_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = full_flow(a.path());
    let second = full_flow(b.path());
    assert_eq!(first.len(), second.len());
    for ((na, da), (nb, db)) in first.iter().zip(&second) {
        assert_eq!(na, nb);
        assert!(da == db, "{} differs between runs", na.display());
    }
}

#[test]
fn anchors_import_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["--seed", "1", "simulate", "--preset", "potholes", "--trips", "30"]);
    let traces: Vec<String> = with_ext(d, ".trace");
    let map = d.join("map.txt").to_string_lossy().into_owned();
    let mut args = vec!["detect", "--map", map.as_str()];
    args.extend(traces.iter().map(String::as_str));
    ok(d, &args);
    let mut args = vec!["learn"];
    let events = with_ext(d, ".events");
    args.extend(events.iter().map(String::as_str));
    ok(d, &args);
    let learned = d.join("learned.txt");
    fs::rename(d.join("anchors.txt"), &learned).unwrap();
    let learned = learned.to_string_lossy().into_owned();
    ok(d, &["anchors", "import", learned.as_str()]);
    assert_eq!(fs::read(d.join("anchors.txt")).unwrap(), fs::read(&learned).unwrap());
    ok(d, &["anchors", "export", learned.as_str()]);
    let csv = fs::read_to_string(d.join("anchors.csv")).unwrap();
    let store = lanequest::repo::AnchorStore::load(&learned).unwrap();
    assert!(!store.is_empty());
    assert_eq!(csv.lines().count(), store.len() + 1);
}

#[test]
fn errors_exit_nonzero_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.events");
    let o = lanequest(dir.path(), &["estimate", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.starts_with("lanequest: "), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);

    let o = lanequest(dir.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(String::from_utf8(o.stderr).unwrap().trim_end().lines().count(), 1);
}
