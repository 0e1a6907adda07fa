use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_evfeat");

/// A short scene and a small model so the whole pipeline runs in seconds.
const SMALL: &str = "\
duration_us = 700000
max_samples = 1500
max_matches = 1500
partitions = 5
n_sfa = 12
horizon_s = 0.4
";

fn evfeat(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = evfeat(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn pipeline(dir: &Path) {
    std::fs::write(dir.join("small.cfg"), SMALL).unwrap();
    let c = ["--config", "small.cfg"];
    ok(dir, &[&["synth"], &c[..], &["--seed", "4", "--noise_rate", "0.5"]].concat());
    ok(dir, &[&["filter"], &c[..]].concat());
    ok(dir, &[&["train"], &c[..]].concat());
    ok(dir, &[&["track"], &c[..]].concat());
    ok(dir, &[&["eval"], &c[..]].concat());
    ok(dir, &[&["export-weights", "--range", "0..3"], &c[..]].concat());
    ok(dir, &[&["baseline-ts"], &c[..], &["--tracks", "ts.csv"]].concat());
}

#[test]
fn pipeline_emits_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path());
    for f in [
        "events.bin",
        "truth.csv",
        "filtered.bin",
        "model/pca.basis",
        "model/pca_smoothed.basis",
        "model/matches.bin",
        "model/sfa.basis",
        "model/sfa_smoothed.basis",
        "model/sfa_reversed_smoothed.basis",
        "model/config.txt",
        "tracks.csv",
        "ts.csv",
        "curve_accuracy.csv",
        "curve_displacement.csv",
        "weights_0.csv",
        "weights_2.csv",
    ] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    assert!(!dir.path().join("weights_3.csv").exists());
}

#[test]
fn eval_of_truth_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--duration_us", "500000"]);
    ok(dir.path(), &["eval", "--tracks", "truth.csv", "--horizon_s", "0.4"]);
    let curve = std::fs::read_to_string(dir.path().join("curve_accuracy.csv")).unwrap();
    let mut lines = curve.lines();
    assert_eq!(lines.next(), Some("t,value,n_alive"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 9);
    assert!(rows.iter().all(|r| r.split(',').nth(1) == Some("1")), "{curve}");
}

#[test]
fn exit_codes_separate_failure_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let code = |args: &[&str]| evfeat(d, args).status.code().unwrap();

    assert_eq!(code(&["no-such-command"]), 2);
    assert_eq!(code(&["synth", "--no_such_key", "1"]), 2);
    assert_eq!(code(&["synth", "--width", "wide"]), 2);
    assert_eq!(code(&["synth", "--width"]), 2);
    assert_eq!(code(&["filter", "--events", "missing.bin"]), 3);

    std::fs::write(d.join("bad.csv"), "width,height\n8,8\n1,2\n").unwrap();
    assert_eq!(code(&["filter", "--events", "bad.csv"]), 4);
    let err = String::from_utf8(evfeat(d, &["filter", "--events", "bad.csv"]).stderr).unwrap();
    assert!(err.contains("bad.csv"), "{err}");

    // a basis for another box size
    std::fs::write(d.join("small.cfg"), SMALL).unwrap();
    ok(d, &["synth", "--config", "small.cfg"]);
    ok(d, &["train", "--config", "small.cfg"]);
    let out = evfeat(d, &["track", "--config", "small.cfg", "--partitions", "25"]);
    assert_eq!(out.status.code(), Some(5));
    assert!(!d.join("tracks.csv").exists());

    // more slow features than the data supports
    assert_eq!(code(&["train", "--config", "small.cfg", "--n_sfa", "250", "--out_dir", "m2"]), 6);
    assert!(!d.join("m2/sfa.basis").exists());
}

#[test]
fn config_file_and_flags_agree() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("a.cfg"), "duration_us = 300000\nseed = 9\nevents = a.csv\ntruth = ta.csv\n").unwrap();
    ok(d, &["synth", "--config", "a.cfg"]);
    ok(d, &["synth", "--duration-us", "300000", "--seed", "9", "--events=b.csv", "--truth", "tb.csv"]);
    assert_eq!(std::fs::read(d.join("a.csv")).unwrap(), std::fs::read(d.join("b.csv")).unwrap());
    assert_eq!(std::fs::read(d.join("ta.csv")).unwrap(), std::fs::read(d.join("tb.csv")).unwrap());
}
