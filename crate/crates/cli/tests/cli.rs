use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pegsim::harness::parse_report_json;

fn pegsim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pegsim")).current_dir(dir).args(args).output().expect("running pegsim")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&pegsim(dir.path(), &["--help"])), 0);
    assert_eq!(code(&pegsim(dir.path(), &["--version"])), 0);
    assert_eq!(code(&pegsim(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&pegsim(dir.path(), &["--suite", "nope", "eval"])), 1);
    assert_eq!(code(&pegsim(dir.path(), &["eval", "--out", "report.txt"])), 1);
    assert_eq!(code(&pegsim(dir.path(), &["eval", "--noise", "loud"])), 1);
    assert!(!dir.path().join("report.txt").exists());
}

#[test]
fn bad_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "[eval]\nepisodes_per_scene = 0\n").unwrap();
    let o = pegsim(dir.path(), &["--config", "bad.toml", "eval"]);
    assert_eq!(code(&o), 1);
    fs::write(dir.path().join("typo.toml"), "[eval]\nepisodes = 3\n").unwrap();
    assert_eq!(code(&pegsim(dir.path(), &["--config", "typo.toml", "eval"])), 1);
}

#[test]
fn config_values_are_centimeters_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("exp.toml"),
        "seed = 3\nsuite = \"round\"\n[eval]\nepisodes_per_scene = 4\noffset_xy_cm = [3, 3]\n",
    )
    .unwrap();
    let o = pegsim(dir.path(), &["--config", "exp.toml", "--episodes", "2", "eval", "--out", "r.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("r.json")).unwrap();
    let report = parse_report_json(&text, "r.json").unwrap();
    assert_eq!(report.master_seed, 3);
    assert_eq!(report.episodes.len(), 2);
    assert!(report.episodes.iter().all(|e| e.scene == "round"));
}

#[test]
fn min_success_assertion_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let args =
        ["--suite", "round", "--episodes", "20", "eval", "--executor", "direct", "--noise", "full", "--min-success"];
    assert_eq!(code(&pegsim(dir.path(), &[&args[..], &["0"]].concat())), 0);
    let strict = pegsim(dir.path(), &[&args[..], &["1"]].concat());
    assert_eq!(code(&strict), 2, "{}", String::from_utf8_lossy(&strict.stdout));
}

#[test]
fn collect_train_eval_trace_replay() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |args: &[&str]| {
        let o = pegsim(d, args);
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    };
    run(&["--suite", "clean", "--seed", "4", "collect", "--out", "data.txt", "--records", "300"]);
    run(&["train", "--data", "data.txt", "--out", "m.model"]);
    let summary = run(&[
        "--suite",
        "power",
        "--episodes",
        "2",
        "eval",
        "--model",
        "m.model",
        "--out",
        "r.csv",
        "--trace-dir",
        "traces",
    ]);
    assert!(summary.contains("power"));
    assert!(fs::read_to_string(d.join("r.csv")).unwrap().starts_with("# predictor: knn"));

    let table = run(&["replay", "traces/power-000.trace"]);
    assert!(table.lines().count() > 2);

    // A trace that inserts cannot reproduce against a different hole.
    run(&["--suite", "power", "--episodes", "1", "eval", "--noise", "exact", "--trace-dir", "exact"]);
    assert_eq!(code(&pegsim(d, &["replay", "exact/power-000.trace"])), 0);
    let o = pegsim(d, &["replay", "exact/power-000.trace", "--world", "round"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stdout).contains("DIVERGENCE"));

    run(&["--suite", "clean", "adapt", "--model", "m.model", "--scene", "usb", "--samples", "20", "--out", "a.model"]);
    assert!(d.join("a.model").exists());
    let table = run(&[
        "--suite",
        "power",
        "--episodes",
        "1",
        "ablate",
        "--data",
        "data.txt",
        "--fractions",
        "1,0.5",
        "--out",
        "ab.csv",
    ]);
    assert_eq!(table.lines().count(), 3);
    assert_eq!(fs::read_to_string(d.join("ab.csv")).unwrap(), table);
}

#[test]
fn perturb_eval_applies_the_default_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let o = pegsim(dir.path(), &["--suite", "round", "--episodes", "3", "perturb-eval", "--noise", "exact"]);
    assert_eq!(code(&o), 0);
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.contains("perturbations applied 3, skipped 0"), "{out}");
}

#[test]
fn reruns_write_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.json", "b.json"] {
        let o = pegsim(
            dir.path(),
            &["--suite", "usb", "--episodes", "3", "--seed", "9", "eval", "--noise", "full", "--out", name],
        );
        assert_eq!(code(&o), 0);
    }
    assert_eq!(fs::read(dir.path().join("a.json")).unwrap(), fs::read(dir.path().join("b.json")).unwrap());
}
