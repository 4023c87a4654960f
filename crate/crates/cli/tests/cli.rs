use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ticnn(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ticnn"))
        .args(args)
        .current_dir(dir)
        .env("TICNN_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL: &[&str] = &[
    "train", "--synthetic", "40", "--seq-len", "24", "--embed-dim", "6", "--hidden-dim", "6", "--vocab-size", "300", "--epochs", "2", "--seed", "7",
];

fn train_small(dir: &Path, out: &str) -> Output {
    let mut args = SMALL.to_vec();
    args.extend(["--out", out]);
    ticnn(&args, dir)
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&train_small(dir.path(), "a.ticn")), 0);
    assert_eq!(code(&train_small(dir.path(), "b.ticn")), 0);
    let a = fs::read(dir.path().join("a.ticn")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b.ticn")).unwrap());
    assert_eq!(&a[..4], b"TICN");
    let log = fs::read_to_string(dir.path().join("a.ticn.log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    assert!(dir.path().join("a.ticn.metrics.json").is_file());
}

#[test]
fn predict_eval_with_missing_image() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&train_small(dir.path(), "m.ticn")), 0);
    let o = ticnn(&["predict", "--checkpoint", "m.ticn", "--title", "hello", "--text", "Some text here.", "--image", "absent.png"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.starts_with("label "));
    let p: Vec<f64> = out.lines().skip(1).map(|l| l.split_whitespace().nth(1).unwrap().parse().unwrap()).collect();
    assert!((p[0] + p[1] - 1.0).abs() < 1e-5);

    let again = ticnn(&["predict", "--checkpoint", "m.ticn", "--title", "hello", "--text", "Some text here.", "--image", "absent.png"], dir.path());
    assert_eq!(stdout(&again), out);

    let o = ticnn(&["eval", "--checkpoint", "m.ticn", "--synthetic", "40", "--seed", "7"], dir.path());
    assert_eq!(code(&o), 0);
    let printed: serde_json::Value = serde_json::from_str(stdout(&o).lines().last().unwrap()).unwrap();
    let recorded: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("m.ticn.metrics.json")).unwrap()).unwrap();
    assert_eq!(printed, recorded);
}

#[test]
fn extract_writes_one_row_per_record() {
    let dir = tempfile::tempdir().unwrap();
    let o = ticnn(&["extract", "--synthetic", "12", "--out", "f.jsonl"], dir.path());
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(dir.path().join("f.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 12);
    let row: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(row["label"], "fake");
    assert_eq!(row.as_object().unwrap().len(), 3 + 31 + 4);
}

#[test]
fn repeated_runs_report_mean_and_best() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = SMALL.to_vec();
    args.extend(["--out", "r.ticn", "--runs", "2"]);
    let o = ticnn(&args, dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("over 2 runs: mean precision"));
    assert!(dir.path().join("r.ticn.run0").is_file() && dir.path().join("r.ticn.run1").is_file());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&ticnn(&["frobnicate"], d)), 1);
    assert_eq!(code(&ticnn(&["train", "--synthetic", "40", "--out", "x", "--batch-size", "1"], d)), 1);
    assert_eq!(code(&ticnn(&["train", "--synthetic", "40", "--out", "x", "--embed-dim", "9..3"], d)), 1);
    assert_eq!(code(&ticnn(&["train", "--dataset", "missing.csv", "--out", "x"], d)), 2);
    assert_eq!(code(&ticnn(&["eval", "--checkpoint", "missing.ticn", "--synthetic", "20"], d)), 2);
    fs::write(d.join("junk.ticn"), b"not a checkpoint").unwrap();
    assert_eq!(code(&ticnn(&["predict", "--checkpoint", "junk.ticn", "--text", "x"], d)), 2);
    assert_eq!(code(&ticnn(&["train", "--synthetic", "40", "--out", "x", "--learning-rate", "1e30", "--seq-len", "24", "--embed-dim", "6"], d)), 3);
}

#[test]
fn gradcheck_passes_and_corruption_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = ticnn(&["gradcheck", "--layer", "conv2d"], dir.path());
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("PASS"));
    let o = ticnn(&["gradcheck", "--layer", "conv2d", "--corrupt"], dir.path());
    assert_eq!(code(&o), 3);
    assert!(stdout(&o).contains("FAIL"));
    assert_eq!(code(&ticnn(&["gradcheck", "--layer", "lstm"], dir.path())), 1);
}

#[test]
fn synth_then_analyze_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&ticnn(&["synth", "--synthetic", "20", "--out", "corpus"], d)), 0);
    let o = ticnn(&["analyze", "--dataset", "corpus/dataset.csv", "--out", "stats"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("exclamation_count"));
    let jsonl = fs::read_to_string(d.join("stats/stats.jsonl")).unwrap();
    for line in jsonl.lines() {
        let _: serde_json::Value = serde_json::from_str(line).unwrap();
    }
    let o = ticnn(&["analyze", "--synthetic", "20", "--class", "fake"], d);
    assert!(stdout(&o).contains("real 0, fake 10"));
}
