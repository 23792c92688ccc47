use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use aar::experiment::EvalReport;
use aar::formats::{read_fidatt, read_run_file, read_train_log, LogLine};
use tempfile::TempDir;

const SMALL: &[&str] = &["--set", "embed_dim=16", "--set", "epochs=1"];

fn aar(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aar"))
        .args(["--seed", "3", "--out-dir"])
        .arg(dir)
        .args(SMALL)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> String {
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(out.status.success(), "stdout:\n{stdout}\nstderr:\n{}", String::from_utf8_lossy(&out.stderr));
    stdout
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn p(path: PathBuf) -> String {
    path.display().to_string()
}

/// A small world with an initial encoder and its index.
fn world() -> (TempDir, PathBuf) {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().to_path_buf();
    ok(aar(&dir, &["synth", "--source-queries", "30", "--target-queries", "20", "--corpus-size", "200"]));
    ok(aar(&dir, &["init"]));
    ok(aar(&dir, &["index", "--corpus", &p(dir.join("corpus.jsonl")), "--encoder", &p(dir.join("encoder.aenc"))]));
    (tmp, dir)
}

#[test]
fn missing_corpus_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let out = aar(tmp.path(), &["index", "--corpus", "/nonexistent/c.jsonl", "--encoder", "/nonexistent/e.aenc"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/c.jsonl"));
}

#[test]
fn bad_arguments_and_unknown_keys_exit_2() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&aar(tmp.path(), &["index", "--bogus"])), 2);
    assert_eq!(code(&aar(tmp.path(), &["init", "--set", "no_such_key=1"])), 2);
    assert_eq!(code(&aar(tmp.path(), &["init", "--set", "lr=-1"])), 2);
}

#[test]
fn config_file_then_flags() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.conf");
    fs::write(&cfg, "# shared\nepochs = 4\nbatch_size = 2\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_aar"))
        .args(["--config", &p(cfg), "--set", "epochs=5", "--out-dir"])
        .arg(tmp.path())
        .arg("init")
        .output()
        .unwrap();
    let stdout = ok(out);
    assert!(stdout.contains("epochs = 5\n") && stdout.contains("batch_size = 2\n"), "{stdout}");
}

#[test]
fn bad_index_magic_is_a_format_error() {
    let (_tmp, dir) = world();
    let bogus = dir.join("bogus.aidx");
    fs::write(&bogus, b"NOTANINDEXFILE").unwrap();
    let out = aar(
        &dir,
        &["retrieve", "--index", &p(bogus), "--encoder", &p(dir.join("encoder.aenc")), "--queries", &p(dir.join("target.jsonl"))],
    );
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));
}

#[test]
fn ivf_flags_reach_the_snapshot() {
    let (_tmp, dir) = world();
    let ivf_dir = dir.join("ivf");
    let out = aar(
        &ivf_dir,
        &[
            "--set", "index_mode=ivf", "--set", "n_lists=4",
            "index", "--corpus", &p(dir.join("corpus.jsonl")), "--encoder", &p(dir.join("encoder.aenc")),
        ],
    );
    ok(out);
    let bytes = fs::read(ivf_dir.join("index.aidx")).unwrap();
    assert_eq!(&bytes[..8], b"AARIDX01");
    assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 1);
}

#[test]
fn retrieve_defaults_to_ten_and_handles_empty_query_files() {
    let (_tmp, dir) = world();
    let (index, encoder) = (p(dir.join("index.aidx")), p(dir.join("encoder.aenc")));
    ok(aar(&dir, &["retrieve", "--index", &index, "--encoder", &encoder, "--queries", &p(dir.join("target.jsonl"))]));
    let run = read_run_file(&dir.join("run.txt")).unwrap();
    assert_eq!(run.len(), 20);
    assert!(run.values().all(|r| r.entries.len() == 10));

    let empty = dir.join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out_dir = dir.join("empty");
    ok(aar(&out_dir, &["retrieve", "--index", &index, "--encoder", &encoder, "--queries", &p(empty)]));
    assert!(read_run_file(&out_dir.join("run.txt")).unwrap().is_empty());
}

#[test]
fn annotate_writes_one_line_per_query_and_document() {
    let (_tmp, dir) = world();
    let stdout = ok(aar(
        &dir,
        &[
            "annotate",
            "--corpus", &p(dir.join("corpus.jsonl")),
            "--queries", &p(dir.join("source.jsonl")),
            "--encoder", &p(dir.join("encoder.aenc")),
            "--reader", &p(dir.join("source.afid")),
            "--index", &p(dir.join("index.aidx")),
        ],
    ));
    let records = read_fidatt(&dir.join("fidatt.txt")).unwrap();
    assert_eq!(records.len(), 30, "{stdout}");
    assert!(records.iter().all(|r| r.scores.len() == 10));
}

#[test]
fn train_log_records_the_preset() {
    let (_tmp, dir) = world();
    let out = Command::new(env!("CARGO_BIN_EXE_aar"))
        .args(["--seed", "3", "--set", "embed_dim=16", "--out-dir"])
        .arg(&dir)
        .args([
            "train",
            "--corpus", &p(dir.join("corpus.jsonl")),
            "--queries", &p(dir.join("source.jsonl")),
            "--encoder", &p(dir.join("encoder.aenc")),
            "--reader", &p(dir.join("source.afid")),
        ])
        .output()
        .unwrap();
    let stdout = ok(out);
    assert!(stdout.contains("lr = 5e-6\n") && stdout.contains("batch_size = 8\n") && stdout.contains("epochs = 6\n"));
    let lines = read_train_log(&dir.join("train_log.jsonl")).unwrap();
    let LogLine::Config { settings } = &lines[1] else { panic!("second line is not the config: {:?}", lines[1]) };
    assert_eq!(settings["lr"], "5e-6");
    assert_eq!(settings["batch_size"], "8");
    assert_eq!(settings["epochs"], "6");
    assert!(dir.join("retriever.aenc").exists());
}

fn train_arm(dir: &Path, source: &str) -> PathBuf {
    let arm = dir.join(source);
    let set = format!("positive_source={source}");
    let common = |cmd: &str| -> Vec<String> {
        let mut v = vec!["--set".to_string(), set.clone(), cmd.to_string()];
        v.extend(["--corpus".into(), p(dir.join("corpus.jsonl")), "--queries".into(), p(dir.join("source.jsonl"))]);
        v.extend(["--encoder".into(), p(dir.join("encoder.aenc"))]);
        v
    };
    let mut annotate = common("annotate");
    annotate.extend(["--reader".into(), p(dir.join("source.afid"))]);
    ok(aar(&arm, &annotate.iter().map(String::as_str).collect::<Vec<_>>()));
    let mut train = common("train");
    train.extend(["--instances".into(), p(arm.join("instances.jsonl"))]);
    ok(aar(&arm, &train.iter().map(String::as_str).collect::<Vec<_>>()));
    arm
}

#[test]
fn experiment_compares_three_arms_and_is_reproducible() {
    let (_tmp, dir) = world();
    let mut spec = String::from("corpus = corpus.jsonl\nqueries = target.jsonl\nreader = target.afid\ndocs = 3\ninclude_human = false\n");
    for source in ["human_only", "lm_only", "union"] {
        train_arm(&dir, source);
        spec.push_str(&format!("retriever.{source} = {source}/retriever.aenc\npositives.{source} = {source}/instances.jsonl\n"));
    }
    let spec_path = dir.join("exp.conf");
    fs::write(&spec_path, spec).unwrap();
    let first = ok(aar(&dir.join("r1"), &["experiment", "--spec", &p(spec_path.clone())]));
    let second = ok(aar(&dir.join("r2"), &["experiment", "--spec", &p(spec_path)]));
    let report = fs::read_to_string(dir.join("r1/report.txt")).unwrap();
    assert_eq!(report, fs::read_to_string(dir.join("r2/report.txt")).unwrap());
    assert!(first.contains("# aar experiment report") && second.contains("# aar experiment report"));

    let metrics = EvalReport::parse_metrics(&report);
    let accuracies = metrics.keys().filter(|k| k.starts_with("accuracy.")).count();
    assert_eq!(accuracies, 3);
    let overlap = report.split("[overlap]").nth(1).unwrap().split("\n[").next().unwrap();
    let rows: Vec<&str> = overlap.lines().filter(|l| !l.trim().is_empty()).collect();
    assert_eq!(rows.len(), 4, "header plus three rows:\n{overlap}");
}

#[test]
fn standalone_reader_needs_no_retriever() {
    let (_tmp, dir) = world();
    let out = aar(
        &dir.join("alone"),
        &[
            "eval",
            "--corpus", &p(dir.join("corpus.jsonl")),
            "--queries", &p(dir.join("target.jsonl")),
            "--reader", &p(dir.join("target.afid")),
        ],
    );
    let stdout = ok(out);
    assert!(stdout.contains("accuracy.standalone"), "{stdout}");
}

#[test]
fn missing_experiment_artifact_is_a_config_error() {
    let (_tmp, dir) = world();
    let spec = dir.join("exp.conf");
    fs::write(&spec, "corpus = corpus.jsonl\nqueries = target.jsonl\nreader = nope.afid\ndocs = 0\n").unwrap();
    let out = aar(&dir, &["experiment", "--spec", &p(spec)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.afid"));
}
