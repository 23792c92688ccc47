use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use aar::formats::{
    load_corpus, load_queries, load_query_sets, log_lines, read_fidatt, read_instances, read_qrels, read_run_file,
    read_train_log, write_corpus, write_fidatt, write_instances, write_qrels, write_queries, write_run_file,
    write_train_log, LogLine,
};
use aar::AarError;
use aar_core::metrics::Qrels;
use aar_core::reader::FidAttRecord;
use aar_core::trainer::{LogRecord, RefreshRecord, TrainLog, TrainingInstance};
use aar_core::{Corpus, Document, QueryRecord, RetrievalResult, Run, ScoredDoc, TokenSequence};
use proptest::prelude::*;
use tempfile::TempDir;

fn put(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, text).unwrap();
    path
}

fn message(e: AarError) -> String {
    e.to_string()
}

#[test]
fn corpus_lines_keep_file_order() {
    let dir = TempDir::new().unwrap();
    let path = put(&dir, "c.jsonl", "{\"id\":\"d1\",\"text\":\"alpha\"}\n{\"id\":\"d2\",\"text\":\"beta\"}\n");
    let corpus = load_corpus(&path).unwrap();
    let ids: Vec<&str> = corpus.iter().map(|d| d.id.as_str()).collect();
    assert_eq!(ids, ["d1", "d2"]);
}

#[test]
fn empty_corpus_file_is_an_empty_corpus() {
    let dir = TempDir::new().unwrap();
    assert!(load_corpus(&put(&dir, "c.jsonl", "")).unwrap().is_empty());
}

#[test]
fn duplicate_document_is_reported_at_its_line() {
    let dir = TempDir::new().unwrap();
    let text = "{\"id\":\"d1\",\"text\":\"a\"}\n{\"id\":\"d2\",\"text\":\"b\"}\n{\"id\":\"d1\",\"text\":\"c\"}\n";
    let err = load_corpus(&put(&dir, "c.jsonl", text)).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    let msg = message(err);
    assert!(msg.contains(":3:"), "{msg}");
    assert!(msg.contains("d1"), "{msg}");
}

#[test]
fn malformed_json_names_the_line() {
    let dir = TempDir::new().unwrap();
    let err = load_corpus(&put(&dir, "c.jsonl", "{\"id\":\"d1\",\"text\":\"a\"}\n{oops\n")).unwrap_err();
    assert!(message(err).contains(":2:"));
}

#[test]
fn corpus_round_trip_with_titles() {
    let dir = TempDir::new().unwrap();
    let docs = vec![Document::new("a", "first").with_title("One"), Document::new("b", "second")];
    let corpus = Corpus::new(docs, "c").unwrap();
    let path = dir.path().join("c.jsonl");
    write_corpus(&corpus, &path).unwrap();
    assert_eq!(load_corpus(&path).unwrap().documents(), corpus.documents());
}

#[test]
fn query_sets_concatenate_and_keep_tags() {
    let dir = TempDir::new().unwrap();
    let a = put(&dir, "mmlu.jsonl", "{\"id\":\"a1\",\"text\":\"x\"}\n{\"id\":\"a2\",\"text\":\"y\"}\n{\"id\":\"a3\",\"text\":\"z\"}\n");
    let b = put(&dir, "b.jsonl", "{\"id\":\"b1\",\"text\":\"x\",\"task_tag\":\"popqa\",\"human_positive_ids\":[\"d9\"]}\n{\"id\":\"b2\",\"text\":\"y\"}\n");
    let all = load_query_sets(&[a, b]).unwrap();
    assert_eq!(all.len(), 5);
    assert_eq!(all[0].task_tag, "mmlu");
    assert_eq!(all[4].task_tag, "popqa");
    assert_eq!(all[3].human_positive_ids.iter().collect::<Vec<_>>(), ["d9"]);
}

#[test]
fn shared_query_id_names_both_files() {
    let dir = TempDir::new().unwrap();
    let a = put(&dir, "first.jsonl", "{\"id\":\"q1\",\"text\":\"x\"}\n");
    let b = put(&dir, "second.jsonl", "{\"id\":\"q1\",\"text\":\"y\"}\n");
    let msg = message(load_query_sets(&[a, b]).unwrap_err());
    assert!(msg.contains("first.jsonl") && msg.contains("second.jsonl"), "{msg}");
}

#[test]
fn conflicting_task_tags_are_rejected() {
    let dir = TempDir::new().unwrap();
    let path = put(&dir, "q.jsonl", "{\"id\":\"q1\",\"text\":\"x\",\"task_tag\":\"a\"}\n{\"id\":\"q2\",\"text\":\"y\",\"task_tag\":\"b\"}\n");
    assert!(message(load_queries(&path).unwrap_err()).contains(":2:"));
}

#[test]
fn queries_round_trip() {
    let dir = TempDir::new().unwrap();
    let q = QueryRecord {
        gold_answers: vec!["B".into()],
        human_positive_ids: ["d1".to_string(), "d2".to_string()].into(),
        task_tag: "mmlu".into(),
        choices: vec!["w".into(), "x".into(), "y".into(), "z".into()],
        ..QueryRecord::new("q1", "which?")
    };
    let path = dir.path().join("q.jsonl");
    write_queries(std::slice::from_ref(&q), &path).unwrap();
    assert_eq!(load_queries(&path).unwrap(), [q]);
}

fn result(docs: &[(&str, f64)]) -> RetrievalResult {
    RetrievalResult {
        entries: docs.iter().map(|(d, s)| ScoredDoc { doc_id: d.to_string(), score: *s }).collect(),
        requested_k: docs.len(),
    }
}

#[test]
fn run_file_lines() {
    let dir = TempDir::new().unwrap();
    let run: Run = [("q1".to_string(), result(&[("dA", 2.0), ("dB", 1.5)]))].into();
    let path = dir.path().join("run.txt");
    write_run_file(&run, "tag", &path).unwrap();
    assert_eq!(fs::read_to_string(&path).unwrap(), "q1 Q0 dA 1 2.000000 tag\nq1 Q0 dB 2 1.500000 tag\n");
}

#[test]
fn run_file_rank_gap_is_an_error() {
    let dir = TempDir::new().unwrap();
    let path = put(&dir, "run.txt", "q1 Q0 dA 1 2.0 t\nq1 Q0 dB 3 1.0 t\n");
    let err = read_run_file(&path).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(message(err).contains(":2:"));
}

#[test]
fn run_file_order_and_columns_are_checked() {
    let dir = TempDir::new().unwrap();
    assert!(read_run_file(&put(&dir, "a.txt", "q1 Q0 dA 1 1.0 t\nq1 Q0 dB 2 2.0 t\n")).is_err());
    assert!(read_run_file(&put(&dir, "b.txt", "q1 Q0 dB 1 1.0 t\nq1 Q0 dA 2 1.0 t\n")).is_err());
    assert!(read_run_file(&put(&dir, "c.txt", "q1 Q0 dA 1 1.0\n")).is_err());
    assert!(read_run_file(&put(&dir, "d.txt", "q1 X dA 1 1.0 t\n")).is_err());
}

#[test]
fn qrels_round_trip_and_zero_relevance() {
    let dir = TempDir::new().unwrap();
    let qrels: Qrels = [("q1".to_string(), ["d1".to_string(), "d2".to_string()].into())].into();
    let path = dir.path().join("qrels.txt");
    write_qrels(&qrels, &path).unwrap();
    assert_eq!(read_qrels(&path).unwrap(), qrels);
    let zero = read_qrels(&put(&dir, "z.txt", "q1 0 d1 0\nq1 0 d2 2\n")).unwrap();
    assert_eq!(zero["q1"].iter().collect::<Vec<_>>(), ["d2"]);
}

#[test]
fn fidatt_round_trip_is_exact() {
    let dir = TempDir::new().unwrap();
    let records = vec![
        FidAttRecord { query_id: "q1".into(), scores: vec![("d1".into(), 0.1 + 0.2), ("d2".into(), 1.0 / 3.0)] },
        FidAttRecord { query_id: "q2".into(), scores: vec![("d3".into(), 1e-17)] },
    ];
    let path = dir.path().join("f.txt");
    write_fidatt(&records, &path).unwrap();
    assert_eq!(read_fidatt(&path).unwrap(), records);
}

#[test]
fn instances_round_trip_and_overlap_check() {
    let dir = TempDir::new().unwrap();
    let inst = TrainingInstance {
        query_id: "q1".into(),
        query_tokens: TokenSequence::new(vec![4, 1, 4]),
        positives: ["d1".to_string()].into(),
        negatives: vec!["d3".into(), "d2".into()],
    };
    let path = dir.path().join("i.jsonl");
    write_instances(std::slice::from_ref(&inst), &path).unwrap();
    assert_eq!(read_instances(&path).unwrap(), [inst]);
    let bad = put(&dir, "bad.jsonl", "{\"query_id\":\"q\",\"query_tokens\":[1],\"positives\":[\"d1\"],\"negatives\":[\"d1\"]}\n");
    assert!(read_instances(&bad).is_err());
}

#[test]
fn train_log_round_trip_orders_refreshes_after_their_step() {
    let dir = TempDir::new().unwrap();
    let rec = |step, refresh_id| LogRecord { step, epoch: 0, loss: 0.5, refresh_id, mrr_at_10: 0.25 };
    let log = TrainLog {
        records: vec![rec(1, 0), rec(2, 0), rec(3, 1)],
        refreshes: vec![
            RefreshRecord { refresh_id: 0, step: 0, mrr_at_10: 0.25 },
            RefreshRecord { refresh_id: 1, step: 2, mrr_at_10: 0.5 },
        ],
    };
    let settings = BTreeMap::from([("lr".to_string(), "5e-6".to_string())]);
    let path = dir.path().join("log.jsonl");
    write_train_log(&log, 9, 1234, &settings, &path).unwrap();
    let lines = read_train_log(&path).unwrap();
    assert_eq!(lines, log_lines(&log, 9, 1234, &settings));
    let kinds: Vec<&str> = lines
        .iter()
        .map(|l| match l {
            LogLine::Header { .. } => "header",
            LogLine::Config { .. } => "config",
            LogLine::Step { .. } => "step",
            LogLine::Refresh { .. } => "refresh",
        })
        .collect();
    assert_eq!(kinds, ["header", "config", "refresh", "step", "step", "refresh", "step"]);
}

#[test]
fn missing_file_is_reported_with_its_path() {
    let err = load_corpus(Path::new("/nonexistent/corpus.jsonl")).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(message(err).contains("/nonexistent/corpus.jsonl"));
}

fn run_strategy() -> impl Strategy<Value = Run> {
    let entries = prop::collection::btree_map("[a-z][a-z0-9]{0,5}", -1.0e6f64..1.0e6, 1..8);
    prop::collection::btree_map("q[0-9]{1,3}", entries, 0..12).prop_map(|queries| {
        queries
            .into_iter()
            .map(|(qid, docs)| {
                let mut entries: Vec<ScoredDoc> = docs.into_iter().map(|(doc_id, score)| ScoredDoc { doc_id, score }).collect();
                entries.sort_by(aar_core::ann::rank_order);
                let requested_k = entries.len();
                (qid, RetrievalResult { entries, requested_k })
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn run_files_round_trip(run in run_strategy()) {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("run.txt");
        write_run_file(&run, "p", &path).unwrap();
        prop_assert_eq!(read_run_file(&path).unwrap(), run);
    }
}
