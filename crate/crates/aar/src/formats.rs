//! Line-oriented interchange formats.
//!
//! | file | layout |
//! |---|---|
//! | corpus | JSON lines `{"id", "title"?, "text"}` |
//! | queries | JSON lines `{"id", "text", "gold_answers", "human_positive_ids", "task_tag"?, "choices"?}` |
//! | run | `query_id Q0 doc_id rank score run_tag` |
//! | qrels | `query_id 0 doc_id relevance` |
//! | FiDAtt | `query_id doc_id score` |
//! | instances | JSON lines `{"query_id", "query_tokens", "positives", "negatives"}` |
//! | training log | JSON lines, a header record then one record per step and refresh |

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use aar_core::metrics::Qrels;
use aar_core::reader::FidAttRecord;
use aar_core::trainer::{TrainLog, TrainingInstance};
use aar_core::{Corpus, Document, QueryRecord, RetrievalResult, Run, ScoredDoc, TokenSequence};
use serde::{Deserialize, Serialize};

use crate::error::{AarError, Result};

fn open_lines(path: &Path) -> Result<impl Iterator<Item = (usize, std::io::Result<String>)>> {
    let file = fs::File::open(path).map_err(|e| AarError::io(path, e))?;
    Ok(BufReader::new(file).lines().enumerate().map(|(i, l)| (i + 1, l)))
}

/// Writes `contents` to `path`, creating parent directories.
pub fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| AarError::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| AarError::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(contents).and_then(|_| w.flush()).map_err(|e| AarError::io(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(&r).expect("plain records serialize"));
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>> {
    let mut out = Vec::new();
    for (n, line) in open_lines(path)? {
        let line = line.map_err(|e| AarError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| AarError::data_at(path, n, e))?;
        out.push((n, rec));
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct DocLine {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    title: Option<String>,
    text: String,
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let mut docs = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (n, line) in read_jsonl::<DocLine>(path)? {
        if line.id.is_empty() {
            return Err(AarError::data_at(path, n, "empty document id"));
        }
        if line.text.trim().is_empty() {
            return Err(AarError::data_at(path, n, format!("document {:?} has empty text", line.id)));
        }
        if let Some(first) = seen.insert(line.id.clone(), n) {
            return Err(AarError::data_at(path, n, format!("duplicate document id {:?} (first on line {first})", line.id)));
        }
        docs.push(Document { id: line.id, title: line.title, text: line.text });
    }
    let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(Corpus::new(docs, label)?)
}

pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    write_jsonl(
        path,
        corpus.iter().map(|d| DocLine { id: d.id.clone(), title: d.title.clone(), text: d.text.clone() }),
    )
}

#[derive(Serialize, Deserialize)]
struct QueryLine {
    id: String,
    text: String,
    #[serde(default)]
    gold_answers: Vec<String>,
    #[serde(default)]
    human_positive_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    task_tag: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    choices: Vec<String>,
}

/// Loads one query file. Records take the file's task tag: the first tag
/// found in the file, or the file stem when no record names one.
pub fn load_queries(path: &Path) -> Result<Vec<QueryRecord>> {
    let lines = read_jsonl::<QueryLine>(path)?;
    let file_tag = lines
        .iter()
        .map(|(_, q)| q.task_tag.clone())
        .find(|t| !t.is_empty())
        .unwrap_or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
    let mut out = Vec::with_capacity(lines.len());
    let mut seen = BTreeSet::new();
    for (n, q) in lines {
        if q.id.is_empty() {
            return Err(AarError::data_at(path, n, "empty query id"));
        }
        if !q.task_tag.is_empty() && q.task_tag != file_tag {
            return Err(AarError::data_at(path, n, format!("task_tag {:?} differs from the file's {file_tag:?}", q.task_tag)));
        }
        if !seen.insert(q.id.clone()) {
            return Err(AarError::data_at(path, n, format!("duplicate query id {:?}", q.id)));
        }
        out.push(QueryRecord {
            id: q.id,
            text: q.text,
            gold_answers: q.gold_answers,
            human_positive_ids: q.human_positive_ids.into_iter().collect(),
            task_tag: file_tag.clone(),
            choices: q.choices,
        });
    }
    Ok(out)
}

/// Concatenates several query files, keeping each file's task tag. Query ids
/// must be unique across all files.
pub fn load_query_sets<P: AsRef<Path>>(paths: &[P]) -> Result<Vec<QueryRecord>> {
    let mut out = Vec::new();
    let mut owner: BTreeMap<String, &Path> = BTreeMap::new();
    for path in paths {
        let path = path.as_ref();
        for q in load_queries(path)? {
            if let Some(first) = owner.insert(q.id.clone(), path) {
                return Err(AarError::Data(format!(
                    "query id {:?} appears in both {} and {}",
                    q.id,
                    first.display(),
                    path.display()
                )));
            }
            out.push(q);
        }
    }
    Ok(out)
}

pub fn write_queries(queries: &[QueryRecord], path: &Path) -> Result<()> {
    write_jsonl(
        path,
        queries.iter().map(|q| QueryLine {
            id: q.id.clone(),
            text: q.text.clone(),
            gold_answers: q.gold_answers.clone(),
            human_positive_ids: q.human_positive_ids.iter().cloned().collect(),
            task_tag: q.task_tag.clone(),
            choices: q.choices.clone(),
        }),
    )
}

/// Six decimals when that is lossless, otherwise the shortest exact form.
pub fn format_score(score: f64) -> String {
    let fixed = format!("{score:.6}");
    if fixed.parse::<f64>() == Ok(score) {
        fixed
    } else {
        format!("{score:?}")
    }
}

pub fn write_run_file(run: &Run, run_tag: &str, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (qid, result) in run {
        for (i, e) in result.entries.iter().enumerate() {
            writeln!(out, "{qid} Q0 {} {} {} {run_tag}", e.doc_id, i + 1, format_score(e.score)).expect("string write");
        }
    }
    write_file(path, out.as_bytes())
}

/// Reads a run file, checking that ranks run 1, 2, … per query and that the
/// ordering is by descending score, ties by ascending document id.
pub fn read_run_file(path: &Path) -> Result<Run> {
    let mut run = Run::new();
    for (n, line) in open_lines(path)? {
        let line = line.map_err(|e| AarError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let [qid, q0, doc, rank, score, _tag] = cols[..] else {
            return Err(AarError::data_at(path, n, format!("expected 6 columns, found {}", cols.len())));
        };
        if q0 != "Q0" {
            return Err(AarError::data_at(path, n, format!("second column must be Q0, found {q0:?}")));
        }
        let rank: usize = rank.parse().map_err(|_| AarError::data_at(path, n, format!("bad rank {rank:?}")))?;
        let score: f64 = score.parse().map_err(|_| AarError::data_at(path, n, format!("bad score {score:?}")))?;
        if !score.is_finite() {
            return Err(AarError::data_at(path, n, "non-finite score"));
        }
        let result = run.entry(qid.to_string()).or_insert_with(|| RetrievalResult { entries: Vec::new(), requested_k: 0 });
        let expected = result.entries.len() + 1;
        if rank != expected {
            return Err(AarError::data_at(path, n, format!("query {qid}: rank {rank} where {expected} was expected")));
        }
        let entry = ScoredDoc { doc_id: doc.to_string(), score };
        if let Some(prev) = result.entries.last() {
            if aar_core::ann::rank_order(prev, &entry) != std::cmp::Ordering::Less {
                return Err(AarError::data_at(path, n, format!("query {qid}: rank {rank} is out of order")));
            }
        }
        result.entries.push(entry);
        result.requested_k = result.entries.len();
    }
    Ok(run)
}

pub fn read_qrels(path: &Path) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for (n, line) in open_lines(path)? {
        let line = line.map_err(|e| AarError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let [qid, _, doc, rel] = cols[..] else {
            return Err(AarError::data_at(path, n, format!("expected 4 columns, found {}", cols.len())));
        };
        let rel: i64 = rel.parse().map_err(|_| AarError::data_at(path, n, format!("bad relevance {rel:?}")))?;
        let docs = qrels.entry(qid.to_string()).or_default();
        if rel > 0 {
            docs.insert(doc.to_string());
        }
    }
    Ok(qrels)
}

pub fn write_qrels(qrels: &Qrels, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (qid, docs) in qrels {
        for d in docs {
            writeln!(out, "{qid} 0 {d} 1").expect("string write");
        }
    }
    write_file(path, out.as_bytes())
}

/// Human positives of a query set as qrels.
pub fn qrels_from_queries(queries: &[QueryRecord]) -> Qrels {
    queries
        .iter()
        .filter(|q| !q.human_positive_ids.is_empty())
        .map(|q| (q.id.clone(), q.human_positive_ids.clone()))
        .collect()
}

pub fn write_fidatt(records: &[FidAttRecord], path: &Path) -> Result<()> {
    let mut out = String::new();
    for r in records {
        for (doc, s) in &r.scores {
            writeln!(out, "{} {doc} {s:?}", r.query_id).expect("string write");
        }
    }
    write_file(path, out.as_bytes())
}

/// Reads FiDAtt lines back into per-query records, in file order.
pub fn read_fidatt(path: &Path) -> Result<Vec<FidAttRecord>> {
    let mut out: Vec<FidAttRecord> = Vec::new();
    for (n, line) in open_lines(path)? {
        let line = line.map_err(|e| AarError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let [qid, doc, score] = cols[..] else {
            return Err(AarError::data_at(path, n, format!("expected 3 columns, found {}", cols.len())));
        };
        let score: f64 = score.parse().map_err(|_| AarError::data_at(path, n, format!("bad score {score:?}")))?;
        match out.last_mut() {
            Some(r) if r.query_id == qid => r.scores.push((doc.to_string(), score)),
            _ => out.push(FidAttRecord { query_id: qid.to_string(), scores: vec![(doc.to_string(), score)] }),
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct InstanceLine {
    query_id: String,
    query_tokens: Vec<u32>,
    positives: Vec<String>,
    negatives: Vec<String>,
}

pub fn write_instances(instances: &[TrainingInstance], path: &Path) -> Result<()> {
    write_jsonl(
        path,
        instances.iter().map(|i| InstanceLine {
            query_id: i.query_id.clone(),
            query_tokens: i.query_tokens.ids.clone(),
            positives: i.positives.iter().cloned().collect(),
            negatives: i.negatives.clone(),
        }),
    )
}

pub fn read_instances(path: &Path) -> Result<Vec<TrainingInstance>> {
    let mut out = Vec::new();
    for (n, i) in read_jsonl::<InstanceLine>(path)? {
        let positives: BTreeSet<String> = i.positives.into_iter().collect();
        if positives.is_empty() {
            return Err(AarError::data_at(path, n, format!("query {}: no positives", i.query_id)));
        }
        if let Some(d) = i.negatives.iter().find(|d| positives.contains(*d)) {
            return Err(AarError::data_at(path, n, format!("query {}: {d} is both positive and negative", i.query_id)));
        }
        out.push(TrainingInstance {
            query_id: i.query_id,
            query_tokens: TokenSequence::new(i.query_tokens),
            positives,
            negatives: i.negatives,
        });
    }
    Ok(out)
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogLine {
    /// First line of every log; the only one carrying a timestamp.
    Header { started_unix: u64, seed: u64 },
    /// The resolved settings the run was trained with.
    Config { settings: BTreeMap<String, String> },
    Step { step: u64, epoch: usize, loss: f64, refresh_id: usize, mrr_at_10: f64 },
    Refresh { refresh_id: usize, step: u64, mrr_at_10: f64 },
}

/// Log lines in order: the header, the settings, the initial refresh, then
/// every step followed by the refreshes it triggered.
pub fn log_lines(
    log: &TrainLog,
    seed: u64,
    started_unix: u64,
    settings: &BTreeMap<String, String>,
) -> Vec<LogLine> {
    let refresh = |r: &aar_core::trainer::RefreshRecord| LogLine::Refresh {
        refresh_id: r.refresh_id,
        step: r.step,
        mrr_at_10: r.mrr_at_10,
    };
    let mut out = vec![LogLine::Header { started_unix, seed }, LogLine::Config { settings: settings.clone() }];
    let mut refreshes = log.refreshes.iter().peekable();
    while let Some(r) = refreshes.next_if(|r| r.step == 0) {
        out.push(refresh(r));
    }
    for rec in &log.records {
        out.push(LogLine::Step {
            step: rec.step,
            epoch: rec.epoch,
            loss: rec.loss,
            refresh_id: rec.refresh_id,
            mrr_at_10: rec.mrr_at_10,
        });
        while let Some(r) = refreshes.next_if(|r| r.step <= rec.step) {
            out.push(refresh(r));
        }
    }
    out.extend(refreshes.map(refresh));
    out
}

pub fn write_train_log(
    log: &TrainLog,
    seed: u64,
    started_unix: u64,
    settings: &BTreeMap<String, String>,
    path: &Path,
) -> Result<()> {
    write_jsonl(path, log_lines(log, seed, started_unix, settings))
}

pub fn read_train_log(path: &Path) -> Result<Vec<LogLine>> {
    Ok(read_jsonl(path)?.into_iter().map(|(_, l)| l).collect())
}
