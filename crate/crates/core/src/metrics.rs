//! Retrieval and answer metrics, set overlap and the answer-deletion tools.
//!
//! Answer matching is case-insensitive and bounded by non-alphanumeric
//! characters (or the ends of the text), so "a" never matches inside "cat".

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::ann::Run;
use crate::corpus::{Corpus, Document, QueryRecord};

/// Relevant documents per query.
pub type Qrels = BTreeMap<String, BTreeSet<String>>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("overlap of two empty sets is undefined")]
    BothEmpty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MrrReport {
    pub value: f64,
    pub per_query: BTreeMap<String, f64>,
    /// Run queries with no relevance judgments; they score 0.
    pub unjudged: Vec<String>,
}

/// Mean reciprocal rank of the first relevant document within the top `k`,
/// averaged over the queries of the run.
pub fn mrr_at_k(run: &Run, qrels: &Qrels, k: usize) -> Result<MrrReport, MetricError> {
    if k == 0 {
        return Err(MetricError::ZeroK);
    }
    let mut per_query = BTreeMap::new();
    let mut unjudged = Vec::new();
    for (qid, result) in run {
        let rr = match qrels.get(qid) {
            None => {
                unjudged.push(qid.clone());
                0.0
            }
            Some(rel) => result
                .doc_ids()
                .take(k)
                .position(|d| rel.contains(d))
                .map_or(0.0, |i| 1.0 / (i + 1) as f64),
        };
        per_query.insert(qid.clone(), rr);
    }
    let value = if per_query.is_empty() { 0.0 } else { per_query.values().sum::<f64>() / per_query.len() as f64 };
    Ok(MrrReport { value, per_query, unjudged })
}

/// `|a ∩ b|` over `|a ∪ b|`, kept as integers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Overlap {
    pub shared: usize,
    pub total: usize,
}

impl Overlap {
    pub fn value(&self) -> f64 {
        self.shared as f64 / self.total as f64
    }
}

pub fn set_overlap<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> Result<Overlap, MetricError> {
    if a.is_empty() && b.is_empty() {
        return Err(MetricError::BothEmpty);
    }
    let shared = a.intersection(b).count();
    Ok(Overlap { shared, total: a.len() + b.len() - shared })
}

/// Lowercased characters of a text, each remembering the byte range of the
/// original character it came from.
fn folded(text: &str) -> Vec<(char, usize, usize)> {
    let mut out = Vec::with_capacity(text.len());
    for (start, ch) in text.char_indices() {
        let end = start + ch.len_utf8();
        out.extend(ch.to_lowercase().map(|c| (c, start, end)));
    }
    out
}

/// Byte ranges of every token-bounded, case-insensitive occurrence of
/// `needle` in `text`, left to right and non-overlapping.
pub fn answer_spans(text: &str, needle: &str) -> Vec<(usize, usize)> {
    let needle: Vec<char> = needle.trim().chars().flat_map(char::to_lowercase).collect();
    if needle.is_empty() {
        return Vec::new();
    }
    let hay = folded(text);
    let mut spans = Vec::new();
    let mut i = 0;
    while i + needle.len() <= hay.len() {
        let matched = hay[i..i + needle.len()].iter().map(|h| h.0).eq(needle.iter().copied());
        let left_ok = i == 0 || !hay[i - 1].0.is_alphanumeric();
        let right_ok = i + needle.len() == hay.len() || !hay[i + needle.len()].0.is_alphanumeric();
        // Do not split a character whose lowercase form is several chars.
        let aligned = (i == 0 || hay[i - 1].1 != hay[i].1)
            && (i + needle.len() == hay.len() || hay[i + needle.len()].1 != hay[i + needle.len() - 1].1);
        if matched && left_ok && right_ok && aligned {
            spans.push((hay[i].1, hay[i + needle.len() - 1].2));
            i += needle.len();
        } else {
            i += 1;
        }
    }
    spans
}

pub fn contains_answer(text: &str, answer: &str) -> bool {
    !answer_spans(text, answer).is_empty()
}

pub fn contains_any_answer(text: &str, answers: &[String]) -> bool {
    answers.iter().any(|a| contains_answer(text, a))
}

/// Removes every bounded occurrence of every answer and collapses the
/// whitespace left behind. Text without an occurrence is returned unchanged.
pub fn delete_answers_from_text(text: &str, answers: &[String]) -> String {
    let mut current = String::from(text);
    loop {
        let mut spans: Vec<(usize, usize)> = answers.iter().flat_map(|a| answer_spans(&current, a)).collect();
        if spans.is_empty() {
            return current;
        }
        spans.sort_unstable();
        let mut kept = String::with_capacity(current.len());
        let mut cursor = 0;
        for (s, e) in spans {
            if s >= cursor {
                kept.push_str(&current[cursor..s]);
                kept.push(' ');
                cursor = e;
            } else if e > cursor {
                cursor = e;
            }
        }
        kept.push_str(&current[cursor..]);
        current = kept.split_whitespace().collect::<Vec<_>>().join(" ");
    }
}

/// Copy of `doc` with the query's gold answers deleted from title and text.
pub fn delete_answer_spans(doc: &Document, answers: &[String]) -> Document {
    Document {
        id: doc.id.clone(),
        title: doc.title.as_ref().map(|t| delete_answers_from_text(t, answers)),
        text: delete_answers_from_text(&doc.text, answers),
    }
}

/// Per-query view of a corpus with that query's answers deleted. The shared
/// corpus is left untouched; a document emptied by deletion keeps a single
/// placeholder space so the corpus invariants still hold.
pub fn delete_answer_spans_corpus(corpus: &Corpus, query: &QueryRecord) -> Corpus {
    let docs = corpus
        .iter()
        .map(|d| {
            let mut out = delete_answer_spans(d, &query.gold_answers);
            if out.text.trim().is_empty() {
                out.text = String::from("-");
            }
            out
        })
        .collect();
    Corpus::new(docs, corpus.source_label.clone()).expect("ids are unchanged")
}

/// How predictions are compared with gold answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnswerMode {
    /// Prediction is an option letter compared with the first gold answer.
    MultiChoice,
    /// Prediction is correct if it contains any gold answer.
    OpenQa,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    pub accuracy: f64,
    pub per_query: BTreeMap<String, bool>,
    /// Queries without a prediction; they count as incorrect.
    pub missing: Vec<String>,
}

pub fn is_correct(prediction: &str, query: &QueryRecord, mode: AnswerMode) -> bool {
    match mode {
        AnswerMode::MultiChoice => query
            .gold_answers
            .first()
            .is_some_and(|g| g.trim().eq_ignore_ascii_case(prediction.trim())),
        AnswerMode::OpenQa => contains_any_answer(prediction, &query.gold_answers),
    }
}

pub fn answer_accuracy(
    predictions: &BTreeMap<String, String>,
    queries: &[QueryRecord],
    mode: AnswerMode,
) -> AccuracyReport {
    let mut per_query = BTreeMap::new();
    let mut missing = Vec::new();
    for q in queries {
        let ok = match predictions.get(&q.id) {
            Some(p) => is_correct(p, q, mode),
            None => {
                missing.push(q.id.clone());
                false
            }
        };
        per_query.insert(q.id.clone(), ok);
    }
    let correct = per_query.values().filter(|&&c| c).count();
    let accuracy = if queries.is_empty() { 0.0 } else { correct as f64 / queries.len() as f64 };
    AccuracyReport { accuracy, per_query, missing }
}

/// Fraction of queries whose top `top` retrieved documents contain a gold
/// answer span.
pub fn exact_match_rate(run: &Run, corpus: &Corpus, queries: &[QueryRecord], top: usize) -> Result<f64, MetricError> {
    if top == 0 {
        return Err(MetricError::ZeroK);
    }
    if queries.is_empty() {
        return Ok(0.0);
    }
    let hits = queries
        .iter()
        .filter(|q| {
            run.get(&q.id).is_some_and(|r| {
                r.doc_ids()
                    .take(top)
                    .filter_map(|id| corpus.get(id))
                    .any(|d| contains_any_answer(&d.full_text(), &q.gold_answers))
            })
        })
        .count();
    Ok(hits as f64 / queries.len() as f64)
}
