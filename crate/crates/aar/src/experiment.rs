//! Retrieval-augmented evaluation of readers and retrievers, and the
//! comparative experiment runner.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use aar_core::metrics::{
    answer_accuracy, delete_answer_spans, exact_match_rate, mrr_at_k, set_overlap, AccuracyReport, AnswerMode,
};
use aar_core::reader::{render_prompt, score_candidates, PromptTemplate, ReaderError};
use aar_core::trainer::TrainingInstance;
use aar_core::{Corpus, Document, EncoderParams, Index, IndexMode, QueryRecord, ReaderModel, Run};

use crate::checkpoint::{load_encoder, load_index, load_reader};
use crate::config::{answer_mode_name, read_settings, template_name, Setting, Settings};
use crate::error::{AarError, Result};
use crate::formats::{load_corpus, load_query_sets, qrels_from_queries, read_instances};

const LETTERS: [&str; 4] = ["A", "B", "C", "D"];

/// How the reader sees a query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadSettings {
    pub template: PromptTemplate,
    pub mode: AnswerMode,
    /// Retrieved documents handed to the reader; 0 reads the prompt alone.
    pub docs: usize,
    pub max_len: usize,
}

/// The reader's answer for one query given context documents. Multiple
/// choice answers are option letters; open answers are the best candidate.
pub fn predict(
    reader: &ReaderModel,
    settings: &ReadSettings,
    query: &QueryRecord,
    docs: &[Document],
) -> Result<String, ReaderError> {
    let choices = (!query.choices.is_empty()).then_some(query.choices.as_slice());
    let prompt = render_prompt(settings.template, query, choices)?;
    let scores = score_candidates(reader, &prompt, docs, &query.choices)?;
    Ok(match settings.mode {
        AnswerMode::MultiChoice => LETTERS.get(scores.best_index).copied().unwrap_or("?").to_string(),
        AnswerMode::OpenQa => query.choices[scores.best_index].clone(),
    })
}

/// Retrieves the top `k` documents for every query.
pub fn retrieve_all(
    index: &Index,
    encoder: &EncoderParams,
    queries: &[QueryRecord],
    k: usize,
    max_len: usize,
) -> Result<Run, aar_core::IndexError> {
    let mut run = Run::new();
    for q in queries {
        let emb = encoder.encode_text(&q.text, max_len);
        run.insert(q.id.clone(), index.search(&emb.0, k)?);
    }
    Ok(run)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReadOutcome {
    pub predictions: BTreeMap<String, String>,
    pub report: AccuracyReport,
}

/// Reads every query with its retrieved documents, optionally deleting the
/// query's gold answers from those documents first.
pub fn read_all(
    reader: &ReaderModel,
    settings: &ReadSettings,
    corpus: &Corpus,
    queries: &[QueryRecord],
    run: &Run,
    delete_answers: bool,
) -> Result<ReadOutcome, ReaderError> {
    let mut predictions = BTreeMap::new();
    for q in queries {
        let docs: Vec<Document> = match (settings.docs, run.get(&q.id)) {
            (0, _) | (_, None) => Vec::new(),
            (n, Some(r)) => r
                .doc_ids()
                .take(n)
                .filter_map(|id| corpus.get(id))
                .map(|d| if delete_answers { delete_answer_spans(d, &q.gold_answers) } else { d.clone() })
                .collect(),
        };
        predictions.insert(q.id.clone(), predict(reader, settings, q, &docs)?);
    }
    let report = answer_accuracy(&predictions, queries, settings.mode);
    Ok(ReadOutcome { predictions, report })
}

/// Mean per-query overlap of two positive-set maps over the queries both
/// cover. `None` when they share no query.
pub fn mean_overlap(a: &BTreeMap<String, BTreeSet<String>>, b: &BTreeMap<String, BTreeSet<String>>) -> Option<f64> {
    let values: Vec<f64> = a
        .iter()
        .filter_map(|(q, sa)| b.get(q).and_then(|sb| set_overlap(sa, sb).ok()).map(|o| o.value()))
        .collect();
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Positive sets of training instances keyed by query id.
pub fn positive_sets(instances: &[TrainingInstance]) -> BTreeMap<String, BTreeSet<String>> {
    instances.iter().map(|i| (i.query_id.clone(), i.positives.clone())).collect()
}

/// One retriever under comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    pub name: String,
    pub retriever: PathBuf,
    pub index: Option<PathBuf>,
    pub positives: Option<PathBuf>,
}

/// A parsed experiment file.
///
/// ```text
/// corpus = corpus.jsonl
/// queries = target.jsonl
/// reader = target.fid
/// retriever.union = union.enc
/// positives.union = union.instances.jsonl
/// docs = 5
/// ```
///
/// Relative paths resolve against the file's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub corpus: PathBuf,
    pub queries: Vec<PathBuf>,
    pub reader: PathBuf,
    /// Retrievers in name order; none means the reader reads alone.
    pub arms: Vec<Arm>,
    pub read: ReadSettings,
    pub delete_answers: bool,
    /// Adds the queries' human positives as a row of the overlap matrix.
    pub include_human: bool,
    pub seed: u64,
}

const SPEC_KEYS: &[&str] =
    &["corpus", "queries", "reader", "docs", "template", "answer_mode", "max_len", "delete_answers", "include_human", "seed"];

impl ExperimentSpec {
    pub fn from_settings(settings: &Settings, base: &Path) -> Result<Self> {
        let path = |s: &Setting| base.join(&s.value);
        let need = |k: &str| {
            settings.get(k).ok_or_else(|| AarError::Config(format!("experiment spec is missing {k}")))
        };
        let mut arms: BTreeMap<String, Arm> = BTreeMap::new();
        let mut extras: Vec<(&str, &str, &Setting)> = Vec::new();
        for (key, s) in settings {
            if SPEC_KEYS.contains(&key.as_str()) {
                continue;
            }
            match key.split_once('.') {
                Some((kind @ ("retriever" | "index" | "positives"), name)) if !name.is_empty() => {
                    extras.push((kind, name, s));
                }
                _ => return Err(AarError::Config(format!("{}: unknown key {key}", s.origin))),
            }
        }
        for (kind, name, s) in &extras {
            if *kind == "retriever" {
                arms.insert(
                    name.to_string(),
                    Arm { name: name.to_string(), retriever: path(s), index: None, positives: None },
                );
            }
        }
        for (kind, name, s) in extras {
            let arm = arms
                .get_mut(name)
                .ok_or_else(|| AarError::Config(format!("{}: {kind}.{name} has no retriever.{name}", s.origin)))?;
            match kind {
                "index" => arm.index = Some(path(s)),
                "positives" => arm.positives = Some(path(s)),
                _ => {}
            }
        }
        let mut read = ReadSettings { template: PromptTemplate::PopQa, mode: AnswerMode::OpenQa, docs: 3, max_len: 64 };
        let mut delete_answers = true;
        let mut include_human = true;
        let mut seed = 0;
        let bad = |k: &str, s: &Setting| AarError::Config(format!("{}: {k} = {:?} is not valid", s.origin, s.value));
        for (key, s) in settings {
            let k = key.as_str();
            match k {
                "docs" => read.docs = s.value.parse().map_err(|_| bad(k, s))?,
                "max_len" => read.max_len = s.value.parse().map_err(|_| bad(k, s))?,
                "seed" => seed = s.value.parse().map_err(|_| bad(k, s))?,
                "template" => {
                    read.template = match s.value.as_str() {
                        "popqa" => PromptTemplate::PopQa,
                        "mmlu" => PromptTemplate::Mmlu,
                        _ => return Err(bad(k, s)),
                    }
                }
                "answer_mode" => {
                    read.mode = match s.value.as_str() {
                        "open" => AnswerMode::OpenQa,
                        "choice" => AnswerMode::MultiChoice,
                        _ => return Err(bad(k, s)),
                    }
                }
                "delete_answers" | "include_human" => {
                    let v = match s.value.as_str() {
                        "true" => true,
                        "false" => false,
                        _ => return Err(bad(k, s)),
                    };
                    if k == "delete_answers" {
                        delete_answers = v;
                    } else {
                        include_human = v;
                    }
                }
                _ => {}
            }
        }
        if read.docs > 0 && arms.is_empty() {
            return Err(AarError::Config("docs > 0 needs at least one retriever.<name>".into()));
        }
        Ok(Self {
            corpus: path(need("corpus")?),
            queries: need("queries")?.value.split(',').map(|p| base.join(p.trim())).collect(),
            reader: path(need("reader")?),
            arms: arms.into_values().collect(),
            read,
            delete_answers,
            include_human,
            seed,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_settings(&read_settings(path)?, base)
    }

    fn artifact_paths(&self) -> Vec<&Path> {
        let mut out: Vec<&Path> = vec![&self.corpus, &self.reader];
        out.extend(self.queries.iter().map(PathBuf::as_path));
        for arm in &self.arms {
            out.push(&arm.retriever);
            out.extend(arm.index.as_deref());
            out.extend(arm.positives.as_deref());
        }
        out
    }

    fn snapshot(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("corpus".to_string(), self.corpus.display().to_string()),
            (
                "queries".into(),
                self.queries.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(","),
            ),
            ("reader".into(), self.reader.display().to_string()),
            ("docs".into(), self.read.docs.to_string()),
            ("template".into(), template_name(self.read.template).into()),
            ("answer_mode".into(), answer_mode_name(self.read.mode).into()),
            ("max_len".into(), self.read.max_len.to_string()),
            ("delete_answers".into(), self.delete_answers.to_string()),
            ("include_human".into(), self.include_human.to_string()),
            ("seed".into(), self.seed.to_string()),
        ];
        for arm in &self.arms {
            out.push((format!("retriever.{}", arm.name), arm.retriever.display().to_string()));
            if let Some(p) = &arm.index {
                out.push((format!("index.{}", arm.name), p.display().to_string()));
            }
            if let Some(p) = &arm.positives {
                out.push((format!("positives.{}", arm.name), p.display().to_string()));
            }
        }
        out
    }
}

/// Results of one experiment: scalar metrics, the positive-set overlap
/// matrix and per-query correctness.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub config: Vec<(String, String)>,
    pub metrics: BTreeMap<String, f64>,
    /// Row and column labels of `overlap`.
    pub overlap_labels: Vec<String>,
    pub overlap: Vec<Vec<Option<f64>>>,
    /// query id -> arm name -> answered correctly.
    pub per_query: BTreeMap<String, BTreeMap<String, bool>>,
}

impl EvalReport {
    /// Structured text: `[config]`, a machine-readable `[metrics]` block of
    /// `name = value` lines, `[overlap]` and `[per_query]` tables.
    pub fn render(&self) -> String {
        let mut out = String::from("# aar experiment report\n\n[config]\n");
        for (k, v) in &self.config {
            writeln!(out, "{k} = {v}").expect("string write");
        }
        out.push_str("\n[metrics]\n");
        for (k, v) in &self.metrics {
            writeln!(out, "{k} = {v:.6}").expect("string write");
        }
        if !self.overlap_labels.is_empty() {
            out.push_str("\n[overlap]\n");
            writeln!(out, "set {}", self.overlap_labels.join(" ")).expect("string write");
            for (label, row) in self.overlap_labels.iter().zip(&self.overlap) {
                let cells: Vec<String> =
                    row.iter().map(|c| c.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"))).collect();
                writeln!(out, "{label} {}", cells.join(" ")).expect("string write");
            }
        }
        if let Some(first) = self.per_query.values().next() {
            out.push_str("\n[per_query]\n");
            let names: Vec<&str> = first.keys().map(String::as_str).collect();
            writeln!(out, "query {}", names.join(" ")).expect("string write");
            for (q, row) in &self.per_query {
                let cells: Vec<&str> = row.values().map(|&ok| if ok { "1" } else { "0" }).collect();
                writeln!(out, "{q} {}", cells.join(" ")).expect("string write");
            }
        }
        out
    }

    /// Parses the `[metrics]` block of a rendered report.
    pub fn parse_metrics(text: &str) -> BTreeMap<String, f64> {
        let mut in_block = false;
        let mut out = BTreeMap::new();
        for line in text.lines() {
            if line.starts_with('[') {
                in_block = line == "[metrics]";
                continue;
            }
            if let (true, Some((k, v))) = (in_block, line.split_once(" = ")) {
                if let Ok(v) = v.parse() {
                    out.insert(k.to_string(), v);
                }
            }
        }
        out
    }
}

/// Runs every arm of `spec`: retrieve, read, read again with answers
/// deleted, and compare positive sets. Every input path is checked before
/// any computation starts.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<EvalReport> {
    if let Some(missing) = spec.artifact_paths().into_iter().find(|p| !p.exists()) {
        return Err(AarError::Config(format!("missing artifact {}", missing.display())));
    }
    let corpus = load_corpus(&spec.corpus)?;
    let queries = load_query_sets(&spec.queries)?;
    let reader = load_reader(&spec.reader)?;
    let mut report = EvalReport { config: spec.snapshot(), ..EvalReport::default() };
    let qrels = qrels_from_queries(&queries);
    let mut sets: Vec<(String, BTreeMap<String, BTreeSet<String>>)> = Vec::new();
    if spec.include_human && !qrels.is_empty() {
        sets.push(("human".into(), qrels.clone()));
    }

    let standalone = [Arm { name: "standalone".into(), retriever: PathBuf::new(), index: None, positives: None }];
    let arms: &[Arm] = if spec.arms.is_empty() { &standalone } else { &spec.arms };
    for arm in arms {
        let name = &arm.name;
        let run = if spec.arms.is_empty() {
            Run::new()
        } else {
            let encoder = load_encoder(&arm.retriever)?;
            let index = match &arm.index {
                Some(p) => load_index(p)?,
                None => Index::build(&corpus, &encoder, spec.read.max_len, IndexMode::Exact, spec.seed)?,
            };
            let k = spec.read.docs.max(10);
            let run = retrieve_all(&index, &encoder, &queries, k, spec.read.max_len)?;
            if !qrels.is_empty() {
                let mrr = mrr_at_k(&run, &qrels, 10)?;
                report.metrics.insert(format!("mrr_at_10.{name}"), mrr.value);
            }
            if spec.read.docs > 0 {
                let em = exact_match_rate(&run, &corpus, &queries, spec.read.docs)?;
                report.metrics.insert(format!("exact_match.{name}"), em);
            }
            run
        };
        let plain = read_all(&reader, &spec.read, &corpus, &queries, &run, false)?;
        report.metrics.insert(format!("accuracy.{name}"), plain.report.accuracy);
        if spec.delete_answers && spec.read.docs > 0 {
            let deleted = read_all(&reader, &spec.read, &corpus, &queries, &run, true)?;
            report.metrics.insert(format!("accuracy_deleted.{name}"), deleted.report.accuracy);
            report
                .metrics
                .insert(format!("deletion_drop.{name}"), plain.report.accuracy - deleted.report.accuracy);
        }
        for (q, ok) in &plain.report.per_query {
            report.per_query.entry(q.clone()).or_default().insert(name.clone(), *ok);
        }
        if let Some(p) = &arm.positives {
            sets.push((name.clone(), positive_sets(&read_instances(p)?)));
        }
    }

    report.overlap_labels = sets.iter().map(|(n, _)| n.clone()).collect();
    report.overlap = sets.iter().map(|(_, a)| sets.iter().map(|(_, b)| mean_overlap(a, b)).collect()).collect();
    for (i, (na, a)) in sets.iter().enumerate() {
        for (nb, b) in &sets[i + 1..] {
            if let Some(v) = mean_overlap(a, b) {
                report.metrics.insert(format!("overlap.{na}.{nb}"), v);
            }
        }
    }
    Ok(report)
}

