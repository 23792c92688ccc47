//! Documents, corpora and query records.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use libm::log;
use thiserror::Error;

use crate::tokenizer::{tokenize, TokenizerConfig};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub title: Option<String>,
    pub text: String,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self { id: id.into(), title: None, text: text.into() }
    }

    pub fn with_title(mut self, title: impl Into<String>) -> Self {
        self.title = Some(title.into());
        self
    }

    /// Title and text as the reader sees them; a missing title renders empty.
    pub fn full_text(&self) -> String {
        match self.title.as_deref() {
            Some(t) if !t.is_empty() => format!("{t} {}", self.text),
            _ => self.text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CorpusError {
    #[error("document {index}: empty id")]
    EmptyId { index: usize },
    #[error("document {id:?}: text is empty")]
    EmptyText { id: String },
    #[error("duplicate document id {id:?} at position {index}")]
    DuplicateId { id: String, index: usize },
    #[error("query {index}: empty id")]
    EmptyQueryId { index: usize },
    #[error("duplicate query id {id:?}")]
    DuplicateQueryId { id: String },
}

/// Ordered, id-unique collection of documents.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    documents: Vec<Document>,
    positions: BTreeMap<String, usize>,
    pub source_label: String,
}

impl Corpus {
    pub fn new(documents: Vec<Document>, source_label: impl Into<String>) -> Result<Self, CorpusError> {
        let mut positions = BTreeMap::new();
        for (index, doc) in documents.iter().enumerate() {
            if doc.id.is_empty() {
                return Err(CorpusError::EmptyId { index });
            }
            if doc.text.trim().is_empty() {
                return Err(CorpusError::EmptyText { id: doc.id.clone() });
            }
            if positions.insert(doc.id.clone(), index).is_some() {
                return Err(CorpusError::DuplicateId { id: doc.id.clone(), index });
            }
        }
        Ok(Self { documents, positions, source_label: source_label.into() })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.positions.get(id).map(|&i| &self.documents[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.positions.contains_key(id)
    }

    pub fn iter(&self) -> core::slice::Iter<'_, Document> {
        self.documents.iter()
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a Document;
    type IntoIter = core::slice::Iter<'a, Document>;

    fn into_iter(self) -> Self::IntoIter {
        self.documents.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct QueryRecord {
    pub id: String,
    pub text: String,
    pub gold_answers: Vec<String>,
    pub human_positive_ids: BTreeSet<String>,
    pub task_tag: String,
    /// Answer options for multiple-choice tasks; empty for open QA.
    pub choices: Vec<String>,
}

impl QueryRecord {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self { id: id.into(), text: text.into(), ..Self::default() }
    }
}

/// Smoothed inverse document frequency `ln((n + 1) / (df + 1))` of every
/// token id under `tok`. Ids absent from the corpus carry no evidence and
/// get 0.
pub fn idf_weights(corpus: &Corpus, tok: &TokenizerConfig) -> Vec<f64> {
    let mut df = vec![0usize; tok.vocab_size as usize];
    for doc in corpus {
        let ids: BTreeSet<u32> = tokenize(&doc.full_text(), tok).ids.into_iter().collect();
        for id in ids {
            df[id as usize] += 1;
        }
    }
    let n = corpus.len() as f64;
    df.into_iter().map(|d| if d == 0 { 0.0 } else { log((n + 1.0) / (d as f64 + 1.0)) }).collect()
}

/// Checks the query-set invariants: non-empty and unique ids.
pub fn validate_queries(queries: &[QueryRecord]) -> Result<(), CorpusError> {
    let mut seen = BTreeSet::new();
    for (index, q) in queries.iter().enumerate() {
        if q.id.is_empty() {
            return Err(CorpusError::EmptyQueryId { index });
        }
        if !seen.insert(q.id.as_str()) {
            return Err(CorpusError::DuplicateQueryId { id: q.id.clone() });
        }
    }
    Ok(())
}
