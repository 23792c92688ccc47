//! Inner-product nearest-neighbour index over document embeddings.
//!
//! Two modes share one search path: `Exact` scans every vector, `Ivf`
//! partitions vectors with k-means and scans only the lists of the `n_probe`
//! centroids with the highest inner product against the query. Results are
//! ordered by descending score, ties by ascending document id.

pub mod kmeans;

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use thiserror::Error;

use crate::corpus::Corpus;
use crate::encoder::EncoderParams;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IndexError {
    #[error("cannot build an index over an empty corpus")]
    EmptyCorpus,
    #[error("search on an empty index")]
    EmptyIndex,
    #[error("n_lists = {n_lists} exceeds corpus size {count}")]
    TooManyLists { n_lists: usize, count: usize },
    #[error("n_probe = {n_probe} must be in 1..={n_lists}")]
    InvalidProbe { n_probe: usize, n_lists: usize },
    #[error("duplicate document id {0:?} in index")]
    DuplicateId(String),
    #[error("vector dimension mismatch: index has {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{rows} vector rows for {ids} ids")]
    RowCountMismatch { rows: usize, ids: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("invalid IVF section: {0}")]
    InvalidIvf(&'static str),
}

/// Requested index layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexMode {
    Exact,
    Ivf { n_lists: usize, n_probe: usize },
}

/// Inverted lists of an IVF index.
#[derive(Debug, Clone, PartialEq)]
pub struct IvfLists {
    pub n_lists: usize,
    pub n_probe: usize,
    pub centroids: Vec<f32>,
    pub assignments: Vec<u32>,
    members: Vec<Vec<u32>>,
}

impl IvfLists {
    pub fn new(
        n_lists: usize,
        n_probe: usize,
        centroids: Vec<f32>,
        assignments: Vec<u32>,
        dim: usize,
    ) -> Result<Self, IndexError> {
        if n_probe == 0 || n_probe > n_lists {
            return Err(IndexError::InvalidProbe { n_probe, n_lists });
        }
        if centroids.len() != n_lists * dim {
            return Err(IndexError::InvalidIvf("centroid block has the wrong size"));
        }
        if !centroids.iter().all(|c| c.is_finite()) {
            return Err(IndexError::InvalidIvf("non-finite centroid"));
        }
        let mut members = alloc::vec![Vec::new(); n_lists];
        for (row, &list) in assignments.iter().enumerate() {
            members
                .get_mut(list as usize)
                .ok_or(IndexError::InvalidIvf("assignment names a missing list"))?
                .push(row as u32);
        }
        Ok(Self { n_lists, n_probe, centroids, assignments, members })
    }

    pub fn list(&self, i: usize) -> &[u32] {
        &self.members[i]
    }

    /// Copy with a different probe count.
    pub fn with_probe(&self, n_probe: usize) -> Result<Self, IndexError> {
        if n_probe == 0 || n_probe > self.n_lists {
            return Err(IndexError::InvalidProbe { n_probe, n_lists: self.n_lists });
        }
        Ok(Self { n_probe, ..self.clone() })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
}

/// Ranked top-k list for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub entries: Vec<ScoredDoc>,
    pub requested_k: usize,
}

impl RetrievalResult {
    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }
}

/// Retrieval results keyed by query id.
pub type Run = alloc::collections::BTreeMap<String, RetrievalResult>;

/// Descending score, then ascending id.
pub fn rank_order(a: &ScoredDoc, b: &ScoredDoc) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Index {
    doc_ids: Vec<String>,
    dim: usize,
    vectors: Vec<f32>,
    ivf: Option<IvfLists>,
}

impl Index {
    /// Encodes every document of `corpus` (title and text, truncated to
    /// `max_len` tokens) and indexes the embeddings in corpus order.
    pub fn build(
        corpus: &Corpus,
        params: &EncoderParams,
        max_len: usize,
        mode: IndexMode,
        seed: u64,
    ) -> Result<Self, IndexError> {
        if corpus.is_empty() {
            return Err(IndexError::EmptyCorpus);
        }
        let dim = params.embed_dim();
        let mut vectors = Vec::with_capacity(corpus.len() * dim);
        for doc in corpus {
            let emb = params.encode_text(&doc.full_text(), max_len);
            vectors.extend(emb.0.iter().map(|&x| x as f32));
        }
        let ids = corpus.iter().map(|d| d.id.clone()).collect();
        Self::from_vectors(ids, dim, vectors, mode, seed)
    }

    pub fn from_vectors(
        doc_ids: Vec<String>,
        dim: usize,
        vectors: Vec<f32>,
        mode: IndexMode,
        seed: u64,
    ) -> Result<Self, IndexError> {
        let count = doc_ids.len();
        if count == 0 {
            return Err(IndexError::EmptyCorpus);
        }
        if vectors.len() != count * dim {
            return Err(IndexError::RowCountMismatch { rows: vectors.len() / dim.max(1), ids: count });
        }
        let ivf = match mode {
            IndexMode::Exact => None,
            IndexMode::Ivf { n_lists, n_probe } => {
                if n_lists > count {
                    return Err(IndexError::TooManyLists { n_lists, count });
                }
                if n_probe == 0 || n_probe > n_lists {
                    return Err(IndexError::InvalidProbe { n_probe, n_lists });
                }
                let km = kmeans::kmeans(&vectors, dim, n_lists, kmeans::DEFAULT_ITERATIONS, seed);
                Some(IvfLists::new(n_lists, n_probe, km.centroids, km.assignments, dim)?)
            }
        };
        Self::from_parts(doc_ids, dim, vectors, ivf)
    }

    /// Reassembles an index from stored parts, checking the invariants.
    pub fn from_parts(
        doc_ids: Vec<String>,
        dim: usize,
        vectors: Vec<f32>,
        ivf: Option<IvfLists>,
    ) -> Result<Self, IndexError> {
        if vectors.len() != doc_ids.len() * dim {
            return Err(IndexError::RowCountMismatch { rows: vectors.len() / dim.max(1), ids: doc_ids.len() });
        }
        let mut seen = BTreeSet::new();
        for id in &doc_ids {
            if !seen.insert(id.as_str()) {
                return Err(IndexError::DuplicateId(id.clone()));
            }
        }
        if let Some(ivf) = &ivf {
            if ivf.assignments.len() != doc_ids.len() {
                return Err(IndexError::InvalidIvf("one assignment per vector required"));
            }
        }
        Ok(Self { doc_ids, dim, vectors, ivf })
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn vector(&self, row: usize) -> &[f32] {
        &self.vectors[row * self.dim..(row + 1) * self.dim]
    }

    pub fn ivf(&self) -> Option<&IvfLists> {
        self.ivf.as_ref()
    }

    pub fn mode(&self) -> IndexMode {
        match &self.ivf {
            None => IndexMode::Exact,
            Some(l) => IndexMode::Ivf { n_lists: l.n_lists, n_probe: l.n_probe },
        }
    }

    /// Same vectors and lists, different probe count.
    pub fn with_probe(&self, n_probe: usize) -> Result<Self, IndexError> {
        let ivf = match &self.ivf {
            Some(l) => Some(l.with_probe(n_probe)?),
            None => None,
        };
        Ok(Self { ivf, ..self.clone() })
    }

    fn row_score(&self, query: &[f64], row: usize) -> f64 {
        self.vector(row).iter().zip(query).map(|(&v, &q)| f64::from(v) * q).sum()
    }

    fn probed_lists(&self, ivf: &IvfLists, query: &[f64]) -> Vec<usize> {
        let mut lists: Vec<(usize, f64)> = ivf
            .centroids
            .chunks_exact(self.dim)
            .enumerate()
            .map(|(i, c)| (i, c.iter().zip(query).map(|(&a, &b)| f64::from(a) * b).sum()))
            .collect();
        lists.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        lists.into_iter().take(ivf.n_probe).map(|(i, _)| i).collect()
    }

    /// Top-`k` documents by inner product with `query`.
    pub fn search(&self, query: &[f64], k: usize) -> Result<RetrievalResult, IndexError> {
        if self.is_empty() {
            return Err(IndexError::EmptyIndex);
        }
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        if query.len() != self.dim {
            return Err(IndexError::DimensionMismatch { expected: self.dim, got: query.len() });
        }
        let mut scored: Vec<ScoredDoc> = match &self.ivf {
            None => (0..self.len())
                .map(|row| ScoredDoc { doc_id: self.doc_ids[row].clone(), score: self.row_score(query, row) })
                .collect(),
            Some(ivf) => self
                .probed_lists(ivf, query)
                .into_iter()
                .flat_map(|l| ivf.list(l).iter().copied())
                .map(|row| {
                    let row = row as usize;
                    ScoredDoc { doc_id: self.doc_ids[row].clone(), score: self.row_score(query, row) }
                })
                .collect(),
        };
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, rank_order);
            scored.truncate(k);
        }
        scored.sort_by(rank_order);
        Ok(RetrievalResult { entries: scored, requested_k: k })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| alloc::format!("d{i}")).collect()
    }

    #[test]
    fn top_one_of_two() {
        let idx = Index::from_vectors(ids(2), 1, vec![5.0, 3.0], IndexMode::Exact, 0).unwrap();
        let r = idx.search(&[1.0], 1).unwrap();
        assert_eq!(r.entries, vec![ScoredDoc { doc_id: "d0".into(), score: 5.0 }]);
    }

    #[test]
    fn ties_break_by_id() {
        let idx = Index::from_vectors(vec!["dB".to_string(), "dA".to_string()], 2, vec![1.0, 1.0, 1.0, 1.0], IndexMode::Exact, 0)
            .unwrap();
        let r = idx.search(&[0.5, 0.5], 2).unwrap();
        assert_eq!(r.doc_ids().collect::<Vec<_>>(), vec!["dA", "dB"]);
    }

    #[test]
    fn k_larger_than_corpus() {
        let idx = Index::from_vectors(ids(3), 1, vec![1.0, 2.0, 3.0], IndexMode::Exact, 0).unwrap();
        let r = idx.search(&[1.0], 10).unwrap();
        assert_eq!(r.entries.len(), 3);
        assert_eq!(r.requested_k, 10);
    }

    #[test]
    fn config_errors() {
        assert_eq!(
            Index::from_vectors(ids(3), 1, vec![1.0, 2.0, 3.0], IndexMode::Ivf { n_lists: 4, n_probe: 1 }, 0),
            Err(IndexError::TooManyLists { n_lists: 4, count: 3 })
        );
        assert_eq!(
            Index::from_vectors(ids(3), 1, vec![1.0, 2.0, 3.0], IndexMode::Ivf { n_lists: 2, n_probe: 3 }, 0),
            Err(IndexError::InvalidProbe { n_probe: 3, n_lists: 2 })
        );
        let idx = Index::from_vectors(ids(1), 1, vec![1.0], IndexMode::Exact, 0).unwrap();
        assert_eq!(idx.search(&[1.0], 0), Err(IndexError::ZeroK));
        assert!(matches!(idx.search(&[1.0, 2.0], 1), Err(IndexError::DimensionMismatch { .. })));
    }
}
